use std::io::{self, Write};

use super::config::ExperimentConfig;
use super::episode::EpisodeRecord;
use crate::error::{Error, Result};

pub const HEADER: &str = "env,loss,gamma,n_samples,param,seed,episode_cost,success,failed";

/// One (cell, episode) result.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub env: String,
    pub loss: String,
    pub gamma: f64,
    pub n_samples: usize,
    /// The loss parameter; NaN for the expected cost.
    pub param: f64,
    pub seed: u64,
    pub episode_cost: f64,
    pub success: bool,
    pub failed: bool,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.env,
            self.loss,
            format_float(self.gamma),
            self.n_samples,
            format_float(self.param),
            self.seed,
            format_float(self.episode_cost),
            self.success,
            self.failed
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Config(format!("expected 9 CSV fields, got {}: {line}", fields.len())));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number {s:?}: {e}")));
        let flag = |s: &str| s.parse::<bool>().map_err(|e| Error::Config(format!("bad flag {s:?}: {e}")));
        Ok(Self {
            env: fields[0].into(),
            loss: fields[1].into(),
            gamma: float(fields[2])?,
            n_samples: fields[3].parse().map_err(|e| Error::Config(format!("bad count: {e}")))?,
            param: float(fields[4])?,
            seed: fields[5].parse().map_err(|e| Error::Config(format!("bad seed: {e}")))?,
            episode_cost: float(fields[6])?,
            success: flag(fields[7])?,
            failed: flag(fields[8])?,
        })
    }
}

/// Rows from a results file, skipping comments; the header must match
/// exactly.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => return Err(Error::Config(format!("unexpected CSV header {other:?}"))),
    }
    lines.map(CsvRow::parse).collect()
}

/// Comment lines with the config hash and the resolved config (without the
/// output path), the header, then one line per row.
pub fn write_csv<W: Write>(out: &mut W, config: &ExperimentConfig, rows: &[CsvRow]) -> io::Result<()> {
    let config = ExperimentConfig { output: None, ..config.clone() };
    writeln!(out, "# config_sha256 = {}", config.hash())?;
    for line in config.to_toml().lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_line())?;
    }
    Ok(())
}

/// Per-step trace: `t`, controls, states, cost, loss estimate, effective
/// sample size.
pub fn write_trace<W: Write>(out: &mut W, record: &EpisodeRecord) -> io::Result<()> {
    let Some(first) = record.steps.first() else {
        return writeln!(out, "t,cost,loss_estimate,ess");
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.control.len()).map(|i| format!("u{i}")));
    header.extend((0..first.state.len()).map(|i| format!("x{i}")));
    header.extend(["cost", "loss_estimate", "ess"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for s in &record.steps {
        let mut fields = vec![s.t.to_string()];
        fields.extend(s.control.iter().map(|v| format_float(*v)));
        fields.extend(s.state.iter().map(|v| format_float(*v)));
        fields.extend([s.cost, s.loss_estimate, s.effective_sample_size].map(format_float));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, f64::MIN_POSITIVE, 12345.678901234567] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn rows_round_trip() {
        let row = CsvRow {
            env: "cartpole_continuous".into(),
            loss: "expected_cost".into(),
            gamma: 0.01,
            n_samples: 1000,
            param: f64::NAN,
            seed: 42,
            episode_cost: 1234.5,
            success: true,
            failed: false,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &ExperimentConfig::default(), std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].to_line(), row.to_line());
        assert!(text.lines().next().unwrap().starts_with("# config_sha256 = "));
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_csv("env,loss\n").is_err());
        assert!(parse_csv(&format!("{HEADER},extra\n")).is_err());
    }
}
