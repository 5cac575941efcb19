use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::csv::CsvRow;
use super::episode::{run_episode, EpisodeRecord};
use super::seed;
use crate::error::{Error, Result};
use crate::updates::StepSchedule;

/// One point of the sweep grid, with its fully resolved config.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub config: ExperimentConfig,
}

/// Grid cells in row order: step size outermost, then sample count, then
/// loss parameter.
pub fn sweep_cells(config: &ExperimentConfig) -> Result<Vec<Cell>> {
    let axes = &config.sweep;
    if !axes.params.is_empty() && config.loss.parameter().is_none() {
        return Err(Error::Config(format!("loss {} has no parameter to sweep", config.loss.name())));
    }
    let gammas: Vec<StepSchedule> = if axes.gammas.is_empty() {
        vec![config.gamma.clone()]
    } else {
        axes.gammas.iter().map(|g| StepSchedule::Constant(*g)).collect()
    };
    let samples = if axes.n_samples.is_empty() { vec![config.n_samples] } else { axes.n_samples.clone() };
    let losses = if axes.params.is_empty() {
        vec![config.loss]
    } else {
        axes.params.iter().map(|p| config.loss.with_parameter(*p)).collect()
    };
    let mut cells = Vec::new();
    for gamma in &gammas {
        for &n_samples in &samples {
            for loss in &losses {
                cells.push(Cell {
                    index: cells.len(),
                    config: ExperimentConfig { gamma: gamma.clone(), n_samples, loss: *loss, ..config.clone() },
                });
            }
        }
    }
    Ok(cells)
}

/// The seed of episode `episode` in cell `cell`.
pub fn episode_seed(config: &ExperimentConfig, cell: usize, episode: usize) -> u64 {
    match config.seeds.get(episode) {
        Some(s) => *s,
        None => seed::episode_seed(config.master_seed, cell as u64, episode as u64),
    }
}

/// The CSV row of an episode outcome; an error becomes a failed row.
pub fn episode_row(config: &ExperimentConfig, seed: u64, result: &Result<EpisodeRecord>) -> CsvRow {
    let mut row = CsvRow {
        env: config.env.name().into(),
        loss: config.loss.name().into(),
        gamma: config.gamma.gamma(0),
        n_samples: config.n_samples,
        param: config.loss.parameter().unwrap_or(f64::NAN),
        seed,
        episode_cost: f64::NAN,
        success: false,
        failed: true,
    };
    if let Ok(rec) = result {
        row.episode_cost = rec.episode_cost;
        row.success = rec.success;
        row.failed = false;
    }
    row
}

pub fn run_row(config: &ExperimentConfig, seed: u64) -> CsvRow {
    episode_row(config, seed, &run_episode(config, seed))
}

/// Every (cell, episode) pair, run in parallel and returned in grid order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    let cells = sweep_cells(config)?;
    let jobs: Vec<(&Cell, usize)> = cells
        .iter()
        .flat_map(|c| (0..config.episodes).map(move |e| (c, e)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|(cell, e)| run_row(&cell.config, episode_seed(config, cell.index, *e)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{EnvKind, SweepConfig};
    use crate::losses::LossSpec;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_samples: 8,
            n_dynamics_samples: 1,
            horizon: 3,
            episode_length: 2,
            episodes: 1,
            ..ExperimentConfig::for_env(EnvKind::CartpoleContinuous)
        }
    }

    #[test]
    fn single_cell_single_row() {
        let rows = run_sweep(&tiny()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].failed);
        assert!(rows[0].param.is_nan());
    }

    #[test]
    fn rows_per_cell_and_distinct_seeds() {
        let cfg = ExperimentConfig {
            episodes: 10,
            sweep: SweepConfig { gammas: vec![0.01, 0.1], ..Default::default() },
            ..tiny()
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 20);
        let seeds: std::collections::HashSet<u64> = rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 20);
        assert!(rows[..10].iter().all(|r| r.gamma == 0.01));
    }

    #[test]
    fn failures_become_rows() {
        let cfg = ExperimentConfig {
            loss: LossSpec::ExpUtility { lambda: 1.0 },
            sweep: SweepConfig { params: vec![1e-300, 1.0], ..Default::default() },
            ..tiny()
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1..].iter().all(|r| !r.failed));
    }

    #[test]
    fn parameter_axis_needs_parameter() {
        let cfg = ExperimentConfig { sweep: SweepConfig { params: vec![1.0], ..Default::default() }, ..tiny() };
        assert!(sweep_cells(&cfg).is_err());
    }
}
