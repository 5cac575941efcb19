use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dmd_mpc_core::harness::{
    self, sweep, DivergenceConfig, EnvKind, ExperimentConfig, GradientSource, ShiftConfig, UpdateRule,
};
use dmd_mpc_core::losses::{LossSpec, ThresholdMode};
use dmd_mpc_core::updates::StepSchedule;

#[derive(Parser)]
#[command(name = "dmd-mpc", version, about = "Run DMD-MPC episodes and parameter sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode and write one CSV row.
    Episode {
        #[command(flatten)]
        common: Common,
        /// Episode seed; defaults to the first derived seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-step trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every cell of a grid for the configured number of episodes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Step sizes to sweep (comma separated).
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// Sample counts to sweep (comma separated).
        #[arg(long, value_delimiter = ',')]
        sample_counts: Vec<usize>,
        /// Loss parameters to sweep (comma separated).
        #[arg(long, value_delimiter = ',')]
        params: Vec<f64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LossKind {
    ExpectedCost,
    ProbLowCost,
    ExpUtility,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DivergenceKind {
    QuadraticIdentity,
    QuadraticFisher,
    QuadraticLoss,
    KlExpectation,
    KlNatural,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    loss: Option<LossKind>,
    /// λ for the exponential utility, elite fraction (or fixed threshold
    /// with --fixed-threshold) for the low-cost probability.
    #[arg(long)]
    loss_param: Option<f64>,
    #[arg(long)]
    fixed_threshold: bool,
    /// Disable the expected-cost baseline.
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    divergence: Option<DivergenceKind>,
    /// Also move the covariance under the natural-parameter KL divergence.
    #[arg(long)]
    update_covariance: bool,
    #[arg(long)]
    update: Option<UpdateRule>,
    #[arg(long)]
    gradient: Option<GradientSource>,
    #[arg(long)]
    shift: Option<ShiftConfig>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dynamics_samples: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Explicit per-episode seeds (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
            None => ExperimentConfig::for_env(self.env.unwrap_or(EnvKind::CartpoleContinuous)),
        };
        if let Some(env) = self.env {
            if self.config.is_some() {
                cfg.env = env;
            }
        }
        if let Some(kind) = self.loss {
            cfg.loss = match kind {
                LossKind::ExpectedCost => LossSpec::ExpectedCost { use_baseline: true },
                LossKind::ProbLowCost => LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(0.1) },
                LossKind::ExpUtility => LossSpec::ExpUtility { lambda: 1.0 },
            };
        }
        if self.fixed_threshold {
            let value = cfg.loss.parameter().unwrap_or(0.0);
            cfg.loss = LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(value) };
        }
        if let Some(p) = self.loss_param {
            if cfg.loss.parameter().is_none() {
                return Err(format!("loss {} takes no parameter", cfg.loss.name()));
            }
            cfg.loss = cfg.loss.with_parameter(p);
        }
        if self.no_baseline {
            cfg.loss = LossSpec::ExpectedCost { use_baseline: false };
        }
        if let Some(d) = self.divergence {
            cfg.divergence = match d {
                DivergenceKind::QuadraticIdentity => DivergenceConfig::QuadraticIdentity,
                DivergenceKind::QuadraticFisher => DivergenceConfig::QuadraticFisher,
                DivergenceKind::QuadraticLoss => DivergenceConfig::QuadraticLoss,
                DivergenceKind::KlExpectation => DivergenceConfig::KlExpectation,
                DivergenceKind::KlNatural => DivergenceConfig::KlNatural { update_covariance: false },
            };
        }
        if self.update_covariance {
            cfg.divergence = DivergenceConfig::KlNatural { update_covariance: true };
        }
        if let Some(u) = self.update {
            cfg.update = u;
        }
        if let Some(g) = self.gradient {
            cfg.gradient = g;
        }
        if let Some(s) = self.shift {
            cfg.shift = s;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = StepSchedule::Constant(g);
        }
        if let Some(n) = self.samples {
            cfg.n_samples = n;
        }
        if let Some(k) = self.dynamics_samples {
            cfg.n_dynamics_samples = k;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(t) = self.steps {
            cfg.episode_length = t;
        }
        if let Some(s) = self.master_seed {
            cfg.master_seed = s;
        }
        if !self.seeds.is_empty() {
            cfg.episodes = self.seeds.len();
            cfg.seeds = self.seeds.clone();
        }
        if let Some(out) = &self.output {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn open_output(cfg: &ExperimentConfig) -> io::Result<Box<dyn Write>> {
    Ok(match &cfg.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Episode { common, seed, trace } => {
            let mut cfg = common.resolve()?;
            cfg.validate().map_err(|e| e.to_string())?;
            let seed = seed.unwrap_or_else(|| sweep::episode_seed(&cfg, 0, 0));
            cfg.episodes = 1;
            cfg.seeds = vec![seed];
            let record = harness::run_episode(&cfg, seed);
            let row = sweep::episode_row(&cfg, seed, &record);
            let mut out = open_output(&cfg).map_err(|e| e.to_string())?;
            harness::write_csv(&mut out, &cfg, &[row]).map_err(|e| e.to_string())?;
            out.flush().map_err(|e| e.to_string())?;
            match record {
                Ok(rec) => {
                    if let Some(path) = trace {
                        let mut w = BufWriter::new(File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?);
                        harness::write_trace(&mut w, &rec).map_err(|e| e.to_string())?;
                        w.flush().map_err(|e| e.to_string())?;
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("dmd-mpc: episode failed: {e}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Sweep { common, gammas, sample_counts, params, episodes } => {
            let mut cfg = common.resolve()?;
            if !gammas.is_empty() {
                cfg.sweep.gammas = gammas;
            }
            if !sample_counts.is_empty() {
                cfg.sweep.n_samples = sample_counts;
            }
            if !params.is_empty() {
                cfg.sweep.params = params;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            cfg.validate().map_err(|e| e.to_string())?;
            let rows = harness::run_sweep(&cfg).map_err(|e| e.to_string())?;
            let mut out = open_output(&cfg).map_err(|e| e.to_string())?;
            harness::write_csv(&mut out, &cfg, &rows).map_err(|e| e.to_string())?;
            out.flush().map_err(|e| e.to_string())?;
            let failed = rows.iter().filter(|r| r.failed).count();
            if failed > 0 {
                eprintln!("dmd-mpc: {failed} of {} episodes failed", rows.len());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("dmd-mpc: {msg}");
            ExitCode::FAILURE
        }
    }
}
