//! Experiment runner: closed-loop episodes, parameter sweeps, seeding and
//! CSV output.

pub mod config;
pub mod csv;
pub mod episode;
pub mod seed;
pub mod sweep;

pub use config::{DivergenceConfig, EnvKind, ExperimentConfig, GradientSource, LtiConfig, ShiftConfig, SweepConfig, UpdateRule};
pub use csv::{parse_csv, write_csv, write_trace, CsvRow, HEADER};
pub use episode::{run_episode, EpisodeRecord, StepRecord};
pub use sweep::{episode_row, run_row, run_sweep, sweep_cells, Cell};
