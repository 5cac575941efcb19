use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::LtiSystem;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::simulation::cartpole::CartpoleConfig;
use crate::simulation::lti::QuadraticStageCost;
use crate::updates::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EnvKind {
    CartpoleContinuous,
    CartpoleDiscrete,
    LtiLqr,
    LtiLeqr,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartpoleContinuous => "cartpole_continuous",
            EnvKind::CartpoleDiscrete => "cartpole_discrete",
            EnvKind::LtiLqr => "lti_lqr",
            EnvKind::LtiLeqr => "lti_leqr",
        }
    }

    pub fn is_discrete(self) -> bool {
        self == EnvKind::CartpoleDiscrete
    }

    pub fn is_lti(self) -> bool {
        matches!(self, EnvKind::LtiLqr | EnvKind::LtiLeqr)
    }
}

/// The divergence of the proximal step, as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DivergenceConfig {
    QuadraticIdentity,
    QuadraticFisher,
    /// `A = R_t`, the Hessian of the current analytic loss (linear envs only).
    QuadraticLoss,
    KlExpectation,
    KlNatural {
        #[serde(default)]
        update_covariance: bool,
    },
}

impl DivergenceConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DivergenceConfig::QuadraticIdentity => "quadratic_identity",
            DivergenceConfig::QuadraticFisher => "quadratic_fisher",
            DivergenceConfig::QuadraticLoss => "quadratic_loss",
            DivergenceConfig::KlExpectation => "kl_expectation",
            DivergenceConfig::KlNatural { .. } => "kl_natural",
        }
    }
}

/// Which parameter update a round performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum UpdateRule {
    /// One proximal step with the configured divergence.
    #[default]
    Dmd,
    /// The MPPI mean update (needs the exponential-utility loss).
    Mppi,
    /// The cross-entropy update (needs the low-cost-probability loss).
    Cem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ShiftConfig {
    #[default]
    RepeatLast,
    /// Reset the vacated step to the initial distribution.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GradientSource {
    /// Likelihood-ratio estimate from sampled rollouts.
    #[default]
    Sampled,
    /// Exact gradient of the analytic quadratic loss (linear envs only).
    Exact,
}

/// Linear system, quadratic cost and initial state for the linear envs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtiConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub q_end: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

impl Default for LtiConfig {
    /// Double integrator with a 0.1 s step.
    fn default() -> Self {
        Self {
            a: vec![vec![1.0, 0.1], vec![0.0, 1.0]],
            b: vec![vec![0.005], vec![0.1]],
            w: vec![vec![1e-4, 0.0], vec![0.0, 1e-4]],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![0.1]],
            q_end: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            x0: vec![1.0, 0.0],
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("lti.{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl LtiConfig {
    pub fn system(&self) -> Result<LtiSystem> {
        LtiSystem::new(matrix("a", &self.a)?, matrix("b", &self.b)?, matrix("w", &self.w)?)
    }

    pub fn stage_cost(&self) -> Result<QuadraticStageCost> {
        Ok(QuadraticStageCost {
            q: matrix("q", &self.q)?,
            r: matrix("r", &self.r)?,
            q_end: matrix("q_end", &self.q_end)?,
        })
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }
}

/// Axes of a sweep. An empty axis means "the base config's value".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub n_samples: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub loss: LossSpec,
    pub divergence: DivergenceConfig,
    pub update: UpdateRule,
    pub gradient: GradientSource,
    pub gamma: StepSchedule,
    pub n_samples: usize,
    pub n_dynamics_samples: usize,
    pub horizon: usize,
    pub episode_length: usize,
    pub episodes: usize,
    pub master_seed: u64,
    /// Explicit per-episode seeds; when empty they are derived from
    /// `master_seed`.
    pub seeds: Vec<u64>,
    pub shift: ShiftConfig,
    /// Initial mean and standard deviation of each Gaussian control.
    pub initial_mean: f64,
    pub initial_std: f64,
    /// Number of final steps the pole must stay within the angle threshold
    /// for a cartpole episode to count as a success.
    pub success_window: usize,
    pub output: Option<PathBuf>,
    pub cartpole: CartpoleConfig,
    pub lti: LtiConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::CartpoleContinuous,
            loss: LossSpec::default(),
            divergence: DivergenceConfig::KlNatural { update_covariance: false },
            update: UpdateRule::Dmd,
            gradient: GradientSource::Sampled,
            gamma: StepSchedule::Constant(0.01),
            n_samples: 1000,
            n_dynamics_samples: 10,
            horizon: 50,
            episode_length: 500,
            episodes: 10,
            master_seed: 0,
            seeds: Vec::new(),
            shift: ShiftConfig::RepeatLast,
            initial_mean: 0.0,
            initial_std: 2.0,
            success_window: 100,
            output: None,
            cartpole: CartpoleConfig::default(),
            lti: LtiConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for an environment: the discrete cartpole switches to the
    /// exponentiated-gradient update.
    pub fn for_env(env: EnvKind) -> Self {
        let mut cfg = Self { env, ..Self::default() };
        if env.is_discrete() {
            cfg.divergence = DivergenceConfig::KlExpectation;
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the resolved config, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_samples", self.n_samples),
            ("n_dynamics_samples", self.n_dynamics_samples),
            ("horizon", self.horizon),
            ("episode_length", self.episode_length),
            ("episodes", self.episodes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.episodes {
            return Err(Error::Config(format!(
                "{} seeds given for {} episodes",
                self.seeds.len(),
                self.episodes
            )));
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        let moment_update = self.update != UpdateRule::Dmd;
        self.gamma
            .validate(moment_update)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.initial_std > 0.0 && self.initial_std.is_finite()) {
            return Err(Error::Config("initial_std must be positive".into()));
        }
        if self.env.is_discrete() {
            if !matches!(
                self.divergence,
                DivergenceConfig::KlExpectation | DivergenceConfig::QuadraticIdentity | DivergenceConfig::QuadraticFisher
            ) || self.update != UpdateRule::Dmd
            {
                return Err(Error::Config(format!(
                    "divergence {} / update {:?} not available for the discrete cartpole",
                    self.divergence.name(),
                    self.update
                )));
            }
        } else if self.divergence == DivergenceConfig::KlExpectation {
            return Err(Error::Config("kl_expectation needs the discrete cartpole".into()));
        }
        if self.divergence == DivergenceConfig::QuadraticLoss && self.gradient != GradientSource::Exact {
            return Err(Error::Config("quadratic_loss divergence needs gradient = \"exact\"".into()));
        }
        match self.update {
            UpdateRule::Dmd => {}
            UpdateRule::Mppi if matches!(self.loss, LossSpec::ExpUtility { .. }) => {}
            UpdateRule::Cem if matches!(self.loss, LossSpec::ProbLowCost { .. }) => {}
            other => {
                return Err(Error::Config(format!("update {other:?} does not match loss {}", self.loss.name())));
            }
        }
        if self.gradient == GradientSource::Exact {
            if !self.env.is_lti() {
                return Err(Error::Config("exact gradients exist only for the linear envs".into()));
            }
            if self.update != UpdateRule::Dmd
                || !matches!(
                    self.divergence,
                    DivergenceConfig::QuadraticIdentity | DivergenceConfig::QuadraticFisher | DivergenceConfig::QuadraticLoss
                )
            {
                return Err(Error::Config("exact gradients need a quadratic divergence on the means".into()));
            }
            match (self.env, self.loss) {
                (EnvKind::LtiLqr, LossSpec::ExpectedCost { .. }) | (EnvKind::LtiLeqr, LossSpec::ExpUtility { .. }) => {}
                _ => {
                    return Err(Error::Config(
                        "exact gradients need expected_cost on lti_lqr or exp_utility on lti_leqr".into(),
                    ))
                }
            }
        }
        if self.env.is_lti() {
            let sys = self.lti.system()?;
            let cost = self.lti.stage_cost()?;
            let n = sys.state_dim();
            if cost.q.shape() != (n, n) || cost.q_end.shape() != (n, n) || self.lti.x0.len() != n {
                return Err(Error::Config("lti.q, lti.q_end and lti.x0 must match the state dimension".into()));
            }
            let m = sys.control_dim();
            if cost.r.shape() != (m, m) {
                return Err(Error::Config("lti.r must match the control dimension".into()));
            }
        } else {
            self.cartpole.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ThresholdMode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            env = "cartpole_discrete"
            divergence = { kind = "kl_expectation" }
            gamma = [1.0, 0.5]
            n_samples = 20

            [loss]
            kind = "prob_low_cost"
            threshold = { elite_fraction = 0.1 }

            [cartpole]
            dt = 0.01
            "#,
        )
        .unwrap();
        assert_eq!(cfg.env, EnvKind::CartpoleDiscrete);
        assert_eq!(cfg.gamma, StepSchedule::Indexed(vec![1.0, 0.5]));
        assert_eq!(cfg.loss, LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(0.1) });
        assert_eq!(cfg.cartpole.dt, 0.01);
        assert_eq!(cfg.horizon, 50);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("horizn = 3").is_err());
    }

    #[test]
    fn invalid_combinations_rejected() {
        let zero = ExperimentConfig { n_samples: 0, ..Default::default() };
        assert!(zero.validate().is_err());
        let eg = ExperimentConfig { divergence: DivergenceConfig::KlExpectation, ..Default::default() };
        assert!(eg.validate().is_err());
        let mppi = ExperimentConfig { update: UpdateRule::Mppi, ..Default::default() };
        assert!(mppi.validate().is_err());
        let exact = ExperimentConfig { gradient: GradientSource::Exact, ..Default::default() };
        assert!(exact.validate().is_err());
        let seeds = ExperimentConfig { seeds: vec![1, 2], ..Default::default() };
        assert!(seeds.validate().is_err());
    }
}
