use std::f64::consts::PI;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use super::config::{DivergenceConfig, EnvKind, ExperimentConfig, GradientSource, ShiftConfig, UpdateRule};
use super::seed::{self, Stream};
use crate::analytic::{self, QuadraticLoss, StackedSystem};
use crate::distribution::{
    BasicParams, CategoricalParams, Control, GaussianParams, HorizonParams, ParamGradient,
    Parameterization, ShiftPolicy,
};
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::simulation::lti::LtiModel;
use crate::simulation::{batch_costs, CostModel, CrnNoise, DynamicsModel, RolloutBatch};
use crate::updates::{self, DivergenceSpec};

/// One executed round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// State before the control was applied.
    pub state: Vec<f64>,
    /// Applied control (the force, for the discrete cartpole).
    pub control: Vec<f64>,
    pub cost: f64,
    /// Estimate of `ℓ_t(θ̃_t)`, the loss at the shifted plan.
    pub loss_estimate: f64,
    pub effective_sample_size: f64,
    /// Analytic `ℓ_t(θ_t)` at the plan that was played; NaN unless the
    /// gradient is exact.
    pub loss_played: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub episode_cost: f64,
    pub success: bool,
}

struct Env {
    plan: Box<dyn DynamicsModel>,
    truth: Box<dyn DynamicsModel>,
    cost: Box<dyn CostModel>,
    x0: Vec<f64>,
    stacked: Option<StackedSystem>,
}

fn build_env(config: &ExperimentConfig) -> Result<Env> {
    if config.env.is_lti() {
        let system = config.lti.system()?;
        let cost = config.lti.stage_cost()?;
        let stacked = analytic::build_stacked(&system, &cost.q, &cost.r, &cost.q_end, config.horizon)?;
        Ok(Env {
            plan: Box::new(LtiModel::new(system.clone())),
            truth: Box::new(LtiModel::new(system)),
            cost: Box::new(cost),
            x0: config.lti.x0.clone(),
            stacked: Some(stacked),
        })
    } else {
        Ok(Env {
            plan: Box::new(config.cartpole.planning_model()),
            truth: Box::new(config.cartpole.true_model()),
            cost: Box::new(config.cartpole.cost()),
            x0: config.cartpole.initial_state.to_vec(),
            stacked: None,
        })
    }
}

/// The plan every episode starts from: uniform categoricals over the
/// discrete forces, or Gaussians with the configured mean and deviation.
pub fn initial_step(config: &ExperimentConfig) -> Result<BasicParams> {
    if config.env.is_discrete() {
        return Ok(BasicParams::Categorical(CategoricalParams::uniform(
            config.cartpole.discrete_forces.len(),
        )?));
    }
    let dim = if config.env.is_lti() { config.lti.b.first().map_or(0, Vec::len) } else { 1 };
    let mean = DVector::from_element(dim, config.initial_mean);
    Ok(BasicParams::Gaussian(GaussianParams::isotropic(
        mean,
        config.initial_std * config.initial_std,
    )?))
}

fn parameterization(config: &ExperimentConfig) -> Parameterization {
    match (config.update, config.divergence) {
        (UpdateRule::Dmd, DivergenceConfig::KlNatural { .. }) => Parameterization::Natural,
        _ if config.env.is_discrete() => Parameterization::Probabilities,
        _ => Parameterization::Mean,
    }
}

fn divergence(config: &ExperimentConfig, quad: Option<&QuadraticLoss>) -> Result<DivergenceSpec> {
    Ok(match config.divergence {
        DivergenceConfig::QuadraticIdentity => DivergenceSpec::QuadraticIdentity,
        DivergenceConfig::QuadraticFisher => DivergenceSpec::QuadraticFisher,
        DivergenceConfig::QuadraticLoss => {
            let q = quad.ok_or_else(|| Error::Config("quadratic_loss divergence needs an analytic loss".into()))?;
            DivergenceSpec::QuadraticCustom(q.r.clone())
        }
        DivergenceConfig::KlExpectation => DivergenceSpec::KLExpectation,
        DivergenceConfig::KlNatural { update_covariance } => DivergenceSpec::KLNatural { update_covariance },
    })
}

fn analytic_loss(config: &ExperimentConfig, stacked: &StackedSystem, x: &[f64]) -> Result<QuadraticLoss> {
    let x = DVector::from_column_slice(x);
    match (config.env, config.loss) {
        (EnvKind::LtiLqr, LossSpec::ExpectedCost { .. }) => analytic::lqr_quadratic(stacked, &x),
        (EnvKind::LtiLeqr, LossSpec::ExpUtility { lambda }) => analytic::leqr_quadratic(stacked, &x, lambda),
        _ => Err(Error::Config("no analytic loss for this env and loss".into())),
    }
}

struct Round {
    params: HorizonParams,
    loss_estimate: f64,
    effective_sample_size: f64,
    loss_played: f64,
}

fn exact_round(config: &ExperimentConfig, env: &Env, x: &[f64], shifted: &HorizonParams, gamma: f64) -> Result<Round> {
    let stacked = env.stacked.as_ref().expect("linear envs carry a stacked system");
    let quad = analytic_loss(config, stacked, x)?;
    let theta = shifted.stacked_means().expect("linear envs use Gaussian plans");
    let flat = quad.gradient(&theta);
    let grad = ParamGradient::zeros(shifted, Parameterization::Mean)?.unflatten_like(&flat)?;
    let params = updates::dmd_step(shifted, &grad, &divergence(config, Some(&quad))?, gamma)?;
    let played = params.stacked_means().expect("Gaussian plan");
    Ok(Round {
        loss_estimate: quad.value(&theta),
        effective_sample_size: f64::NAN,
        loss_played: quad.value(&played),
        params,
    })
}

fn sampled_round(
    config: &ExperimentConfig,
    env: &Env,
    x: &[f64],
    shifted: &HorizonParams,
    gamma: f64,
    episode_seed: u64,
    t: u64,
) -> Result<Round> {
    let mut rng = seed::step_rng(episode_seed, t, Stream::ControlSampling);
    let sequences = shifted.sample_controls(config.n_samples, &mut rng);
    let noise = CrnNoise::seeded(
        env.plan.as_ref(),
        config.horizon,
        config.n_dynamics_samples,
        seed::step_seed(episode_seed, t, Stream::ModelNoise),
    );
    let costs = batch_costs(env.plan.as_ref(), env.cost.as_ref(), x, &sequences, &noise)?;
    let batch = RolloutBatch::from_costs(sequences, costs)?;
    let estimate = losses::estimate_gradient(&batch, shifted, &config.loss, parameterization(config))?;
    let params = match config.update {
        UpdateRule::Dmd => updates::dmd_step(shifted, &estimate.direction, &divergence(config, None)?, gamma)?,
        UpdateRule::Mppi => {
            let LossSpec::ExpUtility { lambda } = config.loss else { unreachable!("validated") };
            updates::mppi_step(shifted, &batch, lambda, gamma)?
        }
        UpdateRule::Cem => {
            let threshold = estimate.threshold.expect("low-cost loss reports its threshold");
            updates::cem_step(shifted, &batch, threshold)?
        }
    };
    Ok(Round {
        params,
        loss_estimate: estimate.loss_value_estimate,
        effective_sample_size: estimate.effective_sample_size,
        loss_played: f64::NAN,
    })
}

fn control_values(config: &ExperimentConfig, control: Control<'_>) -> Vec<f64> {
    match control {
        Control::Continuous(u) => u.to_vec(),
        Control::Discrete(k) => vec![config.cartpole.discrete_forces[k]],
    }
}

fn swing_up_success(config: &ExperimentConfig, states: &[&[f64]]) -> bool {
    let window = config.success_window.min(states.len());
    states[states.len() - window..]
        .iter()
        .all(|x| (x[1] - PI).abs() <= config.cartpole.angle_threshold)
}

/// One closed-loop episode: at every step build the round's loss from the
/// current state, take one update from the shifted plan, apply the first
/// control of the plan's mode to the true system, then shift.
pub fn run_episode(config: &ExperimentConfig, episode_seed: u64) -> Result<EpisodeRecord> {
    config.validate()?;
    let env = build_env(config)?;
    let start = initial_step(config)?;
    let shift = match config.shift {
        ShiftConfig::RepeatLast => ShiftPolicy::RepeatLast,
        ShiftConfig::Reset => ShiftPolicy::Default(start.clone()),
    };
    let mut shifted = HorizonParams::repeated(start, config.horizon)?;
    let mut x = env.x0.clone();
    let mut next = vec![0.0; x.len()];
    let mut steps = Vec::with_capacity(config.episode_length);
    let mut total = 0.0;

    for t in 0..config.episode_length {
        let gamma = config.gamma.gamma(t);
        let round = if config.gradient == GradientSource::Exact {
            exact_round(config, &env, &x, &shifted, gamma)
        } else {
            sampled_round(config, &env, &x, &shifted, gamma, episode_seed, t as u64)
        }
        .map_err(|e| Error::Episode { step: t, source: Box::new(e) })?;

        let mode = round.params.mode();
        let control = mode.first();
        let cost = env.cost.stage(&x, control);

        let mut rng = seed::step_rng(episode_seed, t as u64, Stream::Environment);
        let noise: Vec<f64> = (0..env.truth.noise_dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        env.truth.step(&x, control, &noise, &mut next);
        if !cost.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Episode { step: t, source: Box::new(Error::NonFiniteCost) });
        }

        total += cost;
        steps.push(StepRecord {
            t,
            state: x.clone(),
            control: control_values(config, control),
            cost,
            loss_estimate: round.loss_estimate,
            effective_sample_size: round.effective_sample_size,
            loss_played: round.loss_played,
        });
        std::mem::swap(&mut x, &mut next);
        shifted = round.params.shift(&shift).map_err(|e| Error::Episode { step: t, source: Box::new(e) })?;
    }

    let success = match config.env {
        EnvKind::CartpoleContinuous | EnvKind::CartpoleDiscrete => {
            let states: Vec<&[f64]> = steps[1..].iter().map(|s| s.state.as_slice()).chain([x.as_slice()]).collect();
            swing_up_success(config, &states)
        }
        EnvKind::LtiLqr | EnvKind::LtiLeqr => true,
    };
    Ok(EpisodeRecord {
        seed: episode_seed,
        steps,
        final_state: x,
        episode_cost: total,
        success,
    })
}
