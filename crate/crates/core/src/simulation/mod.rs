//! Dynamics and cost models, trajectory rollouts, and the benchmark
//! environments.

pub mod cartpole;
pub mod lti;

pub use cartpole::{
    cartpole_cost, cartpole_energy, cartpole_step, cartpole_terminal, CartpoleConfig, CartpoleCost,
    CartpoleModel,
};
pub use lti::{LtiModel, QuadraticStageCost};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distribution::{Control, ControlSequence};
use crate::error::{Error, Result};

/// `x_{h+1} = f(x_h, u_h, w_h)`; must be a pure function of its inputs.
pub trait DynamicsModel: Sync {
    fn state_dim(&self) -> usize;

    /// Number of standard-normal variates consumed per step.
    fn noise_dim(&self) -> usize;

    fn is_deterministic(&self) -> bool {
        self.noise_dim() == 0
    }

    fn step(&self, state: &[f64], control: Control<'_>, noise: &[f64], next: &mut [f64]);
}

/// Instantaneous cost `c(x, u)` and terminal cost `c_end(x)`.
pub trait CostModel: Sync {
    fn stage(&self, state: &[f64], control: Control<'_>) -> f64;
    fn terminal(&self, state: &[f64]) -> f64;
}

/// States `x_0, …, x_H`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_dim: usize,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, h: usize) -> &[f64] {
        &self.states[h * self.state_dim..(h + 1) * self.state_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|x| x.is_finite())
    }
}

/// The accumulated cost `Σ_h c(x_h, u_h) + c_end(x_H)` of a stored
/// trajectory, or `+∞` if any state is non-finite.
pub fn trajectory_cost(cost: &dyn CostModel, traj: &Trajectory, seq: &ControlSequence) -> f64 {
    if !traj.is_finite() {
        return f64::INFINITY;
    }
    let horizon = seq.len();
    let mut total = 0.0;
    for h in 0..horizon {
        total += cost.stage(traj.state(h), seq.control(h));
    }
    total += cost.terminal(traj.state(horizon));
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Simulates one control sequence. `noise` holds `H · noise_dim` standard
/// normal variates (ignored by deterministic models).
pub fn rollout(
    model: &dyn DynamicsModel,
    cost: &dyn CostModel,
    x0: &[f64],
    seq: &ControlSequence,
    noise: &[f64],
) -> (Trajectory, f64) {
    let n = model.state_dim();
    let nd = model.noise_dim();
    let horizon = seq.len();
    let mut states = vec![f64::NAN; (horizon + 1) * n];
    states[..n].copy_from_slice(x0);
    let mut total = 0.0;
    let mut valid = x0.iter().all(|x| x.is_finite());
    for h in 0..horizon {
        if !valid {
            break;
        }
        let (done, rest) = states.split_at_mut((h + 1) * n);
        let x = &done[h * n..];
        let u = seq.control(h);
        total += cost.stage(x, u);
        model.step(x, u, &noise[h * nd..(h + 1) * nd], &mut rest[..n]);
        valid = rest[..n].iter().all(|v| v.is_finite());
    }
    if valid {
        total += cost.terminal(&states[horizon * n..]);
    }
    let c = if valid && total.is_finite() { total } else { f64::INFINITY };
    (Trajectory { state_dim: n, states }, c)
}

/// Cost-only rollout into caller-owned scratch buffers.
fn rollout_cost(
    model: &dyn DynamicsModel,
    cost: &dyn CostModel,
    x0: &[f64],
    seq: &ControlSequence,
    noise: &[f64],
    cur: &mut [f64],
    next: &mut [f64],
) -> f64 {
    let nd = model.noise_dim();
    cur.copy_from_slice(x0);
    let mut total = 0.0;
    for h in 0..seq.len() {
        let u = seq.control(h);
        total += cost.stage(cur, u);
        model.step(cur, u, &noise[h * nd..(h + 1) * nd], next);
        if !next.iter().all(|v| v.is_finite()) {
            return f64::INFINITY;
        }
        cur.copy_from_slice(next);
    }
    total += cost.terminal(cur);
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// Common-random-number noise: `K` dynamics-noise streams of length
/// `H · noise_dim`, shared by every sequence of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnNoise {
    pub horizon: usize,
    pub noise_dim: usize,
    pub streams: Vec<Vec<f64>>,
}

impl CrnNoise {
    /// Draws `k` streams of standard normals from `rng`. Deterministic models
    /// need only one (empty) stream.
    pub fn draw<R: Rng + ?Sized>(model: &dyn DynamicsModel, horizon: usize, k: usize, rng: &mut R) -> Self {
        let nd = model.noise_dim();
        let k = if model.is_deterministic() { 1 } else { k.max(1) };
        let streams = (0..k)
            .map(|_| (0..horizon * nd).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self {
            horizon,
            noise_dim: nd,
            streams,
        }
    }

    pub fn seeded(model: &dyn DynamicsModel, horizon: usize, k: usize, seed: u64) -> Self {
        Self::draw(model, horizon, k, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// One all-zero stream: the noise-free model.
    pub fn zeros(model: &dyn DynamicsModel, horizon: usize) -> Self {
        Self {
            horizon,
            noise_dim: model.noise_dim(),
            streams: vec![vec![0.0; horizon * model.noise_dim()]],
        }
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }
}

/// `n` sequences with their simulated trajectories (one per noise stream)
/// and their costs, each averaged over the noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub sequences: Vec<ControlSequence>,
    pub trajectories: Vec<Vec<Trajectory>>,
    pub costs: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// A batch that carries only sequences and costs (no stored states), for
    /// callers that evaluate costs elsewhere.
    pub fn from_costs(sequences: Vec<ControlSequence>, costs: Vec<f64>) -> Result<Self> {
        if sequences.len() != costs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sequences but {} costs",
                sequences.len(),
                costs.len()
            )));
        }
        Ok(Self {
            trajectories: vec![Vec::new(); sequences.len()],
            sequences,
            costs,
        })
    }
}

fn check_batch_inputs(model: &dyn DynamicsModel, x0: &[f64], sequences: &[ControlSequence], noise: &CrnNoise) -> Result<()> {
    if sequences.is_empty() {
        return Err(Error::InvalidParams("rollout batch needs at least one sequence".into()));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::ShapeMismatch(format!(
            "initial state has dimension {}, model expects {}",
            x0.len(),
            model.state_dim()
        )));
    }
    let horizon = sequences[0].len();
    if horizon == 0 || sequences.iter().any(|s| s.len() != horizon) {
        return Err(Error::ShapeMismatch("sequences must share a horizon of at least 1".into()));
    }
    if noise.noise_dim != model.noise_dim() || noise.streams.iter().any(|s| s.len() < horizon * model.noise_dim()) {
        return Err(Error::ShapeMismatch("noise streams too short for this batch".into()));
    }
    Ok(())
}

fn average(costs: impl Iterator<Item = f64>, k: usize) -> f64 {
    let total: f64 = costs.sum();
    if total.is_finite() {
        total / k as f64
    } else {
        f64::INFINITY
    }
}

/// Rolls every sequence through every shared noise stream, keeping the
/// trajectories.
pub fn rollout_batch(
    model: &dyn DynamicsModel,
    cost: &dyn CostModel,
    x0: &[f64],
    sequences: Vec<ControlSequence>,
    noise: &CrnNoise,
) -> Result<RolloutBatch> {
    check_batch_inputs(model, x0, &sequences, noise)?;
    let k = noise.num_streams();
    let results: Vec<(Vec<Trajectory>, f64)> = sequences
        .par_iter()
        .map(|seq| {
            let (trajs, costs): (Vec<_>, Vec<_>) = noise
                .streams
                .iter()
                .map(|w| rollout(model, cost, x0, seq, w))
                .unzip();
            (trajs, average(costs.into_iter(), k))
        })
        .collect();
    let (trajectories, costs) = results.into_iter().unzip();
    Ok(RolloutBatch {
        sequences,
        trajectories,
        costs,
    })
}

/// [`rollout_batch`] with the noise drawn from `crn_seed`.
pub fn rollout_batch_seeded(
    model: &dyn DynamicsModel,
    cost: &dyn CostModel,
    x0: &[f64],
    sequences: Vec<ControlSequence>,
    n_dynamics_samples: usize,
    crn_seed: u64,
) -> Result<RolloutBatch> {
    let horizon = sequences.first().map_or(0, ControlSequence::len);
    let noise = CrnNoise::seeded(model, horizon, n_dynamics_samples, crn_seed);
    rollout_batch(model, cost, x0, sequences, &noise)
}

/// Costs only: same numbers as [`rollout_batch`] without storing states.
pub fn batch_costs(
    model: &dyn DynamicsModel,
    cost: &dyn CostModel,
    x0: &[f64],
    sequences: &[ControlSequence],
    noise: &CrnNoise,
) -> Result<Vec<f64>> {
    check_batch_inputs(model, x0, sequences, noise)?;
    let n = model.state_dim();
    let k = noise.num_streams();
    Ok(sequences
        .par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(cur, next), seq| {
                average(
                    noise.streams.iter().map(|w| rollout_cost(model, cost, x0, seq, w, cur, next)),
                    k,
                )
            },
        )
        .collect())
}
