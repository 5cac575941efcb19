//! Python bindings for `dmd_mpc_core`.

use dmd_mpc_core::analytic::{self, LtiSystem, QuadraticLoss};
use dmd_mpc_core::distribution::{ControlSequence, GaussianParams, HorizonParams, ShiftPolicy};
use dmd_mpc_core::harness::{self, EnvKind, ExperimentConfig};
use dmd_mpc_core::losses::{self, LossSpec, ThresholdMode};
use dmd_mpc_core::simulation::{cartpole_cost as core_cartpole_cost, cartpole_step as core_cartpole_step, CartpoleConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Matrix = Vec<Vec<f64>>;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &Matrix) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn quadratic_tuple(q: QuadraticLoss) -> (Matrix, Vec<f64>, f64) {
    (rows(&q.r), q.linear.iter().copied().collect(), q.constant)
}

fn gaussian_plan(means: &Matrix, variance: f64) -> PyResult<HorizonParams> {
    let steps = means
        .iter()
        .map(|m| GaussianParams::isotropic(DVector::from_column_slice(m), variance))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    HorizonParams::gaussian(steps).map_err(err)
}

fn plan_means(plan: &HorizonParams) -> Matrix {
    plan.as_gaussian()
        .expect("gaussian plan")
        .iter()
        .map(|g| g.mean().iter().copied().collect())
        .collect()
}

/// One cartpole step from `state` under `force`; `noise` is the standard
/// normal actuator draw. Uses the true pole length unless `model` is set.
#[pyfunction]
#[pyo3(signature = (state, force, noise = 0.0, model = false))]
fn cartpole_step(state: [f64; 4], force: f64, noise: f64, model: bool) -> [f64; 4] {
    let cfg = CartpoleConfig::default();
    let l = if model { cfg.pole_length_model } else { cfg.pole_length_true };
    let mut next = [0.0; 4];
    core_cartpole_step(&cfg, l, &state, force, noise, &mut next);
    next
}

#[pyfunction]
fn cartpole_cost(state: [f64; 4]) -> f64 {
    core_cartpole_cost(&state, CartpoleConfig::default().angle_threshold)
}

/// Normalized utility weights. `loss` is `"exp_utility"` (param = λ),
/// `"prob_low_cost"` (param = elite fraction) or `"prob_low_cost_fixed"`
/// (param = threshold).
#[pyfunction]
fn utility_weights(costs: Vec<f64>, loss: &str, param: f64) -> PyResult<Vec<f64>> {
    let spec = match loss {
        "exp_utility" => LossSpec::ExpUtility { lambda: param },
        "prob_low_cost" => LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(param) },
        "prob_low_cost_fixed" => LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(param) },
        other => return Err(err(format!("unknown utility loss {other:?}"))),
    };
    losses::utility_weights(&costs, &spec).map_err(err)
}

#[pyfunction]
fn adaptive_threshold(costs: Vec<f64>, elite_fraction: f64) -> PyResult<f64> {
    if costs.is_empty() {
        return Err(err("no costs"));
    }
    Ok(losses::adaptive_threshold(&costs, elite_fraction))
}

/// `n` control sequences drawn from isotropic Gaussians around `means`
/// (one row per horizon step), each returned as a list of rows.
#[pyfunction]
fn sample(means: Matrix, variance: f64, n: usize, seed: u64) -> PyResult<Vec<Matrix>> {
    let plan = gaussian_plan(&means, variance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(plan
        .sample_controls(n, &mut rng)
        .into_iter()
        .map(|s| match s {
            ControlSequence::Continuous { dim, values } => values.chunks(dim).map(<[f64]>::to_vec).collect(),
            ControlSequence::Discrete(_) => unreachable!(),
        })
        .collect())
}

/// Shift operator on the plan means; the vacated last step repeats.
#[pyfunction]
fn shift(means: Matrix) -> PyResult<Matrix> {
    let plan = gaussian_plan(&means, 1.0)?;
    Ok(plan_means(&plan.shift(&ShiftPolicy::RepeatLast).map_err(err)?))
}

fn stacked(a: &Matrix, b: &Matrix, w: &Matrix, q: &Matrix, r: &Matrix, q_end: &Matrix, horizon: usize) -> PyResult<analytic::StackedSystem> {
    let sys = LtiSystem::new(matrix(a)?, matrix(b)?, matrix(w)?).map_err(err)?;
    analytic::build_stacked(&sys, &matrix(q)?, &matrix(r)?, &matrix(q_end)?, horizon).map_err(err)
}

/// Expected-cost loss of a Dirac plan on a linear system as `(R, r, c)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn lqr_quadratic(a: Matrix, b: Matrix, w: Matrix, q: Matrix, r: Matrix, q_end: Matrix, horizon: usize, x0: Vec<f64>) -> PyResult<(Matrix, Vec<f64>, f64)> {
    let s = stacked(&a, &b, &w, &q, &r, &q_end, horizon)?;
    analytic::lqr_quadratic(&s, &DVector::from_vec(x0)).map(quadratic_tuple).map_err(err)
}

/// `-log E[exp(-C/λ)]` of a Dirac plan on a linear system as `(R, r, c)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn leqr_quadratic(a: Matrix, b: Matrix, w: Matrix, q: Matrix, r: Matrix, q_end: Matrix, horizon: usize, x0: Vec<f64>, lam: f64) -> PyResult<(Matrix, Vec<f64>, f64)> {
    let s = stacked(&a, &b, &w, &q, &r, &q_end, horizon)?;
    analytic::leqr_quadratic(&s, &DVector::from_vec(x0), lam).map(quadratic_tuple).map_err(err)
}

/// `E[exp(-½xᵀAx - bᵀx)]` for `x ~ N(μ, Σ)`.
#[pyfunction]
fn gaussian_exp_quadratic(mu: Vec<f64>, sigma: Matrix, a: Matrix, b: Vec<f64>) -> PyResult<f64> {
    analytic::gaussian_exp_quadratic(&DVector::from_vec(mu), &matrix(&sigma)?, &matrix(&a)?, &DVector::from_vec(b)).map_err(err)
}

/// Default configuration of an environment as TOML.
#[pyfunction]
#[pyo3(signature = (env = "cartpole_continuous"))]
fn default_config(env: &str) -> PyResult<String> {
    let kind = match env {
        "cartpole_continuous" => EnvKind::CartpoleContinuous,
        "cartpole_discrete" => EnvKind::CartpoleDiscrete,
        "lti_lqr" => EnvKind::LtiLqr,
        "lti_leqr" => EnvKind::LtiLeqr,
        other => return Err(err(format!("unknown env {other:?}"))),
    };
    Ok(ExperimentConfig::for_env(kind).to_toml())
}

/// Runs one episode of the TOML config and returns a dict with
/// `episode_cost`, `success`, `states` and `controls`.
#[pyfunction]
fn run_episode<'py>(py: Python<'py>, config_toml: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    let rec = py.detach(|| harness::run_episode(&cfg, seed)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("episode_cost", rec.episode_cost)?;
    out.set_item("success", rec.success)?;
    let states: Vec<Vec<f64>> = rec.steps.iter().map(|s| s.state.clone()).chain([rec.final_state.clone()]).collect();
    out.set_item("states", states)?;
    out.set_item("controls", rec.steps.iter().map(|s| s.control.clone()).collect::<Vec<_>>())?;
    Ok(out)
}

/// Runs the config's sweep and returns the CSV text.
#[pyfunction]
fn run_sweep(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    let rows = py.detach(|| harness::run_sweep(&cfg)).map_err(err)?;
    let mut buf = Vec::new();
    harness::write_csv(&mut buf, &cfg, &rows).map_err(err)?;
    String::from_utf8(buf).map_err(err)
}

#[pymodule]
fn dmd_mpc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cartpole_step, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_cost, m)?)?;
    m.add_function(wrap_pyfunction!(utility_weights, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(shift, m)?)?;
    m.add_function(wrap_pyfunction!(lqr_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(leqr_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_exp_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
