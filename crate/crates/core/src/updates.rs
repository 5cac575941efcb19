//! One proximal step `argmin_θ ⟨γg, θ⟩ + D_ψ(θ ‖ θ̃)` per Bregman divergence,
//! and the CEM / MPPI reference updates it specializes to.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::QuadraticLoss;
use crate::distribution::{
    CategoricalParams, Control, GaussianMoments, GaussianParams, HorizonParams, ParamGradient, PROB_FLOOR,
};
use crate::error::{Error, Result};
use crate::linalg::{self, SYMMETRY_TOL};
use crate::simulation::RolloutBatch;

#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceSpec {
    /// `½‖θ - θ̃‖²`: projected gradient descent.
    QuadraticIdentity,
    /// `½(θ - θ̃)ᵀ F(θ̃) (θ - θ̃)`: natural gradient descent.
    QuadraticFisher,
    /// `½(θ - θ̃)ᵀ A (θ - θ̃)` on the stacked Gaussian means.
    QuadraticCustom(DMatrix<f64>),
    /// `KL(π_θ ‖ π_θ̃)` with `θ` the categorical probabilities: exponentiated
    /// gradient.
    KLExpectation,
    /// `KL(π_θ̃ ‖ π_θ)` with `θ` the Gaussian natural parameter. With
    /// `update_covariance = false` only the mean moves.
    KLNatural { update_covariance: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    /// `γ_t` per round; the last entry is reused past the end.
    Indexed(Vec<f64>),
}

impl StepSchedule {
    pub fn gamma(&self, t: usize) -> f64 {
        match self {
            StepSchedule::Constant(g) => *g,
            StepSchedule::Indexed(v) => v[t.min(v.len() - 1)],
        }
    }

    pub fn validate(&self, unit_interval: bool) -> Result<()> {
        let values: &[f64] = match self {
            StepSchedule::Constant(g) => std::slice::from_ref(g),
            StepSchedule::Indexed(v) => v,
        };
        if values.is_empty() {
            return Err(Error::InvalidParams("empty step-size schedule".into()));
        }
        for g in values {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParams(format!("step size must be positive, got {g}")));
            }
            if unit_interval && *g > 1.0 {
                return Err(Error::InvalidParams(format!(
                    "step size must lie in (0, 1], got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Euclidean feasible set for projected gradient steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeasibleSet {
    Unconstrained,
    Box { lo: f64, hi: f64 },
    Simplex,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParams(format!("step size must be non-negative, got {gamma}")));
    }
    Ok(())
}

fn is_noop(grad: &ParamGradient, gamma: f64) -> bool {
    gamma == 0.0 || grad.max_abs() == 0.0
}

fn mean_blocks(grad: &ParamGradient) -> Result<&[DVector<f64>]> {
    match grad {
        ParamGradient::Mean(g) => Ok(g),
        other => Err(Error::Unsupported(format!(
            "{:?} gradient where a mean gradient is required",
            other.parameterization()
        ))),
    }
}

fn prob_blocks(grad: &ParamGradient) -> Result<&[DVector<f64>]> {
    match grad {
        ParamGradient::Probabilities(g) => Ok(g),
        other => Err(Error::Unsupported(format!(
            "{:?} gradient where a probability gradient is required",
            other.parameterization()
        ))),
    }
}

/// The DMD proximal step, dispatched on the divergence.
pub fn dmd_step(params: &HorizonParams, grad: &ParamGradient, div: &DivergenceSpec, gamma: f64) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    if is_noop(grad, gamma) {
        return Ok(params.clone());
    }
    match div {
        DivergenceSpec::QuadraticIdentity => match grad {
            ParamGradient::Natural(_) => natural_parameter_gradient_step(params, grad, gamma),
            ParamGradient::Probabilities(_) => projected_gradient_step(params, grad, gamma, &FeasibleSet::Simplex),
            ParamGradient::Mean(_) => projected_gradient_step(params, grad, gamma, &FeasibleSet::Unconstrained),
        },
        DivergenceSpec::QuadraticFisher => natural_gradient_step(params, grad, gamma),
        DivergenceSpec::QuadraticCustom(a) => quadratic_custom_step(params, grad, a, gamma),
        DivergenceSpec::KLExpectation => exponentiated_gradient_step(params, grad, gamma),
        DivergenceSpec::KLNatural { update_covariance } => kl_natural_step(params, grad, gamma, *update_covariance),
    }
}

/// `Proj_Θ(θ̃ - γg)`.
pub fn projected_gradient_step(
    params: &HorizonParams,
    grad: &ParamGradient,
    gamma: f64,
    set: &FeasibleSet,
) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    match (params, set) {
        (HorizonParams::Gaussian(steps), FeasibleSet::Unconstrained | FeasibleSet::Box { .. }) => {
            let g = mean_blocks(grad)?;
            let out = steps
                .iter()
                .zip(g)
                .map(|(p, gh)| {
                    let mut m = p.mean() - gh * gamma;
                    if let FeasibleSet::Box { lo, hi } = *set {
                        m.apply(|x| *x = x.clamp(lo, hi));
                    }
                    p.with_mean(m)
                })
                .collect::<Result<_>>()?;
            Ok(HorizonParams::Gaussian(out))
        }
        (HorizonParams::Categorical(steps), FeasibleSet::Simplex) => {
            let g = prob_blocks(grad)?;
            let out = steps
                .iter()
                .zip(g)
                .map(|(p, gh)| CategoricalParams::new(linalg::project_simplex(&(p.probs() - gh * gamma))))
                .collect::<Result<_>>()?;
            Ok(HorizonParams::Categorical(out))
        }
        _ => Err(Error::Unsupported(format!("projection onto {set:?} for this distribution family"))),
    }
}

/// `η̃ - γg` applied directly to the Gaussian natural parameters.
fn natural_parameter_gradient_step(params: &HorizonParams, grad: &ParamGradient, gamma: f64) -> Result<HorizonParams> {
    let (HorizonParams::Gaussian(steps), ParamGradient::Natural(g)) = (params, grad) else {
        return Err(Error::Unsupported("natural-parameter step needs a Gaussian plan".into()));
    };
    let out = steps
        .iter()
        .zip(g)
        .enumerate()
        .map(|(h, (p, gh))| {
            let mut eta = p.to_natural();
            eta.linear -= &gh.mean * gamma;
            eta.quadratic = linalg::symmetrize(&(eta.quadratic - &gh.second_moment * gamma));
            GaussianParams::from_natural(&eta).map_err(|_| Error::InfeasibleStep { step: h })
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Gaussian(out))
}

/// `θ̃ - γF(θ̃)⁻¹g` with the Fisher information in closed form, block by
/// block over the horizon:
/// - Gaussian mean with covariance `Σ`: `F = Σ⁻¹`, so the step is `m̃ - γΣg`.
/// - Categorical probabilities: `F = diag(1/θ̃)`; the step is taken in that
///   metric and projected back onto the simplex in the same metric.
pub fn natural_gradient_step(params: &HorizonParams, grad: &ParamGradient, gamma: f64) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    if is_noop(grad, gamma) {
        return Ok(params.clone());
    }
    match params {
        HorizonParams::Gaussian(steps) => {
            let g = mean_blocks(grad)?;
            let out = steps
                .iter()
                .zip(g)
                .map(|(p, gh)| p.with_mean(p.mean() - p.covariance() * gh * gamma))
                .collect::<Result<_>>()?;
            Ok(HorizonParams::Gaussian(out))
        }
        HorizonParams::Categorical(steps) => {
            let g = prob_blocks(grad)?;
            let out = steps
                .iter()
                .zip(g)
                .enumerate()
                .map(|(h, (p, gh))| {
                    let theta = p.probs();
                    if theta.iter().any(|x| *x <= 0.0) {
                        return Err(Error::NotPositiveDefinite(format!(
                            "Fisher information of step {h} is singular (zero probability)"
                        )));
                    }
                    let target = theta - theta.component_mul(gh) * gamma;
                    CategoricalParams::new(linalg::project_simplex_weighted(&target, theta))
                })
                .collect::<Result<_>>()?;
            Ok(HorizonParams::Categorical(out))
        }
    }
}

/// `θ̃ - γA⁻¹g` on the stacked Gaussian means.
pub fn quadratic_custom_step(
    params: &HorizonParams,
    grad: &ParamGradient,
    a: &DMatrix<f64>,
    gamma: f64,
) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    mean_blocks(grad)?;
    let theta = params
        .stacked_means()
        .ok_or_else(|| Error::Unsupported("custom quadratic divergence on a categorical plan".into()))?;
    if a.nrows() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "divergence matrix is {}x{}, parameter has length {}",
            a.nrows(),
            a.ncols(),
            theta.len()
        )));
    }
    let chol = linalg::spd_cholesky(a, SYMMETRY_TOL, "divergence matrix")?;
    if is_noop(grad, gamma) {
        return Ok(params.clone());
    }
    let step = chol.solve(&grad.flatten());
    params.with_stacked_means(&(theta - step * gamma))
}

/// Exact minimizer `-R⁻¹r` of a quadratic per-round loss, written into the
/// stacked Gaussian means.
pub fn quadratic_exact_step(params: &HorizonParams, quad: &QuadraticLoss) -> Result<HorizonParams> {
    let theta = params
        .stacked_means()
        .ok_or_else(|| Error::Unsupported("quadratic exact step on a categorical plan".into()))?;
    if theta.len() != quad.dim() {
        return Err(Error::ShapeMismatch(format!(
            "quadratic loss has dimension {}, parameter has length {}",
            quad.dim(),
            theta.len()
        )));
    }
    linalg::spd_cholesky(&quad.r, SYMMETRY_TOL.max(crate::analytic::QUADRATIC_SYMMETRY_TOL), "R_t")?;
    params.with_stacked_means(&quad.minimizer())
}

/// `θ_h ∝ θ̃_h ⊙ exp(-γ g_h)` per step. The exponent is shifted by its
/// maximum before exponentiation; entries that fall below the probability
/// floor are raised to it.
pub fn exponentiated_gradient_step(params: &HorizonParams, grad: &ParamGradient, gamma: f64) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    let HorizonParams::Categorical(steps) = params else {
        return Err(Error::Unsupported("exponentiated gradient on a Gaussian plan".into()));
    };
    let g = prob_blocks(grad)?;
    if is_noop(grad, gamma) {
        return Ok(params.clone());
    }
    let out = steps
        .iter()
        .zip(g)
        .enumerate()
        .map(|(h, (p, gh))| {
            if p.probs().iter().any(|x| *x <= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "exponentiated gradient needs positive probabilities (step {h})"
                )));
            }
            let logits = p.probs().map(f64::ln) - gh * gamma;
            let max = logits.max();
            let e = logits.map(|x| (x - max).exp());
            let probs = &e / e.sum();
            let probs = if probs.iter().any(|x| *x < PROB_FLOOR) {
                linalg::floor_and_normalize(&probs, PROB_FLOOR)
            } else {
                probs
            };
            CategoricalParams::new(probs)
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Categorical(out))
}

/// KL-proximal step in natural parameters, evaluated through its dual:
/// the new expectation parameters are `μ̃ - γg` (valid whenever the result is
/// a Gaussian moment pair). With a frozen covariance only the mean block is
/// moved.
pub fn kl_natural_step(
    params: &HorizonParams,
    grad: &ParamGradient,
    gamma: f64,
    update_covariance: bool,
) -> Result<HorizonParams> {
    check_gamma(gamma)?;
    grad.check_matches(params)?;
    let (HorizonParams::Gaussian(steps), ParamGradient::Natural(g)) = (params, grad) else {
        return Err(Error::Unsupported(
            "KL natural-parameter step needs a Gaussian plan and a natural gradient".into(),
        ));
    };
    if is_noop(grad, gamma) {
        return Ok(params.clone());
    }
    let out = steps
        .iter()
        .zip(g)
        .enumerate()
        .map(|(h, (p, gh))| {
            let mean = p.mean() - &gh.mean * gamma;
            if update_covariance {
                let second_moment = linalg::symmetrize(&(p.second_moment() - &gh.second_moment * gamma));
                GaussianParams::from_expectation(&GaussianMoments { mean, second_moment })
                    .map_err(|_| Error::InfeasibleStep { step: h })
            } else {
                p.with_mean(mean)
            }
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Gaussian(out))
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::ShapeMismatch(format!("{} weights for {n} samples", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams("weights must be non-negative and sum to one".into()));
    }
    Ok(())
}

fn gaussian_steps(params: &HorizonParams) -> Result<&[GaussianParams]> {
    params
        .as_gaussian()
        .ok_or_else(|| Error::Unsupported("moment update on a categorical plan".into()))
}

fn weighted_moments(batch: &RolloutBatch, weights: &[f64], h: usize, dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut first = DVector::zeros(dim);
    let mut second = DMatrix::zeros(dim, dim);
    for (seq, w) in batch.sequences.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let Control::Continuous(u) = seq.control(h) else {
            unreachable!("sequences validated against a Gaussian plan")
        };
        for i in 0..dim {
            first[i] += w * u[i];
            for j in 0..dim {
                second[(i, j)] += w * u[i] * u[j];
            }
        }
    }
    (first, second)
}

/// Convex combination of the previous moments and the weighted sample
/// moments: `m ← (1-γ)m̃ + γΣw_i û_i`, and likewise for `S` when the
/// covariance is updated.
pub fn gaussian_moment_step(
    params: &HorizonParams,
    batch: &RolloutBatch,
    weights: &[f64],
    gamma: f64,
    update_covariance: bool,
) -> Result<HorizonParams> {
    let steps = gaussian_steps(params)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParams(format!("moment step size must lie in (0, 1], got {gamma}")));
    }
    check_weights(weights, batch.len())?;
    for seq in &batch.sequences {
        params.check_sequence(seq)?;
    }
    let dim = params.step_dim();
    let out = steps
        .iter()
        .enumerate()
        .map(|(h, p)| {
            let (first, second) = weighted_moments(batch, weights, h, dim);
            let mean = p.mean() * (1.0 - gamma) + first * gamma;
            if update_covariance {
                let second_moment = linalg::symmetrize(&(p.second_moment() * (1.0 - gamma) + second * gamma));
                GaussianParams::from_expectation(&GaussianMoments { mean, second_moment })
                    .map_err(|_| Error::InfeasibleStep { step: h })
            } else {
                p.with_mean(mean)
            }
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Gaussian(out))
}

/// Cross-entropy method: mean and second moment set to the empirical moments
/// of the samples with cost at most `c_max`.
pub fn cem_step(params: &HorizonParams, batch: &RolloutBatch, c_max: f64) -> Result<HorizonParams> {
    let steps = gaussian_steps(params)?;
    let elites: Vec<usize> = (0..batch.len())
        .filter(|&i| batch.costs[i].is_finite() && batch.costs[i] <= c_max)
        .collect();
    if elites.is_empty() {
        return Err(Error::EmptyEliteSet { threshold: c_max });
    }
    let k = elites.len() as f64;
    let dim = params.step_dim();
    let out = steps
        .iter()
        .enumerate()
        .map(|(h, _)| {
            let mut mean = DVector::zeros(dim);
            let mut second = DMatrix::zeros(dim, dim);
            for &i in &elites {
                let seq = &batch.sequences[i];
                params.check_sequence(seq)?;
                let Control::Continuous(u) = seq.control(h) else { unreachable!() };
                let u = DVector::from_column_slice(u);
                second += &u * u.transpose();
                mean += u;
            }
            let moments = GaussianMoments {
                mean: mean / k,
                second_moment: linalg::symmetrize(&(second / k)),
            };
            GaussianParams::from_expectation(&moments).map_err(|_| Error::InfeasibleStep { step: h })
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Gaussian(out))
}

/// MPPI with step size: `m ← (1-γ)m̃ + γ Σ_i e^{-C_i/λ} û_i / Σ_j e^{-C_j/λ}`,
/// covariance untouched.
pub fn mppi_step(params: &HorizonParams, batch: &RolloutBatch, lambda: f64, gamma: f64) -> Result<HorizonParams> {
    let steps = gaussian_steps(params)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParams(format!("MPPI step size must lie in (0, 1], got {gamma}")));
    }
    let c_min = batch.costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !c_min.is_finite() {
        return Err(Error::DegenerateUtility);
    }
    let raw: Vec<f64> = batch
        .costs
        .iter()
        .map(|c| if c.is_finite() { (-(c - c_min) / lambda).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    let dim = params.step_dim();
    let out = steps
        .iter()
        .enumerate()
        .map(|(h, p)| {
            let mut avg = DVector::zeros(dim);
            for (seq, r) in batch.sequences.iter().zip(&raw) {
                params.check_sequence(seq)?;
                let Control::Continuous(u) = seq.control(h) else { unreachable!() };
                avg += DVector::from_column_slice(u) * *r;
            }
            p.with_mean(p.mean() * (1.0 - gamma) + avg * (gamma / total))
        })
        .collect::<Result<_>>()?;
    Ok(HorizonParams::Gaussian(out))
}
