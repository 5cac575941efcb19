//! Per-round losses and their sampled likelihood-ratio gradients.
//!
//! Every estimator here has the form `Σ_i c_i ∇log π_θ(û_i)`: for the
//! expected cost `c_i = (C_i - b)/n`, and for the two utility losses
//! `c_i = -w_i` with `w_i ∝ U(C_i)` normalized to sum to one.

use serde::{Deserialize, Serialize};

use crate::distribution::{HorizonParams, ParamGradient, Parameterization, ScoreAccumulator};
use crate::error::{Error, Result};
use crate::simulation::RolloutBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `U(C) = 𝟙{C ≤ C_max}` with a fixed `C_max`.
    Fixed(f64),
    /// `C_max` is the largest cost among the `⌈fraction·n⌉` cheapest samples.
    EliteFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `ℓ = E[C]`.
    ExpectedCost { use_baseline: bool },
    /// `ℓ = -log P(C ≤ C_max)`.
    ProbLowCost { threshold: ThresholdMode },
    /// `ℓ = -log E[exp(-C/λ)]`.
    ExpUtility { lambda: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::ExpectedCost { use_baseline: true }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::ExpectedCost { .. } => Ok(()),
            LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(c) } if c.is_finite() => Ok(()),
            LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(f) } if f > 0.0 && f <= 1.0 => Ok(()),
            LossSpec::ExpUtility { lambda } if lambda > 0.0 && lambda.is_finite() => Ok(()),
            other => Err(Error::InvalidParams(format!("invalid loss specification {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::ExpectedCost { .. } => "expected_cost",
            LossSpec::ProbLowCost { .. } => "prob_low_cost",
            LossSpec::ExpUtility { .. } => "exp_utility",
        }
    }

    /// The scalar loss parameter (threshold, elite fraction or λ), if any.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            LossSpec::ExpectedCost { .. } => None,
            LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(c) } => Some(c),
            LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(f) } => Some(f),
            LossSpec::ExpUtility { lambda } => Some(lambda),
        }
    }

    /// The same loss with its scalar parameter replaced.
    pub fn with_parameter(&self, value: f64) -> Self {
        match *self {
            LossSpec::ExpectedCost { use_baseline } => LossSpec::ExpectedCost { use_baseline },
            LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(_) } => {
                LossSpec::ProbLowCost { threshold: ThresholdMode::Fixed(value) }
            }
            LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(_) } => {
                LossSpec::ProbLowCost { threshold: ThresholdMode::EliteFraction(value) }
            }
            LossSpec::ExpUtility { .. } => LossSpec::ExpUtility { lambda: value },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub direction: ParamGradient,
    /// Per-sample weights: the normalized utilities for utility losses, the
    /// score coefficients `(C_i - b)/n` for the expected cost.
    pub weights: Vec<f64>,
    pub baseline: f64,
    pub effective_sample_size: f64,
    pub loss_value_estimate: f64,
    /// The indicator threshold actually used, for the low-cost loss.
    pub threshold: Option<f64>,
}

/// Largest cost among the `⌈fraction·n⌉` smallest.
pub fn adaptive_threshold(costs: &[f64], elite_fraction: f64) -> f64 {
    assert!(!costs.is_empty(), "adaptive_threshold needs at least one cost");
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let count = ((elite_fraction * costs.len() as f64).ceil() as usize).clamp(1, costs.len());
    sorted[count - 1]
}

fn resolve_threshold(costs: &[f64], mode: ThresholdMode) -> f64 {
    match mode {
        ThresholdMode::Fixed(c) => c,
        ThresholdMode::EliteFraction(f) => adaptive_threshold(costs, f),
    }
}

struct Utilities {
    weights: Vec<f64>,
    /// `-log mean U(C_i)`.
    loss_value: f64,
    threshold: Option<f64>,
}

fn utilities(costs: &[f64], loss: &LossSpec) -> Result<Utilities> {
    loss.validate()?;
    let n = costs.len() as f64;
    let (raw, log_scale, threshold) = match *loss {
        LossSpec::ExpectedCost { .. } => {
            return Err(Error::Unsupported("utility weights of the expected-cost loss".into()))
        }
        LossSpec::ProbLowCost { threshold } => {
            let c_max = resolve_threshold(costs, threshold);
            let raw: Vec<f64> = costs
                .iter()
                .map(|c| if c.is_finite() && *c <= c_max { 1.0 } else { 0.0 })
                .collect();
            (raw, 0.0, Some(c_max))
        }
        LossSpec::ExpUtility { lambda } => {
            let c_min = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
            if !c_min.is_finite() {
                return Err(Error::DegenerateUtility);
            }
            let raw: Vec<f64> = costs
                .iter()
                .map(|c| if c.is_finite() { (-(c - c_min) / lambda).exp() } else { 0.0 })
                .collect();
            (raw, c_min / lambda, None)
        }
    };
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateUtility);
    }
    Ok(Utilities {
        weights: raw.iter().map(|u| u / total).collect(),
        loss_value: log_scale - (total / n).ln(),
        threshold,
    })
}

/// Normalized utility weights `w_i = U(C_i) / Σ_j U(C_j)`. Non-finite costs
/// get zero utility. The exponential utility is evaluated as
/// `exp(-(C_i - min_j C_j)/λ)`, which leaves the normalized weights unchanged.
pub fn utility_weights(costs: &[f64], loss: &LossSpec) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::InvalidParams("no costs".into()));
    }
    Ok(utilities(costs, loss)?.weights)
}

/// `1 / Σ w_i²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Likelihood-ratio estimate of `∇ℓ(θ)` at the parameters the batch was
/// sampled from, in the requested parameterization.
pub fn estimate_gradient(
    batch: &RolloutBatch,
    params: &HorizonParams,
    loss: &LossSpec,
    param: Parameterization,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidParams("empty rollout batch".into()));
    }
    loss.validate()?;
    let n = batch.len() as f64;
    let mut acc = ScoreAccumulator::new(params, param)?;
    match *loss {
        LossSpec::ExpectedCost { use_baseline } => {
            if batch.costs.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteCost);
            }
            let mean = batch.costs.iter().sum::<f64>() / n;
            let baseline = if use_baseline { mean } else { 0.0 };
            let coefs: Vec<f64> = batch.costs.iter().map(|c| (c - baseline) / n).collect();
            for (seq, c) in batch.sequences.iter().zip(&coefs) {
                acc.add(seq, *c)?;
            }
            Ok(GradientEstimate {
                direction: acc.finish(),
                weights: coefs,
                baseline,
                effective_sample_size: n,
                loss_value_estimate: mean,
                threshold: None,
            })
        }
        _ => {
            let u = utilities(&batch.costs, loss)?;
            for (seq, w) in batch.sequences.iter().zip(&u.weights) {
                if *w != 0.0 {
                    acc.add(seq, -w)?;
                } else {
                    params.check_sequence(seq)?;
                }
            }
            Ok(GradientEstimate {
                direction: acc.finish(),
                effective_sample_size: effective_sample_size(&u.weights),
                weights: u.weights,
                baseline: 0.0,
                loss_value_estimate: u.loss_value,
                threshold: u.threshold,
            })
        }
    }
}
