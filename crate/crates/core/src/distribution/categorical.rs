use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Probabilities below this value are clamped up (then renormalized) before
/// any log-probability evaluation.
pub const PROB_FLOOR: f64 = 1e-12;

/// A categorical distribution over `{0, …, m-1}`, parameterized by its
/// probability vector (the expectation parameter of the indicator
/// sufficient statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    probs: DVector<f64>,
}

impl CategoricalParams {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParams("categorical with no categories".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParams(format!(
                "categorical probabilities must be finite and non-negative: {:?}",
                probs.as_slice()
            )));
        }
        let sum = probs.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParams(format!(
                "categorical probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParams("categorical with no categories".into()));
        }
        Self::new(DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    pub fn num_categories(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    /// Probabilities with positive entries raised to the numerical floor;
    /// exact zeros stay outside the support.
    pub fn guarded_probs(&self) -> DVector<f64> {
        if !self.probs.iter().any(|p| *p > 0.0 && *p < PROB_FLOOR) {
            return self.probs.clone();
        }
        let raised = self.probs.map(|p| if p > 0.0 { p.max(PROB_FLOOR) } else { 0.0 });
        let total = raised.sum();
        raised / total
    }

    /// `log p_k`; an exactly-zero probability is outside the support.
    pub fn log_prob(&self, k: usize) -> Option<f64> {
        if k >= self.probs.len() || self.probs[k] == 0.0 {
            return None;
        }
        Some(self.guarded_probs()[k].ln())
    }

    /// Natural parameters `η_k = log p_k` (log-partition `log Σ exp η`).
    pub fn to_natural(&self) -> DVector<f64> {
        self.guarded_probs().map(f64::ln)
    }

    pub fn from_natural(eta: &DVector<f64>) -> Result<Self> {
        let max = eta.max();
        if !max.is_finite() {
            return Err(Error::InvalidParams("non-finite categorical natural parameter".into()));
        }
        let e = eta.map(|x| (x - max).exp());
        let sum = e.sum();
        Self::new(e / sum)
    }

    /// Inverse-CDF draw from one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last_positive = self
            .probs
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(self.probs.len() - 1);
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                return k;
            }
        }
        last_positive
    }

    /// Argmax with ties broken toward the lowest index.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_off_simplex() {
        assert!(CategoricalParams::from_slice(&[0.5, 0.6]).is_err());
        assert!(CategoricalParams::from_slice(&[1.5, -0.5]).is_err());
        assert!(CategoricalParams::from_slice(&[]).is_err());
    }

    #[test]
    fn mode_tie_breaks_low() {
        assert_eq!(CategoricalParams::from_slice(&[0.5, 0.5]).unwrap().mode(), 0);
        assert_eq!(CategoricalParams::from_slice(&[0.2, 0.5, 0.3]).unwrap().mode(), 1);
    }

    #[test]
    fn zero_probability_has_no_log_prob() {
        let c = CategoricalParams::from_slice(&[1.0, 0.0]).unwrap();
        assert!(c.log_prob(1).is_none());
        assert_eq!(c.log_prob(0), Some(0.0));
    }

    #[test]
    fn tiny_probabilities_are_floored() {
        let c = CategoricalParams::from_slice(&[1.0 - 1e-20, 1e-20]).unwrap();
        let lp = c.log_prob(1).unwrap();
        assert!((lp - (1e-12f64 / (1.0 + 1e-12)).ln()).abs() < 1e-9);
    }
}
