//! Control distributions over an `H`-step plan.
//!
//! A plan distribution factorizes over the horizon: each step carries its own
//! basic distribution (Gaussian for continuous controls, categorical for
//! discrete ones), sampled independently.

mod categorical;
mod gaussian;
mod gradient;

pub use categorical::{CategoricalParams, PROB_FLOOR, SIMPLEX_TOL};
pub use gaussian::{GaussianMoments, GaussianNatural, GaussianParams};
pub use gradient::{MomentGradient, ParamGradient, Parameterization, ScoreAccumulator};

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};

/// Parameters of a single horizon step.
#[derive(Debug, Clone, PartialEq)]
pub enum BasicParams {
    Gaussian(GaussianParams),
    Categorical(CategoricalParams),
}

/// How the shift operator fills the vacated last step.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ShiftPolicy {
    /// Copy the (shifted) second-to-last step.
    #[default]
    RepeatLast,
    /// Reset the tail to a fixed default.
    Default(BasicParams),
}

/// One control of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control<'a> {
    Continuous(&'a [f64]),
    Discrete(usize),
}

/// An `H`-step control sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSequence {
    /// Row-major `H × dim` values.
    Continuous { dim: usize, values: Vec<f64> },
    Discrete(Vec<usize>),
}

impl ControlSequence {
    pub fn continuous(steps: &[Vec<f64>]) -> Self {
        let dim = steps.first().map_or(0, Vec::len);
        ControlSequence::Continuous {
            dim,
            values: steps.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ControlSequence::Continuous { dim, values } => values.len() / (*dim).max(1),
            ControlSequence::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn control(&self, h: usize) -> Control<'_> {
        match self {
            ControlSequence::Continuous { dim, values } => {
                Control::Continuous(&values[h * dim..(h + 1) * dim])
            }
            ControlSequence::Discrete(v) => Control::Discrete(v[h]),
        }
    }

    pub fn first(&self) -> Control<'_> {
        self.control(0)
    }
}

/// Expectation parameters of a whole plan.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpectationParams {
    Gaussian(Vec<GaussianMoments>),
    Categorical(Vec<DVector<f64>>),
}

/// Natural parameters of a whole plan.
#[derive(Debug, Clone, PartialEq)]
pub enum NaturalParams {
    Gaussian(Vec<GaussianNatural>),
    Categorical(Vec<DVector<f64>>),
}

/// The decision variable of one MPC round: a length-`H` sequence of
/// per-step distribution parameters, all of one family and dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum HorizonParams {
    Gaussian(Vec<GaussianParams>),
    Categorical(Vec<CategoricalParams>),
}

impl HorizonParams {
    pub fn gaussian(steps: Vec<GaussianParams>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        };
        let dim = first.dim();
        if steps.iter().any(|s| s.dim() != dim) {
            return Err(Error::ShapeMismatch("gaussian steps differ in dimension".into()));
        }
        Ok(HorizonParams::Gaussian(steps))
    }

    pub fn categorical(steps: Vec<CategoricalParams>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        };
        let m = first.num_categories();
        if steps.iter().any(|s| s.num_categories() != m) {
            return Err(Error::ShapeMismatch("categorical steps differ in size".into()));
        }
        Ok(HorizonParams::Categorical(steps))
    }

    /// `H` copies of one basic distribution.
    pub fn repeated(step: BasicParams, horizon: usize) -> Result<Self> {
        match step {
            BasicParams::Gaussian(g) => Self::gaussian(vec![g; horizon]),
            BasicParams::Categorical(c) => Self::categorical(vec![c; horizon]),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            HorizonParams::Gaussian(s) => s.len(),
            HorizonParams::Categorical(s) => s.len(),
        }
    }

    /// Control dimension (Gaussian) or number of categories (categorical).
    pub fn step_dim(&self) -> usize {
        match self {
            HorizonParams::Gaussian(s) => s[0].dim(),
            HorizonParams::Categorical(s) => s[0].num_categories(),
        }
    }

    pub fn step(&self, h: usize) -> BasicParams {
        match self {
            HorizonParams::Gaussian(s) => BasicParams::Gaussian(s[h].clone()),
            HorizonParams::Categorical(s) => BasicParams::Categorical(s[h].clone()),
        }
    }

    pub fn as_gaussian(&self) -> Option<&[GaussianParams]> {
        match self {
            HorizonParams::Gaussian(s) => Some(s),
            HorizonParams::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[CategoricalParams]> {
        match self {
            HorizonParams::Categorical(s) => Some(s),
            HorizonParams::Gaussian(_) => None,
        }
    }

    /// Gaussian means stacked into one `H·m` vector.
    pub fn stacked_means(&self) -> Option<DVector<f64>> {
        let steps = self.as_gaussian()?;
        Some(DVector::from_iterator(
            steps.len() * steps[0].dim(),
            steps.iter().flat_map(|g| g.mean().iter().copied()),
        ))
    }

    /// Replaces every Gaussian mean, keeping covariances.
    pub fn with_stacked_means(&self, means: &DVector<f64>) -> Result<Self> {
        let steps = self
            .as_gaussian()
            .ok_or_else(|| Error::Unsupported("stacked means of a categorical plan".into()))?;
        let m = steps[0].dim();
        if means.len() != steps.len() * m {
            return Err(Error::ShapeMismatch(format!(
                "stacked mean has length {}, expected {}",
                means.len(),
                steps.len() * m
            )));
        }
        let out = steps
            .iter()
            .enumerate()
            .map(|(h, g)| g.with_mean(means.rows(h * m, m).into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(HorizonParams::Gaussian(out))
    }

    /// Advances the plan one step: `result[h] = self[h+1]` and the tail is
    /// filled per `policy`.
    pub fn shift(&self, policy: &ShiftPolicy) -> Result<Self> {
        fn shifted<T: Clone>(steps: &[T], tail: Option<T>) -> Vec<T> {
            let mut out: Vec<T> = steps[1..].to_vec();
            out.push(tail.unwrap_or_else(|| steps[steps.len() - 1].clone()));
            out
        }
        match (self, policy) {
            (HorizonParams::Gaussian(s), ShiftPolicy::RepeatLast) => {
                Ok(HorizonParams::Gaussian(shifted(s, None)))
            }
            (HorizonParams::Categorical(s), ShiftPolicy::RepeatLast) => {
                Ok(HorizonParams::Categorical(shifted(s, None)))
            }
            (HorizonParams::Gaussian(s), ShiftPolicy::Default(BasicParams::Gaussian(d))) => {
                if d.dim() != s[0].dim() {
                    return Err(Error::ShapeMismatch("shift default has wrong dimension".into()));
                }
                Ok(HorizonParams::Gaussian(shifted(s, Some(d.clone()))))
            }
            (HorizonParams::Categorical(s), ShiftPolicy::Default(BasicParams::Categorical(d))) => {
                if d.num_categories() != s[0].num_categories() {
                    return Err(Error::ShapeMismatch("shift default has wrong size".into()));
                }
                Ok(HorizonParams::Categorical(shifted(s, Some(d.clone()))))
            }
            _ => Err(Error::ShapeMismatch(
                "shift default belongs to a different distribution family".into(),
            )),
        }
    }

    /// Draws one sequence, each step independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ControlSequence {
        match self {
            HorizonParams::Gaussian(steps) => {
                let dim = steps[0].dim();
                let mut values = vec![0.0; steps.len() * dim];
                for (g, out) in steps.iter().zip(values.chunks_mut(dim)) {
                    g.sample_into(rng, out);
                }
                ControlSequence::Continuous { dim, values }
            }
            HorizonParams::Categorical(steps) => {
                ControlSequence::Discrete(steps.iter().map(|c| c.sample(rng)).collect())
            }
        }
    }

    /// Draws `n` i.i.d. sequences.
    pub fn sample_controls<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<ControlSequence> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn check_sequence(&self, seq: &ControlSequence) -> Result<()> {
        if seq.len() != self.horizon() {
            return Err(Error::ShapeMismatch(format!(
                "sequence has length {}, plan horizon is {}",
                seq.len(),
                self.horizon()
            )));
        }
        match (self, seq) {
            (HorizonParams::Gaussian(s), ControlSequence::Continuous { dim, .. }) if *dim == s[0].dim() => Ok(()),
            (HorizonParams::Categorical(s), ControlSequence::Discrete(v)) => {
                match v.iter().position(|k| *k >= s[0].num_categories()) {
                    Some(h) => Err(Error::ShapeMismatch(format!(
                        "category {} at step {h} out of range",
                        v[h]
                    ))),
                    None => Ok(()),
                }
            }
            _ => Err(Error::ShapeMismatch("sequence does not match the plan family".into())),
        }
    }

    /// `log π_θ(û)`.
    pub fn log_prob(&self, seq: &ControlSequence) -> Result<f64> {
        self.check_sequence(seq)?;
        match self {
            HorizonParams::Gaussian(steps) => Ok(steps
                .iter()
                .enumerate()
                .map(|(h, g)| match seq.control(h) {
                    Control::Continuous(u) => g.log_density(u),
                    Control::Discrete(_) => unreachable!("checked above"),
                })
                .sum()),
            HorizonParams::Categorical(steps) => {
                let ControlSequence::Discrete(idx) = seq else {
                    unreachable!("checked above")
                };
                let mut total = 0.0;
                for (h, (c, &k)) in steps.iter().zip(idx).enumerate() {
                    total += c
                        .log_prob(k)
                        .ok_or(Error::ZeroProbability { step: h, index: k })?;
                }
                Ok(total)
            }
        }
    }

    /// `∇_θ log π_θ(û)` in the requested parameterization.
    pub fn log_prob_grad(&self, seq: &ControlSequence, param: Parameterization) -> Result<ParamGradient> {
        let mut acc = ScoreAccumulator::new(self, param)?;
        acc.add(seq, 1.0)?;
        Ok(acc.finish())
    }

    /// The most likely sequence: Gaussian means, categorical argmax.
    pub fn mode(&self) -> ControlSequence {
        match self {
            HorizonParams::Gaussian(steps) => ControlSequence::Continuous {
                dim: steps[0].dim(),
                values: steps.iter().flat_map(|g| g.mean().iter().copied()).collect(),
            },
            HorizonParams::Categorical(steps) => {
                ControlSequence::Discrete(steps.iter().map(CategoricalParams::mode).collect())
            }
        }
    }

    pub fn to_expectation(&self) -> ExpectationParams {
        match self {
            HorizonParams::Gaussian(s) => {
                ExpectationParams::Gaussian(s.iter().map(GaussianParams::to_expectation).collect())
            }
            HorizonParams::Categorical(s) => {
                ExpectationParams::Categorical(s.iter().map(|c| c.probs().clone()).collect())
            }
        }
    }

    pub fn to_natural(&self) -> NaturalParams {
        match self {
            HorizonParams::Gaussian(s) => {
                NaturalParams::Gaussian(s.iter().map(GaussianParams::to_natural).collect())
            }
            HorizonParams::Categorical(s) => {
                NaturalParams::Categorical(s.iter().map(CategoricalParams::to_natural).collect())
            }
        }
    }

    pub fn from_expectation(mu: &ExpectationParams) -> Result<Self> {
        match mu {
            ExpectationParams::Gaussian(s) => {
                Self::gaussian(s.iter().map(GaussianParams::from_expectation).collect::<Result<_>>()?)
            }
            ExpectationParams::Categorical(s) => Self::categorical(
                s.iter().map(|p| CategoricalParams::new(p.clone())).collect::<Result<_>>()?,
            ),
        }
    }

    pub fn from_natural(eta: &NaturalParams) -> Result<Self> {
        match eta {
            NaturalParams::Gaussian(s) => {
                Self::gaussian(s.iter().map(GaussianParams::from_natural).collect::<Result<_>>()?)
            }
            NaturalParams::Categorical(s) => {
                Self::categorical(s.iter().map(CategoricalParams::from_natural).collect::<Result<_>>()?)
            }
        }
    }
}
