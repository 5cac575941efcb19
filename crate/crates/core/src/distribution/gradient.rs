use nalgebra::{DMatrix, DVector};

use super::{Control, ControlSequence, HorizonParams};
use crate::error::{Error, Result};

/// Coordinates in which a gradient of the plan is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Categorical probability vectors (expectation parameters).
    Probabilities,
    /// Gaussian means with covariances held fixed.
    Mean,
    /// Gaussian natural parameters; the score is `φ(u) - μ`.
    Natural,
}

/// Per-step gradient with respect to the Gaussian natural parameter,
/// expressed through the sufficient statistics: the `u` block and the `u uᵀ`
/// block of `φ(u) - μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGradient {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
}

/// A gradient over the whole horizon, shaped like the parameterization it
/// was taken in.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGradient {
    Probabilities(Vec<DVector<f64>>),
    Mean(Vec<DVector<f64>>),
    Natural(Vec<MomentGradient>),
}

impl ParamGradient {
    pub fn zeros(params: &HorizonParams, param: Parameterization) -> Result<Self> {
        let h = params.horizon();
        let d = params.step_dim();
        match (params, param) {
            (HorizonParams::Categorical(_), Parameterization::Probabilities) => {
                Ok(ParamGradient::Probabilities(vec![DVector::zeros(d); h]))
            }
            (HorizonParams::Gaussian(_), Parameterization::Mean) => {
                Ok(ParamGradient::Mean(vec![DVector::zeros(d); h]))
            }
            (HorizonParams::Gaussian(_), Parameterization::Natural) => Ok(ParamGradient::Natural(
                vec![
                    MomentGradient {
                        mean: DVector::zeros(d),
                        second_moment: DMatrix::zeros(d, d),
                    };
                    h
                ],
            )),
            _ => Err(Error::Unsupported(format!(
                "{param:?} parameterization for this distribution family"
            ))),
        }
    }

    pub fn parameterization(&self) -> Parameterization {
        match self {
            ParamGradient::Probabilities(_) => Parameterization::Probabilities,
            ParamGradient::Mean(_) => Parameterization::Mean,
            ParamGradient::Natural(_) => Parameterization::Natural,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ParamGradient::Probabilities(s) | ParamGradient::Mean(s) => s.len(),
            ParamGradient::Natural(s) => s.len(),
        }
    }

    /// Errors unless this gradient has the horizon and step shape of `params`.
    pub fn check_matches(&self, params: &HorizonParams) -> Result<()> {
        let expected = ParamGradient::zeros(params, self.parameterization())?;
        if expected.flatten().len() != self.flatten().len() || self.horizon() != params.horizon() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of horizon {} does not match plan of horizon {} and step dimension {}",
                self.horizon(),
                params.horizon(),
                params.step_dim()
            )));
        }
        Ok(())
    }

    /// All coordinates stacked into one vector (step-major; matrix blocks
    /// column-major).
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::new();
        match self {
            ParamGradient::Probabilities(s) | ParamGradient::Mean(s) => {
                for v in s {
                    out.extend(v.iter());
                }
            }
            ParamGradient::Natural(s) => {
                for b in s {
                    out.extend(b.mean.iter());
                    out.extend(b.second_moment.iter());
                }
            }
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the shape template.
    pub fn unflatten_like(&self, flat: &DVector<f64>) -> Result<Self> {
        let mut offset = 0;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if offset + n > flat.len() {
                return Err(Error::ShapeMismatch("flat vector too short".into()));
            }
            let out = flat.as_slice()[offset..offset + n].to_vec();
            offset += n;
            Ok(out)
        };
        let out = match self {
            ParamGradient::Probabilities(s) => ParamGradient::Probabilities(
                s.iter().map(|v| take(v.len()).map(DVector::from_vec)).collect::<Result<_>>()?,
            ),
            ParamGradient::Mean(s) => ParamGradient::Mean(
                s.iter().map(|v| take(v.len()).map(DVector::from_vec)).collect::<Result<_>>()?,
            ),
            ParamGradient::Natural(s) => ParamGradient::Natural(
                s.iter()
                    .map(|b| {
                        let d = b.mean.len();
                        Ok(MomentGradient {
                            mean: DVector::from_vec(take(d)?),
                            second_moment: DMatrix::from_vec(d, d, take(d * d)?),
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        if offset != flat.len() {
            return Err(Error::ShapeMismatch("flat vector too long".into()));
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let flat = self.flatten() * factor;
        self.unflatten_like(&flat).expect("same shape")
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.flatten().dot(&other.flatten())
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().amax()
    }
}

enum Acc {
    Probabilities { probs: Vec<DVector<f64>>, sums: Vec<DVector<f64>> },
    Mean { means: Vec<DVector<f64>>, precisions: Vec<DMatrix<f64>>, sums: Vec<DVector<f64>> },
    Natural { moments: Vec<(DVector<f64>, DMatrix<f64>)>, sums: Vec<MomentGradient> },
}

/// Accumulates `Σ_i c_i ∇_θ log π_θ(û_i)` without materializing each score.
pub struct ScoreAccumulator<'p> {
    params: &'p HorizonParams,
    acc: Acc,
    total_coef: f64,
}

impl<'p> ScoreAccumulator<'p> {
    pub fn new(params: &'p HorizonParams, param: Parameterization) -> Result<Self> {
        let h = params.horizon();
        let d = params.step_dim();
        let acc = match (params, param) {
            (HorizonParams::Categorical(steps), Parameterization::Probabilities) => Acc::Probabilities {
                probs: steps.iter().map(|c| c.guarded_probs()).collect(),
                sums: vec![DVector::zeros(d); h],
            },
            (HorizonParams::Gaussian(steps), Parameterization::Mean) => Acc::Mean {
                means: steps.iter().map(|g| g.mean().clone()).collect(),
                precisions: steps.iter().map(|g| g.precision()).collect(),
                sums: vec![DVector::zeros(d); h],
            },
            (HorizonParams::Gaussian(steps), Parameterization::Natural) => Acc::Natural {
                moments: steps.iter().map(|g| (g.mean().clone(), g.second_moment())).collect(),
                sums: vec![
                    MomentGradient {
                        mean: DVector::zeros(d),
                        second_moment: DMatrix::zeros(d, d),
                    };
                    h
                ],
            },
            _ => {
                return Err(Error::Unsupported(format!(
                    "{param:?} parameterization for this distribution family"
                )))
            }
        };
        Ok(Self {
            params,
            acc,
            total_coef: 0.0,
        })
    }

    pub fn add(&mut self, seq: &ControlSequence, coef: f64) -> Result<()> {
        self.params.check_sequence(seq)?;
        match &mut self.acc {
            Acc::Probabilities { probs, sums } => {
                let HorizonParams::Categorical(steps) = self.params else { unreachable!() };
                for h in 0..probs.len() {
                    let Control::Discrete(k) = seq.control(h) else { unreachable!() };
                    if steps[h].probs()[k] == 0.0 {
                        return Err(Error::ZeroProbability { step: h, index: k });
                    }
                    sums[h][k] += coef / probs[h][k];
                }
            }
            Acc::Mean { sums, .. } => {
                for (h, sum) in sums.iter_mut().enumerate() {
                    let Control::Continuous(u) = seq.control(h) else { unreachable!() };
                    for (s, x) in sum.iter_mut().zip(u) {
                        *s += coef * x;
                    }
                }
            }
            Acc::Natural { sums, .. } => {
                for (h, sum) in sums.iter_mut().enumerate() {
                    let Control::Continuous(u) = seq.control(h) else { unreachable!() };
                    let d = u.len();
                    for i in 0..d {
                        sum.mean[i] += coef * u[i];
                        for j in 0..d {
                            sum.second_moment[(i, j)] += coef * u[i] * u[j];
                        }
                    }
                }
            }
        }
        self.total_coef += coef;
        Ok(())
    }

    /// Mean and natural scores are centered (`u - m`, `uuᵀ - S`); the
    /// centering term `Σ c_i` times the moment is subtracted once here.
    pub fn finish(self) -> ParamGradient {
        let c = self.total_coef;
        match self.acc {
            Acc::Probabilities { sums, .. } => ParamGradient::Probabilities(sums),
            Acc::Mean { means, precisions, sums } => ParamGradient::Mean(
                sums.into_iter()
                    .zip(means.iter().zip(&precisions))
                    .map(|(s, (m, p))| p * (s - m * c))
                    .collect(),
            ),
            Acc::Natural { moments, sums } => ParamGradient::Natural(
                sums.into_iter()
                    .zip(&moments)
                    .map(|(s, (m, sm))| MomentGradient {
                        mean: s.mean - m * c,
                        second_moment: s.second_moment - sm * c,
                    })
                    .collect(),
            ),
        }
    }
}
