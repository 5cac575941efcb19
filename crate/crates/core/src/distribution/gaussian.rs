use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, SYMMETRY_TOL};

/// Expectation parameters of a Gaussian: the first and second moments
/// `(m, S)` with `S = Σ + m mᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
}

/// Natural parameters of a Gaussian: `(Σ⁻¹ m, -½ Σ⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNatural {
    pub linear: DVector<f64>,
    pub quadratic: DMatrix<f64>,
}

/// A multivariate Gaussian with a full SPD covariance and its cached
/// Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for GaussianParams {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.covariance == other.covariance
    }
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParams("gaussian mean has dimension 0".into()));
        }
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("gaussian mean is not finite".into()));
        }
        let chol = linalg::spd_cholesky(&covariance, SYMMETRY_TOL, "covariance")?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    /// Gaussian with covariance `variance · I`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let m = mean.len();
        Self::new(mean, DMatrix::identity(m, m) * variance)
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::isotropic(DVector::from_element(1, mean), variance)
    }

    /// Same covariance (and factorization), new mean.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "new mean has dimension {}, expected {}",
                mean.len(),
                self.dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("gaussian mean is not finite".into()));
        }
        Ok(Self {
            mean,
            covariance: self.covariance.clone(),
            chol: self.chol.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn precision(&self) -> DMatrix<f64> {
        linalg::symmetrize(&self.chol.inverse())
    }

    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.covariance + &self.mean * self.mean.transpose()
    }

    pub fn to_expectation(&self) -> GaussianMoments {
        GaussianMoments {
            mean: self.mean.clone(),
            second_moment: self.second_moment(),
        }
    }

    pub fn to_natural(&self) -> GaussianNatural {
        let precision = self.precision();
        GaussianNatural {
            linear: &precision * &self.mean,
            quadratic: precision * -0.5,
        }
    }

    /// Recovers `Σ = S - m mᵀ` (symmetrized) and validates it.
    pub fn from_expectation(moments: &GaussianMoments) -> Result<Self> {
        let cov = &moments.second_moment - &moments.mean * moments.mean.transpose();
        Self::new(moments.mean.clone(), linalg::symmetrize(&cov))
    }

    pub fn from_natural(natural: &GaussianNatural) -> Result<Self> {
        let neg_two = natural.quadratic.clone() * -2.0;
        let precision_chol = linalg::spd_cholesky(&neg_two, SYMMETRY_TOL, "-2 x quadratic natural block")?;
        let cov = linalg::symmetrize(&precision_chol.inverse());
        let mean = precision_chol.solve(&natural.linear);
        Self::new(mean, cov)
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(u) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        let m = self.dim() as f64;
        -0.5 * z.norm_squared() - 0.5 * linalg::log_det_spd(&self.chol) - 0.5 * m * (2.0 * PI).ln()
    }

    /// Draws `mean + L z` with `z ~ N(0, I)` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let m = self.dim();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let l = self.chol.l_dirty();
        for i in 0..m {
            let mut acc = self.mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += l[(i, j)] * zj;
            }
            out[i] = acc;
        }
    }
}
