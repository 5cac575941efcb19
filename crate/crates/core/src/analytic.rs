//! Exact quadratic per-round losses for linear dynamics with quadratic costs.
//!
//! Over an `H`-step horizon the stacked states satisfy
//! `x̂ = F x₀ + G û + L ŵ`, so for a Dirac control distribution at `θ` both
//! the expected cost (LQR) and the exponential-utility loss (LEQR) are
//! quadratic in `θ`. These serve as ground truth for the sampled machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag};

/// Tolerance for accepting quadratic-loss matrices as symmetric.
pub const QUADRATIC_SYMMETRY_TOL: f64 = 1e-10;

/// `x_{t+1} = A x_t + B u_t + w_t`, `w_t ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() || b.nrows() != n || b.ncols() == 0 || w.nrows() != n || w.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "A {}x{}, B {}x{}, W {}x{} are inconsistent",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        let noise_factor = linalg::spd_cholesky(&w, QUADRATIC_SYMMETRY_TOL, "W")?.l();
        Ok(Self { a, b, w, noise_factor })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Lower Cholesky factor of `W`; `w = factor · z` for standard normal `z`.
    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.noise_factor
    }
}

/// The stacked convolution matrices and block cost/noise matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub horizon: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    /// `(H+1)n × n`, block `h` is `A^h`.
    pub f: DMatrix<f64>,
    /// `(H+1)n × Hm`, block `(h, j)` is `A^{h-1-j} B` for `j < h`.
    pub g: DMatrix<f64>,
    /// `(H+1)n × Hn`, block `(h, j)` is `A^{h-1-j}` for `j < h`.
    pub l: DMatrix<f64>,
    /// `diag(Q, …, Q, Q_end)`.
    pub block_q: DMatrix<f64>,
    /// `diag(R, …, R)`.
    pub block_r: DMatrix<f64>,
    /// `diag(W, …, W)`.
    pub block_w: DMatrix<f64>,
}

fn check_psd(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::ShapeMismatch(format!("{what} must be {n}x{n}")));
    }
    if linalg::relative_asymmetry(m) > QUADRATIC_SYMMETRY_TOL {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    let eig = linalg::symmetrize(m).symmetric_eigenvalues();
    if eig.iter().any(|e| *e < -1e-12 * m.amax().max(1.0)) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not positive semi-definite")));
    }
    Ok(())
}

pub fn build_stacked(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_end: &DMatrix<f64>,
    horizon: usize,
) -> Result<StackedSystem> {
    if horizon == 0 {
        return Err(Error::InvalidParams("horizon must be at least 1".into()));
    }
    let n = sys.state_dim();
    let m = sys.control_dim();
    check_psd(q, n, "Q")?;
    check_psd(q_end, n, "Q_end")?;
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::ShapeMismatch(format!("R must be {m}x{m}")));
    }
    linalg::spd_cholesky(r, QUADRATIC_SYMMETRY_TOL, "R")?;

    let mut powers = vec![DMatrix::identity(n, n)];
    for h in 1..=horizon {
        let next = &sys.a * &powers[h - 1];
        powers.push(next);
    }
    let mut f = DMatrix::zeros((horizon + 1) * n, n);
    let mut g = DMatrix::zeros((horizon + 1) * n, horizon * m);
    let mut l = DMatrix::zeros((horizon + 1) * n, horizon * n);
    for h in 0..=horizon {
        f.view_mut((h * n, 0), (n, n)).copy_from(&powers[h]);
        for j in 0..h {
            let p = &powers[h - 1 - j];
            g.view_mut((h * n, j * m), (n, m)).copy_from(&(p * &sys.b));
            l.view_mut((h * n, j * n), (n, n)).copy_from(p);
        }
    }
    let mut qs: Vec<&DMatrix<f64>> = vec![q; horizon];
    qs.push(q_end);
    Ok(StackedSystem {
        horizon,
        state_dim: n,
        control_dim: m,
        f,
        g,
        l,
        block_q: block_diag(&qs),
        block_r: block_diag(&vec![r; horizon]),
        block_w: block_diag(&vec![&sys.w; horizon]),
    })
}

impl StackedSystem {
    /// `F x₀ + G û + L ŵ`.
    pub fn states(&self, x0: &DVector<f64>, controls: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.f * x0 + &self.g * controls + &self.l * noise
    }

    /// `L W Lᵀ`, the covariance of the stacked states.
    pub fn state_covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.l * &self.block_w * self.l.transpose()))
    }

    /// `C = ½ x̂ᵀ Q x̂ + ½ ûᵀ R û`.
    pub fn cost(&self, states: &DVector<f64>, controls: &DVector<f64>) -> f64 {
        0.5 * states.dot(&(&self.block_q * states)) + 0.5 * controls.dot(&(&self.block_r * controls))
    }

    fn check_x0(&self, x0: &DVector<f64>) -> Result<()> {
        if x0.len() != self.state_dim {
            return Err(Error::ShapeMismatch(format!(
                "x0 has dimension {}, expected {}",
                x0.len(),
                self.state_dim
            )));
        }
        Ok(())
    }
}

/// `ℓ(θ) = ½ θᵀ R θ + rᵀ θ + constant` with `R` symmetric positive-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub r: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadraticLoss {
    pub fn new(r: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        if r.nrows() != linear.len() {
            return Err(Error::ShapeMismatch(format!(
                "R is {}x{} but r has length {}",
                r.nrows(),
                r.ncols(),
                linear.len()
            )));
        }
        linalg::spd_cholesky(&r, QUADRATIC_SYMMETRY_TOL, "R_t")?;
        Ok(Self {
            r: linalg::symmetrize(&r),
            linear,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.r * theta)) + self.linear.dot(theta) + self.constant
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.r * theta + &self.linear
    }

    /// `-R⁻¹ r`.
    pub fn minimizer(&self) -> DVector<f64> {
        let chol = linalg::spd_cholesky(&self.r, QUADRATIC_SYMMETRY_TOL, "R_t").expect("validated at construction");
        -chol.solve(&self.linear)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r: &self.r * factor,
            linear: &self.linear * factor,
            constant: self.constant * factor,
        }
    }
}

/// Expected-cost loss under a Dirac policy:
/// `R_t = GᵀQG + R`, `r_t = GᵀQF x₀`, constant `½x₀ᵀFᵀQFx₀ + ½tr(Q LWLᵀ)`.
pub fn lqr_quadratic(stacked: &StackedSystem, x0: &DVector<f64>) -> Result<QuadraticLoss> {
    stacked.check_x0(x0)?;
    let (f, g, q) = (&stacked.f, &stacked.g, &stacked.block_q);
    let gtq = g.transpose() * q;
    let fx = f * x0;
    let r_t = &gtq * g + &stacked.block_r;
    let r_vec = &gtq * &fx;
    let constant = 0.5 * fx.dot(&(q * &fx)) + 0.5 * (q * stacked.state_covariance()).trace();
    QuadraticLoss::new(r_t, r_vec, constant)
}

/// Risk-seeking loss `-log E[exp(-C/λ)]` under a Dirac policy.
///
/// The first stacked state equals `x₀` and carries no noise, so `LWLᵀ` is
/// singular; the Gaussian identity is applied to the remaining `H` states
/// with covariance `Σ₁` and the `x₀` term goes into the constant. The
/// resulting kernel `K = Σ₁⁻¹ - (Σ₁Q'Σ₁ + Σ₁)⁻¹` with `Q' = Q/λ` is evaluated
/// in the equivalent form `Q'(I + Σ₁Q')⁻¹`, which avoids cancellation for
/// large `λ`. The log-determinant term `½log|Q'Σ₁ + I|` does not depend on
/// `θ` and is kept in the constant.
pub fn leqr_quadratic(stacked: &StackedSystem, x0: &DVector<f64>, lambda: f64) -> Result<QuadraticLoss> {
    stacked.check_x0(x0)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
    }
    let n = stacked.state_dim;
    let rows = stacked.horizon * n;
    let sigma = stacked.state_covariance();
    let sigma1 = sigma.view((n, n), (rows, rows)).into_owned();
    linalg::spd_cholesky(&sigma1, QUADRATIC_SYMMETRY_TOL, "noise kernel L W Lᵀ (future block)")?;

    let q_scaled = &stacked.block_q / lambda;
    let q0 = q_scaled.view((0, 0), (n, n)).into_owned();
    let q1 = q_scaled.view((n, n), (rows, rows)).into_owned();
    let f1 = stacked.f.rows(n, rows).into_owned();
    let g1 = stacked.g.rows(n, rows).into_owned();

    let inner = DMatrix::identity(rows, rows) + &sigma1 * &q1;
    let inner_lu = inner.clone().lu();
    let inner_inv = inner_lu
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("I + Σ₁Q' is singular".into()))?;
    let kernel = linalg::symmetrize(&(&q1 * inner_inv));
    let log_det = inner.determinant().ln();

    let g1tk = g1.transpose() * &kernel;
    let f1x = &f1 * x0;
    let r_t = &g1tk * &g1 + &stacked.block_r / lambda;
    let r_vec = &g1tk * &f1x;
    let constant = 0.5 * x0.dot(&(&q0 * x0)) + 0.5 * f1x.dot(&(&kernel * &f1x)) + 0.5 * log_det;
    QuadraticLoss::new(r_t, r_vec, constant)
}

/// `E[exp(-½ xᵀAx - bᵀx)]` for `x ~ N(μ, Σ)`, in closed form:
/// `|AΣ + I|^{-½} exp(-½(μᵀΣ⁻¹μ - (Σ⁻¹μ - b)ᵀ(A + Σ⁻¹)⁻¹(Σ⁻¹μ - b)))`.
pub fn gaussian_exp_quadratic(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    let n = mu.len();
    if sigma.nrows() != n || a.nrows() != n || a.ncols() != n || b.len() != n {
        return Err(Error::ShapeMismatch("gaussian_exp_quadratic operands disagree in dimension".into()));
    }
    check_psd(a, n, "A")?;
    let sigma_inv = linalg::spd_inverse(sigma, QUADRATIC_SYMMETRY_TOL, "Sigma")?;
    let precision = a + &sigma_inv;
    let precision_chol = linalg::spd_cholesky(&linalg::symmetrize(&precision), QUADRATIC_SYMMETRY_TOL, "A + Sigma^-1")?;
    let shifted = &sigma_inv * mu - b;
    let quad = mu.dot(&(&sigma_inv * mu)) - shifted.dot(&precision_chol.solve(&shifted));
    let det = (a * sigma + DMatrix::identity(n, n)).determinant();
    Ok(det.powf(-0.5) * (-0.5 * quad).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn horizon_one_blocks() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let i2 = DMatrix::identity(2, 2);
        let s = build_stacked(&sys, &i2, &scalar(1.0), &i2, 1).unwrap();
        assert_eq!(s.f.rows(0, 2), i2);
        assert_eq!(s.f.rows(2, 2), sys.a);
        assert_eq!(s.g.rows(0, 2), DMatrix::zeros(2, 1));
        assert_eq!(s.g.rows(2, 2), sys.b);
        assert_eq!(s.l.rows(0, 2), DMatrix::zeros(2, 2));
        assert_eq!(s.l.rows(2, 2), i2);
    }

    #[test]
    fn integrator_hand_recursion() {
        let sys = LtiSystem::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let s = build_stacked(&sys, &scalar(1.0), &scalar(1.0), &scalar(1.0), 2).unwrap();
        let x = s.states(&DVector::zeros(1), &DVector::from_vec(vec![1.0, 1.0]), &DVector::zeros(2));
        assert_eq!(x.as_slice(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn scalar_lqr_by_hand() {
        let sys = LtiSystem::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let s = build_stacked(&sys, &scalar(1.0), &scalar(1.0), &scalar(1.0), 1).unwrap();
        let x0 = DVector::from_element(1, 3.0);
        let loss = lqr_quadratic(&s, &x0).unwrap();
        assert_eq!(loss.r[(0, 0)], 2.0);
        assert_eq!(loss.linear[0], 3.0);
        assert!((loss.minimizer()[0] + 1.5).abs() < 1e-15);
        // ½(x0² + x0²) + ½·tr(QΣ) with Σ = diag(0, 1)
        assert!((loss.constant - (9.0 + 0.5)).abs() < 1e-12);
        let zero = lqr_quadratic(&s, &DVector::zeros(1)).unwrap();
        assert_eq!(zero.linear[0], 0.0);
        assert_eq!(zero.minimizer()[0], 0.0);
    }

    #[test]
    fn leqr_zero_state_has_zero_linear_term() {
        let sys = LtiSystem::new(scalar(0.9), scalar(0.5), scalar(0.2)).unwrap();
        let s = build_stacked(&sys, &scalar(1.0), &scalar(0.3), &scalar(2.0), 3).unwrap();
        let loss = leqr_quadratic(&s, &DVector::zeros(1), 2.0).unwrap();
        assert!(loss.linear.amax() == 0.0);
    }

    #[test]
    fn fact_two_simple_values() {
        let one = DVector::zeros(1);
        assert!((gaussian_exp_quadratic(&one, &scalar(1.0), &scalar(0.0), &one).unwrap() - 1.0).abs() < 1e-15);
        let v = gaussian_exp_quadratic(&one, &scalar(1.0), &scalar(1.0), &one).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(LtiSystem::new(scalar(1.0), DMatrix::zeros(2, 1), scalar(1.0)).is_err());
        assert!(LtiSystem::new(scalar(1.0), scalar(1.0), scalar(-1.0)).is_err());
        let sys = LtiSystem::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        assert!(build_stacked(&sys, &scalar(1.0), &scalar(0.0), &scalar(1.0), 2).is_err());
        assert!(build_stacked(&sys, &scalar(1.0), &scalar(1.0), &scalar(1.0), 0).is_err());
        assert!(QuadraticLoss::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2), 0.0).is_err());
    }
}
