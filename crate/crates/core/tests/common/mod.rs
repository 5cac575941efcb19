#![allow(dead_code)]

use dmd_mpc_core::distribution::{GaussianParams, HorizonParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `M Mᵀ + εI` with `M` standard normal: well conditioned for small `n`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, eps: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = &m * m.transpose() + DMatrix::identity(n, n) * eps;
    (&a + a.transpose()) * 0.5
}

pub fn random_gaussian_plan(rng: &mut ChaCha8Rng, horizon: usize, dim: usize) -> HorizonParams {
    let steps = (0..horizon)
        .map(|_| GaussianParams::new(normal_vec(rng, dim), random_spd(rng, dim, 0.5)).unwrap())
        .collect();
    HorizonParams::gaussian(steps).unwrap()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Scalar LTI rollout cost `½Σ(q x² + r u²) + ½ q_end x_H²`, stepped by hand.
#[allow(clippy::too_many_arguments)]
pub fn scalar_lqr_cost(a: f64, b: f64, q: f64, r: f64, q_end: f64, x0: f64, u: &[f64], w: &[f64]) -> f64 {
    let mut x = x0;
    let mut c = 0.0;
    for (uh, wh) in u.iter().zip(w) {
        c += 0.5 * (q * x * x + r * uh * uh);
        x = a * x + b * uh + wh;
    }
    c + 0.5 * q_end * x * x
}
