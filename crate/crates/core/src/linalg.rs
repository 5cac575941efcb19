//! Small dense linear-algebra helpers shared by the distribution, update and
//! analytic modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest absolute asymmetry `|a_ij - a_ji|` relative to the largest entry.
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// Rejects matrices that are not square, not symmetric within `tol`
/// (relative), or whose factorization fails.
pub fn spd_cholesky(a: &DMatrix<f64>, tol: f64, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    let asym = relative_asymmetry(a);
    if asym > tol {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} asymmetric (relative {asym:.3e})"
        )));
    }
    let chol = Cholesky::new(symmetrize(a))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{what} factorization failed")))?;
    if chol.l_dirty().diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has a non-positive pivot")));
    }
    Ok(chol)
}

pub fn spd_inverse(a: &DMatrix<f64>, tol: f64, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&spd_cholesky(a, tol, what)?.inverse()))
}

pub fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    v.map(|x| (x - tau).max(0.0))
}

/// Projection onto the simplex under the metric `diag(1/scale)`:
/// `argmin_p sum_k (p_k - target_k)^2 / scale_k` with `p` on the simplex.
///
/// The KKT solution is `p_k = max(0, target_k + scale_k * nu)` for the scalar
/// `nu` that makes the entries sum to one; `nu` is found by bisection.
pub fn project_simplex_weighted(target: &DVector<f64>, scale: &DVector<f64>) -> DVector<f64> {
    let total = |nu: f64| -> f64 {
        target
            .iter()
            .zip(scale.iter())
            .map(|(t, s)| (t + s * nu).max(0.0))
            .sum()
    };
    let smin = scale.min().max(f64::MIN_POSITIVE);
    let span = target.iter().map(|t| t.abs()).fold(1.0, f64::max) / smin + 1.0;
    let (mut lo, mut hi) = (-span, span);
    while total(lo) > 1.0 {
        lo *= 2.0;
    }
    while total(hi) < 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    let nu = 0.5 * (lo + hi);
    let p = DVector::from_iterator(
        target.len(),
        target.iter().zip(scale.iter()).map(|(t, s)| (t + s * nu).max(0.0)),
    );
    let sum = p.sum();
    p / sum
}

/// Clamp entries below `floor` up to `floor` and renormalize to sum one.
pub fn floor_and_normalize(p: &DVector<f64>, floor: f64) -> DVector<f64> {
    let clamped = p.map(|x| x.max(floor));
    let sum = clamped.sum();
    clamped / sum
}

/// Block-diagonal matrix from a list of square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_of_equal_excess() {
        let p = project_simplex(&DVector::from_vec(vec![0.6, 0.6]));
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn simplex_projection_clips_negative_mass() {
        let p = project_simplex(&DVector::from_vec(vec![2.0, 0.0, -1.0]));
        assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn weighted_projection_with_unit_scale_matches_euclidean() {
        let v = DVector::from_vec(vec![0.9, 0.4, -0.2, 0.05]);
        let a = project_simplex(&v);
        let b = project_simplex_weighted(&v, &DVector::from_element(4, 1.0));
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(spd_cholesky(&asym, SYMMETRY_TOL, "a").is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_cholesky(&indef, SYMMETRY_TOL, "a").is_err());
    }
}
