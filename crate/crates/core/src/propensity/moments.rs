//! Second-order balancing moments, their Jacobian and the GMM objective.
//!
//! Per unit, `h_i = (vech(H¹_i), vech(H⁰_i))` with
//! `H¹ = e¹{d¹/e¹ − 1}xxᵀ` and `H⁰ = e¹{d⁰/e⁰ − 1}xxᵀ`, so `q = p(p + 1)`.

use alloc::format;
use alloc::vec;

use nalgebra::{DMatrix, DVector};

use super::{check_dims, clip};
use crate::error::{Error, Result};
use crate::linalg::vech_len;
use crate::math::sigmoid;

/// Number of moment conditions for a `p`-column design.
#[inline]
pub const fn moment_dim(p: usize) -> usize {
    p * (p + 1)
}

/// Scalar multipliers of `xxᵀ` in `H¹` and `H⁰` for one unit.
#[inline]
pub(crate) fn unit_coefficients(e: f64, treated: bool) -> (f64, f64) {
    let (d1, d0) = if treated { (1.0, 0.0) } else { (0.0, 1.0) };
    (e * (d1 / e - 1.0), e * (d0 / (1.0 - e) - 1.0))
}

/// Derivatives of the multipliers with respect to `xᵀα`.
#[inline]
fn unit_derivatives(e: f64, treated: bool) -> (f64, f64) {
    let w = e * (1.0 - e);
    let d0 = if treated { 0.0 } else { e / (1.0 - e) };
    (-w, d0 - w)
}

fn check(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> Result<()> {
    check_dims(alpha.len(), x)?;
    if d.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} treatment indicators for {} rows",
            d.len(),
            x.nrows()
        )));
    }
    Ok(())
}

/// Moments and (optionally) their Jacobian, accumulated in one pass.
pub(crate) struct MomentEval {
    /// `h_n(α)`, length `q`.
    pub h: DVector<f64>,
    /// `G_n(α)`, `q × p`; empty when not requested.
    pub g: DMatrix<f64>,
    /// Number of clamped predictions.
    pub clipped: usize,
}

pub(crate) fn evaluate(
    alpha: &DVector<f64>,
    x: &DMatrix<f64>,
    d: &[bool],
    jacobian: bool,
) -> MomentEval {
    let (n, p) = x.shape();
    let m = vech_len(p);
    let q = 2 * m;
    let eta = x * alpha;
    let mut h = vec![0.0; q];
    let mut g = if jacobian {
        DMatrix::zeros(q, p)
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut row = vec![0.0; p];
    let mut v = vec![0.0; m];
    let mut clipped = 0;
    for i in 0..n {
        let (e, c) = clip(sigmoid(eta[i]));
        clipped += usize::from(c);
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        crate::linalg::vech_outer_into(&row, &mut v);
        let (c1, c0) = unit_coefficients(e, d[i]);
        for k in 0..m {
            h[k] += c1 * v[k];
            h[m + k] += c0 * v[k];
        }
        if jacobian {
            let (g1, g0) = unit_derivatives(e, d[i]);
            for j in 0..p {
                let a1 = g1 * row[j];
                let a0 = g0 * row[j];
                let mut col = g.column_mut(j);
                for k in 0..m {
                    col[k] += a1 * v[k];
                    col[m + k] += a0 * v[k];
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let h = DVector::from_vec(h) * inv_n;
    if jacobian {
        g *= inv_n;
    }
    MomentEval { h, g, clipped }
}

/// Per-unit moment matrix (`n × q`); row `i` is `(vech(H¹_i), vech(H⁰_i))`.
pub fn moment_h(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> Result<DMatrix<f64>> {
    check(alpha, x, d)?;
    let (n, p) = x.shape();
    let m = vech_len(p);
    let eta = x * alpha;
    let mut out = DMatrix::zeros(n, 2 * m);
    let mut row = vec![0.0; p];
    let mut v = vec![0.0; m];
    for i in 0..n {
        let (e, _) = clip(sigmoid(eta[i]));
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        crate::linalg::vech_outer_into(&row, &mut v);
        let (c1, c0) = unit_coefficients(e, d[i]);
        for k in 0..m {
            out[(i, k)] = c1 * v[k];
            out[(i, m + k)] = c0 * v[k];
        }
    }
    Ok(out)
}

/// `h_n(α)`: column means of [`moment_h`].
pub fn moment_mean(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> Result<DVector<f64>> {
    check(alpha, x, d)?;
    Ok(evaluate(alpha, x, d, false).h)
}

/// `G_n(α) = ∂h_n/∂αᵀ`, a `q × p` matrix, using `∂e¹/∂α = e¹(1 − e¹)x`.
pub fn moment_jacobian(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> Result<DMatrix<f64>> {
    check(alpha, x, d)?;
    Ok(evaluate(alpha, x, d, true).g)
}

/// `h_n(α)ᵀ W h_n(α)`.
pub fn gmm_objective(
    alpha: &DVector<f64>,
    x: &DMatrix<f64>,
    d: &[bool],
    w: &DMatrix<f64>,
) -> Result<f64> {
    check(alpha, x, d)?;
    let q = moment_dim(x.ncols());
    if w.shape() != (q, q) {
        return Err(Error::Dimension(format!(
            "weight matrix is {}x{}, expected {q}x{q}",
            w.nrows(),
            w.ncols()
        )));
    }
    let h = evaluate(alpha, x, d, false).h;
    Ok(h.dot(&(w * &h)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_by_hand() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let a = DVector::zeros(1);
        let h = moment_h(&a, &x, &[true]).unwrap();
        assert_eq!(h.row(0).iter().copied().collect::<alloc::vec::Vec<_>>(), vec![0.5, -0.5]);
        let g = moment_jacobian(&a, &x, &[true]).unwrap();
        assert!((g[(0, 0)] + 0.25).abs() < 1e-15);
        // H⁰ = −e for a treated unit, so its derivative is −e(1 − e).
        assert!((g[(1, 0)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_zeroes_h1() {
        let (c1, _) = unit_coefficients(1.0, true);
        assert_eq!(c1, 0.0);
    }

    #[test]
    fn saturated_tail_kills_h1_derivative() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let a = DVector::from_element(1, 40.0);
        let g = moment_jacobian(&a, &x, &[true]).unwrap();
        assert!(g[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn objective_identity_is_squared_norm() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, 1.7, 1.0, 0.9]);
        let d = [true, false, false];
        let a = DVector::from_vec(vec![0.2, -0.4]);
        let h = moment_mean(&a, &x, &d).unwrap();
        let w = DMatrix::identity(6, 6);
        let f = gmm_objective(&a, &x, &d, &w).unwrap();
        assert!((f - h.norm_squared()).abs() < 1e-15);
        assert!(gmm_objective(&a, &x, &d, &DMatrix::identity(5, 5)).is_err());
    }
}
