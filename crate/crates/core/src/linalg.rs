//! Half-vectorization and small dense symmetric solves.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Condition-number gate applied to every symmetric solve.
pub const CONDITION_GATE: f64 = 1e12;

/// Symmetry tolerance for [`vech`], relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Length of `vech` of a `p × p` matrix.
#[inline]
pub const fn vech_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Recovers `p` from a `vech` length, if it is triangular.
pub fn vech_dim(len: usize) -> Option<usize> {
    let mut p = 0;
    while vech_len(p) < len {
        p += 1;
    }
    (vech_len(p) == len).then_some(p)
}

/// Stacks the lower triangle column by column: `(S11, S21, …, Sp1, S22, …, Spp)`.
pub fn vech(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(Error::Dimension(format!(
            "vech needs a square matrix, got {}x{}",
            p,
            s.ncols()
        )));
    }
    let scale = s.amax().max(1.0);
    let mut asym = 0.0f64;
    for j in 0..p {
        for i in (j + 1)..p {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut out = Vec::with_capacity(vech_len(p));
    for j in 0..p {
        for i in j..p {
            out.push(s[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Inverse of [`vech`]: rebuilds the symmetric matrix.
pub fn unvech(v: &[f64]) -> Result<DMatrix<f64>> {
    let p = vech_dim(v.len())
        .ok_or_else(|| Error::Dimension(format!("{} is not a triangular number", v.len())))?;
    let mut s = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            s[(i, j)] = v[k];
            s[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(s)
}

/// Writes `vech(x xᵀ)` into `out` without forming the outer product.
#[inline]
pub fn vech_outer_into(x: &[f64], out: &mut [f64]) {
    let p = x.len();
    debug_assert_eq!(out.len(), vech_len(p));
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            out[k] = x[i] * x[j];
            k += 1;
        }
    }
}

/// Largest absolute asymmetry `|A_ij − A_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Averages `A` with its transpose.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factor of a diagonally equilibrated symmetric positive-definite matrix.
///
/// The condition number reported and gated is that of `D A D` with
/// `D = diag(A)^{-1/2}`, so column scaling alone never trips the gate.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
    condition: f64,
}

impl SpdFactor {
    /// Factors `a`, failing with a rank error above [`CONDITION_GATE`].
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        Self::with_gate(a, what, CONDITION_GATE)
    }

    /// Factors `a` with a caller-chosen condition gate.
    pub fn with_gate(a: &DMatrix<f64>, what: &str, gate: f64) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p || p == 0 {
            return Err(Error::Dimension(format!(
                "{what}: expected a non-empty square matrix, got {}x{}",
                p,
                a.ncols()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Rank {
                what: what.to_string(),
                condition: f64::INFINITY,
                columns: Vec::new(),
            });
        }
        let mut scale = DVector::zeros(p);
        let mut zero_cols = Vec::new();
        for j in 0..p {
            let d = a[(j, j)];
            if d > 0.0 {
                scale[j] = 1.0 / sqrt(d);
            } else {
                zero_cols.push(j);
            }
        }
        if !zero_cols.is_empty() {
            return Err(Error::Rank {
                what: what.to_string(),
                condition: f64::INFINITY,
                columns: zero_cols,
            });
        }
        let mut eq = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in 0..p {
                eq[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]) * scale[i] * scale[j];
            }
        }
        let (condition, null_dir) = condition_and_null(&eq);
        if !(condition <= gate) {
            return Err(Error::Rank {
                what: what.to_string(),
                condition,
                columns: suspect_columns(&null_dir),
            });
        }
        let chol = Cholesky::new(eq).ok_or_else(|| Error::Rank {
            what: what.to_string(),
            condition,
            columns: suspect_columns(&null_dir),
        })?;
        Ok(Self {
            chol,
            scale,
            condition,
        })
    }

    /// Condition number of the equilibrated matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.component_mul(&self.scale);
        self.chol.solve_mut(&mut y);
        y.component_mul(&self.scale)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = b.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        self.chol.solve_mut(&mut y);
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        y
    }

    /// Explicit inverse, used only where a matrix (not a solve) is the output.
    pub fn inverse(&self) -> DMatrix<f64> {
        let p = self.scale.len();
        symmetrize(&self.solve_matrix(&DMatrix::identity(p, p)))
    }
}

/// Condition number of a symmetric matrix and the eigenvector of its smallest eigenvalue.
pub fn condition_and_null(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut imin = 0;
    let mut lmin = f64::INFINITY;
    let mut lmax = 0.0f64;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l < lmin {
            lmin = l;
            imin = i;
        }
        lmax = lmax.max(l.abs());
    }
    let cond = if lmin <= 0.0 {
        f64::INFINITY
    } else {
        lmax / lmin
    };
    (cond, eig.eigenvectors.column(imin).into_owned())
}

/// Symmetric condition number (eigenvalue ratio); infinite when not positive definite.
pub fn sym_condition(a: &DMatrix<f64>) -> f64 {
    condition_and_null(a).0
}

fn suspect_columns(null_dir: &DVector<f64>) -> Vec<usize> {
    let m = null_dir.amax();
    (0..null_dir.len())
        .filter(|&j| null_dir[j].abs() >= 0.25 * m)
        .collect()
}

/// Linear-interpolation sample quantile (Hyndman–Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
