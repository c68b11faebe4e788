//! Covariate-balancing GMM: BFGS on `h_nᵀ W h_n`, identity or two-step optimal weighting.

use alloc::format;
use alloc::string::ToString;

use nalgebra::{DMatrix, DVector};

use super::moments::{evaluate, moment_dim, moment_h, MomentEval};
use super::{check_classes, fit_mle, LogisticPropensity, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, sym_condition, symmetrize, SpdFactor};

/// Condition number of `Ω` above which the optimal weight is flagged as near-singular.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e10;

/// Choice of `W_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weighting {
    /// `W_n = I`.
    Identity,
    /// Two-step GMM with `W_n = (Ω̂ + ridge·I)⁻¹`.
    Optimal,
}

/// Where the optimizer started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSource {
    /// The maximum-likelihood solution.
    Mle,
    /// The zero vector (MLE failed).
    Zero,
    /// A caller-supplied vector.
    Supplied,
}

/// GMM settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CbdOptions {
    /// Identity or optimal weighting.
    pub weighting: Weighting,
    /// Starting point; the MLE when `None`.
    pub init: Option<DVector<f64>>,
    /// First-order-condition tolerance (see [`CbdFit::foc_tolerance`]).
    pub tol: f64,
    /// Quasi-Newton iteration cap per GMM step.
    pub max_iter: usize,
    /// Ridge added to `Ω̂`, relative to `trace(Ω̂)/q`.
    pub ridge: f64,
    /// Balance moments of RMS-scaled columns, which makes `α̂` equivariant to
    /// rescaling covariates. Identity weighting on the scaled moments equals raw
    /// weighting with `W = diag(1/(s_i s_j))²`.
    pub standardize: bool,
}

impl Default for CbdOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Identity,
            init: None,
            tol: 1e-8,
            max_iter: 200,
            ridge: 1e-8,
            standardize: true,
        }
    }
}

impl CbdOptions {
    /// Defaults with the given weighting.
    pub fn new(weighting: Weighting) -> Self {
        Self {
            weighting,
            ..Self::default()
        }
    }
}

/// Covariate-balancing GMM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CbdFit {
    /// Fitted model.
    pub model: LogisticPropensity,
    /// Weighting mode.
    pub weighting: Weighting,
    /// The realized `W_n`.
    pub weight_matrix: DMatrix<f64>,
    /// `h_n(α̂)`.
    pub moment_residual: DVector<f64>,
    /// `‖h_n(α̂)‖_∞`.
    pub moment_sup_norm: f64,
    /// `G_n(α̂)` at the solution.
    pub jacobian: DMatrix<f64>,
    /// `‖G_n(α̂)ᵀ W_n h_n(α̂)‖_∞` in the optimizer's (scaled) coordinates.
    pub foc_norm: f64,
    /// Effective tolerance `tol · max(1, ‖G_nᵀW_n‖_∞)`: the first-order condition is
    /// measured in units of a unit imbalance in `h_n`, so it does not depend on the
    /// scale of the covariates or of `W_n`.
    pub foc_tolerance: f64,
    /// Objective at the solution.
    pub objective: f64,
    /// Objective at the initial point of the final step, under the final `W_n`.
    pub initial_objective: f64,
    /// Quasi-Newton iterations, summed over steps.
    pub iterations: usize,
    /// `foc_norm ≤ foc_tolerance`.
    pub converged: bool,
    /// Starting point of the first step.
    pub init: InitSource,
    /// Absolute ridge added to `Ω̂` (zero for identity weighting).
    pub ridge: f64,
    /// Condition number of `Ω̂` (one for identity weighting).
    pub omega_condition: f64,
    /// `Ω̂` was near-singular.
    pub near_singular_weight: bool,
    /// Predictions clamped at the solution.
    pub clipped: usize,
    /// Column scales `s_j` used by the optimizer (ones when not standardizing).
    pub column_scale: DVector<f64>,
}

struct Minimum {
    alpha: DVector<f64>,
    eval: MomentEval,
    f: f64,
    f0: f64,
    foc: f64,
    foc_tol: f64,
    iterations: usize,
}

/// Maximum absolute row sum.
fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[inline]
fn objective(eval: &MomentEval, w: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let wh = w * &eval.h;
    (eval.h.dot(&wh), wh)
}

/// BFGS with Armijo backtracking, inverse Hessian started at `(2GᵀWG)⁻¹`.
fn minimize(
    x: &DMatrix<f64>,
    d: &[bool],
    w: &DMatrix<f64>,
    alpha0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let p = alpha0.len();
    let mut alpha = alpha0;
    let mut eval = evaluate(&alpha, x, d, true);
    let (mut f, wh) = objective(&eval, w);
    let mut grad = eval.g.tr_mul(&wh) * 2.0;
    let f0 = f;
    let foc_tol_at = |g: &DMatrix<f64>| tol * row_sum_norm(&g.tr_mul(w)).max(1.0);
    let mut foc_tol = foc_tol_at(&eval.g);
    let gauss_newton = |g: &DMatrix<f64>, grad: &DVector<f64>| -> DMatrix<f64> {
        let gwg = symmetrize(&(g.tr_mul(&(w * g)) * 2.0));
        match SpdFactor::with_gate(&gwg, "GᵀWG", 1e14) {
            Ok(fac) => fac.inverse(),
            Err(_) => DMatrix::identity(p, p) / grad.amax().max(1.0),
        }
    };
    let mut hinv = gauss_newton(&eval.g, &grad);
    let mut fresh = true;
    let mut iterations = 0;

    while iterations < max_iter && 0.5 * grad.amax() > foc_tol {
        iterations += 1;
        let mut dir = -(&hinv * &grad);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(p, p) / grad.amax().max(1e-300);
            dir = -(&hinv * &grad);
            slope = grad.dot(&dir);
        }
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-12 {
            let cand = &alpha + &dir * t;
            let ev = evaluate(&cand, x, d, true);
            let (fc, whc) = objective(&ev, w);
            if fc.is_finite() && fc < f && fc <= f + 1e-4 * t * slope {
                next = Some((cand, ev, fc, whc));
                break;
            }
            t *= 0.5;
        }
        // Near the floor of floating-point resolution the objective stops decreasing
        // measurably; accept a full step when it shrinks the gradient without raising f.
        if next.is_none() {
            let cand = &alpha + &dir;
            let ev = evaluate(&cand, x, d, true);
            let (fc, whc) = objective(&ev, w);
            let gc = ev.g.tr_mul(&whc) * 2.0;
            if cand != alpha && fc.is_finite() && fc <= f * (1.0 + 1e-14) && gc.amax() < grad.amax() {
                next = Some((cand, ev, fc, whc));
                t = 1.0;
            }
        }
        let Some((cand, ev, fc, whc)) = next else {
            if fresh {
                break;
            }
            hinv = gauss_newton(&eval.g, &grad);
            fresh = true;
            continue;
        };
        fresh = false;
        let gc = ev.g.tr_mul(&whc) * 2.0;
        let s = &dir * t;
        let y = &gc - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        } else {
            hinv = gauss_newton(&ev.g, &gc);
            fresh = true;
        }
        alpha = cand;
        foc_tol = foc_tol_at(&ev.g);
        eval = ev;
        f = fc;
        grad = gc;
    }
    // Polish: Gauss-Newton steps while they keep shrinking the gradient.
    if 0.5 * grad.amax() <= foc_tol {
        for _ in 0..4 {
            let dir = -(gauss_newton(&eval.g, &grad) * &grad);
            let cand = &alpha + &dir;
            let ev = evaluate(&cand, x, d, true);
            let (fc, whc) = objective(&ev, w);
            let gc = ev.g.tr_mul(&whc) * 2.0;
            if !(fc.is_finite() && fc <= f * (1.0 + 1e-12) && gc.amax() < 0.5 * grad.amax()) {
                break;
            }
            alpha = cand;
            foc_tol = foc_tol_at(&ev.g);
            eval = ev;
            f = fc;
            grad = gc;
        }
    }
    Minimum {
        foc: 0.5 * grad.amax(),
        alpha,
        eval,
        f,
        f0,
        foc_tol,
        iterations,
    }
}

/// Root-mean-square of each column, with zero columns mapped to one.
fn column_scales(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().map(|c| {
            let s = libm::sqrt(c.norm_squared() / n);
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        }),
    )
}

/// Per-moment factors `1/(s_i s_j)` mapping raw moments to scaled ones.
fn moment_scales(s: &DVector<f64>) -> DVector<f64> {
    let p = s.len();
    let m = p * (p + 1) / 2;
    let mut k = DVector::zeros(2 * m);
    let mut idx = 0;
    for j in 0..p {
        for i in j..p {
            k[idx] = 1.0 / (s[i] * s[j]);
            k[m + idx] = k[idx];
            idx += 1;
        }
    }
    k
}

/// Fits `α̂^CB = argmin h_n(α)ᵀ W_n h_n(α)`.
///
/// Identity mode runs one BFGS minimization from the MLE (zeros if the MLE fails).
/// Optimal mode runs identity first, forms `Ω̂ = n⁻¹ Σ h_i h_iᵀ` at that solution,
/// sets `W_n = (Ω̂ + ridge·I)⁻¹` and minimizes again from the first-step solution.
/// With [`CbdOptions::standardize`] the minimization runs on RMS-scaled columns; the
/// returned `α̂`, `G_n`, `h_n` and `W_n` are expressed for the raw design.
/// Non-convergence is reported through [`CbdFit::converged`], not as an error.
pub fn fit_cbd(x: &DMatrix<f64>, d: &[bool], opts: &CbdOptions) -> Result<CbdFit> {
    let (n, p) = x.shape();
    check_classes(d, n)?;
    if p == 0 {
        return Err(Error::Dimension("design has no columns".to_string()));
    }
    let q = moment_dim(p);
    let scale = if opts.standardize {
        column_scales(x)
    } else {
        DVector::from_element(p, 1.0)
    };
    let mut xs = x.clone();
    for (j, mut c) in xs.column_iter_mut().enumerate() {
        c /= scale[j];
    }
    let (alpha0, init) = match &opts.init {
        Some(a) => {
            if a.len() != p {
                return Err(Error::Dimension(format!(
                    "initial vector has length {}, design has {p} columns",
                    a.len()
                )));
            }
            (a.component_mul(&scale), InitSource::Supplied)
        }
        None => match fit_mle(&xs, d) {
            Ok(m) if m.model.alpha.iter().all(|v| v.is_finite()) => (m.model.alpha, InitSource::Mle),
            Ok(_) | Err(_) => (DVector::zeros(p), InitSource::Zero),
        },
    };

    let identity = DMatrix::identity(q, q);
    let step1 = minimize(&xs, d, &identity, alpha0, opts.tol, opts.max_iter);
    let (w, last, ridge, omega_condition, near_singular, iters) = match opts.weighting {
        Weighting::Identity => (identity, step1, 0.0, 1.0, false, 0),
        Weighting::Optimal => {
            let hi = moment_h(&step1.alpha, &xs, d)?;
            let omega = symmetrize(&(hi.tr_mul(&hi) / n as f64));
            let ridge = opts.ridge * omega.trace() / q as f64;
            let omega_condition = sym_condition(&omega);
            let near_singular = !(omega_condition <= NEAR_SINGULAR_CONDITION);
            let mut reg = omega;
            for k in 0..q {
                reg[(k, k)] += ridge;
            }
            let w = SpdFactor::with_gate(&reg, "optimal weight", f64::INFINITY)?.inverse();
            let step2 = minimize(&xs, d, &w, step1.alpha.clone(), opts.tol, opts.max_iter);
            let it1 = step1.iterations;
            (w, step2, ridge, omega_condition, near_singular, it1)
        }
    };
    debug_assert!(max_asymmetry(&w) <= 1e-8 * w.amax().max(1.0));
    // Back to raw coordinates: h = K⁻¹h_s, G = K⁻¹G_s S, W = K W_s K, α = S⁻¹α_s.
    let k = moment_scales(&scale);
    let h = last.eval.h.component_div(&k);
    let mut g = last.eval.g.clone();
    for (j, mut c) in g.column_iter_mut().enumerate() {
        c.component_div_assign(&k);
        c *= scale[j];
    }
    let mut w_raw = w;
    for i in 0..q {
        for j in 0..q {
            w_raw[(i, j)] *= k[i] * k[j];
        }
    }
    Ok(CbdFit {
        model: LogisticPropensity {
            alpha: last.alpha.component_div(&scale),
            provenance: Provenance::Cbd(opts.weighting),
        },
        weighting: opts.weighting,
        weight_matrix: w_raw,
        moment_sup_norm: h.amax(),
        moment_residual: h,
        jacobian: g,
        foc_norm: last.foc,
        foc_tolerance: last.foc_tol,
        objective: last.f,
        initial_objective: last.f0,
        iterations: iters + last.iterations,
        converged: last.foc <= last.foc_tol,
        init,
        ridge,
        omega_condition,
        near_singular_weight: near_singular,
        clipped: last.eval.clipped,
        column_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_unit_is_missing_class() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(
            fit_cbd(&x, &[true], &CbdOptions::default()),
            Err(Error::MissingClass)
        );
    }

    #[test]
    fn intercept_only_balances_exactly() {
        // With x = 1 both moments vanish at e = n1/n, the same point as the MLE.
        let x = DMatrix::from_element(10, 1, 1.0);
        let d: alloc::vec::Vec<bool> = (0..10).map(|i| i < 3).collect();
        let fit = fit_cbd(&x, &d, &CbdOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.moment_sup_norm < 1e-10);
        assert!((fit.model.alpha[0] - libm::log(3.0 / 7.0)).abs() < 1e-8);
    }
}
