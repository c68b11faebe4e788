//! Truth oracles: population `θ*`, the realized bias term, risk and selection counts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dgp::DgpSpec;
use super::rng::{Role, StreamKey};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::model::ModelSpec;

/// Population quantities of a working model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStar {
    /// Solution of `E[e¹ x a(x)] = E[e¹ x xᵀ] θ*`.
    pub theta: DVector<f64>,
    /// `E[xᵀθ* | d¹ = 1] = E[e¹ xᵀθ*] / E[e¹]`.
    pub att: f64,
    /// Monte Carlo sample size.
    pub mc_size: usize,
}

/// Monte Carlo sample size used by default.
pub const DEFAULT_MC_SIZE: usize = 1_000_000;

/// Solves the population normal equations by Monte Carlo over fresh covariate draws,
/// weighting by the true propensity and regressing the true `a(x)`.
pub fn theta_star_oracle(spec: &DgpSpec, working: &ModelSpec, mc_size: usize, key: StreamKey) -> Result<ThetaStar> {
    let l = spec.family.n_covariates();
    working.validate(l)?;
    if mc_size == 0 {
        return Err(Error::Argument("mc_size must be positive".into()));
    }
    let p = working.dim();
    let off = usize::from(working.include_intercept());
    let mut rng = key.rng(Role::Oracle);
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut e_sum = 0.0;
    let mut raw = alloc::vec![0.0; l];
    let mut xw = alloc::vec![0.0; p];
    for _ in 0..mc_size {
        for v in raw.iter_mut() {
            *v = 2.0 * rng.random::<f64>();
        }
        let e = spec.propensity(&raw);
        let a = spec.att_function(&raw);
        if off == 1 {
            xw[0] = 1.0;
        }
        for (k, &j) in working.selected().iter().enumerate() {
            xw[k + off] = raw[j];
        }
        for j in 0..p {
            let ej = e * xw[j];
            rhs[j] += ej * a;
            for k in j..p {
                gram[(k, j)] += ej * xw[k];
            }
        }
        e_sum += e;
    }
    for j in 0..p {
        for k in (j + 1)..p {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    let factor = SpdFactor::new(&symmetrize(&gram), "Monte Carlo Gram matrix").map_err(|e| match e {
        Error::Rank { condition, columns, .. } => Error::Rank {
            what: "Monte Carlo Gram matrix (increase mc_size)".into(),
            condition,
            columns,
        },
        other => other,
    })?;
    let theta = factor.solve(&rhs);
    // With an intercept the first Gram column is Σ e x; otherwise take a second pass.
    let att = if off == 1 {
        gram.column(0).dot(&theta) / e_sum
    } else {
        let mut rng = key.rng(Role::Oracle);
        let mut acc = 0.0;
        for _ in 0..mc_size {
            for v in raw.iter_mut() {
                *v = 2.0 * rng.random::<f64>();
            }
            let e = spec.propensity(&raw);
            let fit: f64 = working.selected().iter().enumerate().map(|(k, &j)| raw[j] * theta[k]).sum();
            acc += e * fit;
        }
        acc / e_sum
    };
    Ok(ThetaStar {
        theta,
        att,
        mc_size,
    })
}

/// Realized bias term `2 Σ e¹_i (ρ_iΔ_i − x_iᵀθ*) x_iᵀ(θ̂ − θ*)`, with `e¹` and `ρ`
/// taken from the estimated (or known) propensity.
pub fn bias_term(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    e1: &DVector<f64>,
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
) -> f64 {
    let fit_star = x * theta_star;
    let diff = x * (theta_hat - theta_star);
    (0..x.nrows())
        .map(|i| {
            let rho = if d[i] { 1.0 / e1[i] } else { -1.0 / (1.0 - e1[i]) };
            2.0 * e1[i] * (rho * delta[i] - fit_star[i]) * diff[i]
        })
        .sum()
}

/// `Σ e¹_true,i (x_iᵀθ* − x_iᵀθ̂)²` with `θ̂` already padded to the full working model.
pub fn empirical_risk(theta_hat: &DVector<f64>, theta_star: &DVector<f64>, x: &DMatrix<f64>, e1_true: &DVector<f64>) -> f64 {
    let diff = x * (theta_star - theta_hat);
    diff.iter().zip(e1_true.iter()).map(|(r, e)| e * r * r).sum()
}

/// True and false positives of a selected model (intercept excluded).
pub fn tp_fp(selected: &ModelSpec, truth: &[usize]) -> (usize, usize) {
    let tp = selected.selected().iter().filter(|j| truth.contains(j)).count();
    (tp, selected.selected().len() - tp)
}
