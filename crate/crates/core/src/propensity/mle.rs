//! Maximum-likelihood logistic regression by damped Newton–Raphson.

use alloc::format;
use alloc::string::ToString;

use nalgebra::{DMatrix, DVector};

use super::{check_classes, check_dims, clip, LogisticPropensity, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::math::{sigmoid, softplus};

/// Linear predictors beyond this magnitude count as pinned probabilities.
const PINNED_ETA: f64 = 25.0;

/// Newton–Raphson settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    /// Score tolerance, per unit of column scale `max(1, max_i |x_ij|)`.
    pub tol: f64,
    /// Newton iteration cap.
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    /// Fitted model.
    pub model: LogisticPropensity,
    /// Sup-norm of the score `Σ (d¹_i − e¹_i) x_i`.
    pub score_norm: f64,
    /// Effective score tolerance after column scaling.
    pub tolerance: f64,
    /// `I(α̂) = n⁻¹ Σ e¹(1 − e¹) x xᵀ`.
    pub fisher_information: DMatrix<f64>,
    /// Log-likelihood at the solution.
    pub log_likelihood: f64,
    /// Newton iterations used.
    pub iterations: usize,
    /// Whether every score component met its tolerance.
    pub converged: bool,
}

/// Fits with [`MleOptions::default`].
pub fn fit_mle(x: &DMatrix<f64>, d: &[bool]) -> Result<MleFit> {
    fit_mle_with(x, d, &MleOptions::default())
}

/// Bernoulli log-likelihood `Σ d η − log(1 + e^η)`.
pub fn log_likelihood(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> Result<f64> {
    check_dims(alpha.len(), x)?;
    let eta = x * alpha;
    Ok(eta
        .iter()
        .zip(d)
        .map(|(&z, &t)| if t { z } else { 0.0 } - softplus(z))
        .sum())
}

struct NewtonState {
    score: DVector<f64>,
    info: DMatrix<f64>,
    max_eta: f64,
}

fn newton_state(alpha: &DVector<f64>, x: &DMatrix<f64>, d: &[bool]) -> NewtonState {
    let (n, p) = x.shape();
    let eta = x * alpha;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut row = alloc::vec![0.0; p];
    let mut max_eta = 0.0f64;
    for i in 0..n {
        max_eta = max_eta.max(eta[i].abs());
        let (e, _) = clip(sigmoid(eta[i]));
        let r = f64::from(u8::from(d[i])) - e;
        let w = e * (1.0 - e);
        for j in 0..p {
            row[j] = x[(i, j)];
        }
        for j in 0..p {
            score[j] += r * row[j];
            let wj = w * row[j];
            for k in j..p {
                info[(k, j)] += wj * row[k];
            }
        }
    }
    for j in 0..p {
        for k in (j + 1)..p {
            info[(j, k)] = info[(k, j)];
        }
    }
    NewtonState {
        score,
        info,
        max_eta,
    }
}

/// Newton–Raphson with step halving on the log-likelihood.
pub fn fit_mle_with(x: &DMatrix<f64>, d: &[bool], opts: &MleOptions) -> Result<MleFit> {
    let (n, p) = x.shape();
    check_classes(d, n)?;
    if p == 0 {
        return Err(Error::Dimension("design has no columns".to_string()));
    }
    let col_scale: DVector<f64> =
        DVector::from_iterator(p, (0..p).map(|j| x.column(j).amax().max(1.0)));
    let tolerance = opts.tol * col_scale.max();
    let mut alpha = DVector::zeros(p);
    let mut ll = log_likelihood(&alpha, x, d)?;
    let mut iterations = 0;
    let mut state = newton_state(&alpha, x, d);
    let within = |s: &DVector<f64>| (0..p).all(|j| s[j].abs() <= opts.tol * col_scale[j]);

    while iterations < opts.max_iter && !within(&state.score) {
        iterations += 1;
        let factor = match SpdFactor::new(&state.info, "Fisher information") {
            Ok(f) => f,
            Err(e) if state.max_eta > PINNED_ETA => {
                return Err(Error::Separation(format!(
                    "probabilities pinned at the bounds after {iterations} iterations ({e})"
                )))
            }
            Err(e) => return Err(e),
        };
        let step = factor.solve(&state.score);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &alpha + &step * t;
            let cand_ll = log_likelihood(&cand, x, d)?;
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                alpha = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !alpha.iter().all(|a| a.is_finite()) || alpha.amax() > 1e8 {
            return Err(Error::Separation("coefficients diverge".to_string()));
        }
        state = newton_state(&alpha, x, d);
        if !accepted {
            break;
        }
    }

    let converged = within(&state.score);
    if ll > -1e-6 || (!converged && state.max_eta > PINNED_ETA) {
        return Err(Error::Separation(format!(
            "log-likelihood {ll:e} with max |xᵀα| = {:.1}",
            state.max_eta
        )));
    }
    if let Err(e) = SpdFactor::new(&state.info, "Fisher information") {
        return Err(if state.max_eta > PINNED_ETA {
            Error::Separation(format!("probabilities pinned at the bounds ({e})"))
        } else {
            e
        });
    }
    let fisher_information = symmetrize(&(state.info / n as f64));
    Ok(MleFit {
        model: LogisticPropensity {
            alpha,
            provenance: Provenance::Mle,
        },
        score_norm: state.score.amax(),
        tolerance,
        fisher_information,
        log_likelihood: ll,
        iterations,
        converged,
    })
}
