//! Logistic propensity scores.
//!
//! `e¹(x; α) = sigmoid(xᵀα)` and `e⁰ = 1 − e¹`. Coefficients are estimated either by
//! maximum likelihood ([`fit_mle`]) or by GMM over the second-order balancing moments
//! `E[e¹{d¹/e¹ − 1}xxᵀ] = 0`, `E[e¹{d⁰/e⁰ − 1}xxᵀ] = 0` ([`fit_cbd`]).

mod gmm;
mod mle;
mod moments;

pub use gmm::{fit_cbd, CbdFit, CbdOptions, InitSource, Weighting};
pub use mle::{fit_mle, fit_mle_with, log_likelihood, MleFit, MleOptions};
pub use moments::{gmm_objective, moment_dim, moment_h, moment_jacobian, moment_mean};

use alloc::format;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Predictions are clamped to `[PROB_CLIP, 1 − PROB_CLIP]` before any division.
pub const PROB_CLIP: f64 = 1e-10;

/// How a coefficient vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Supplied by the caller (true or fixed coefficients).
    Supplied,
    /// Maximum likelihood.
    Mle,
    /// Covariate-balancing GMM.
    Cbd(Weighting),
}

/// Logistic propensity model aligned with the columns of a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPropensity {
    /// Coefficients `α`.
    pub alpha: DVector<f64>,
    /// Fit provenance.
    pub provenance: Provenance,
}

impl LogisticPropensity {
    /// Wraps caller-supplied coefficients.
    pub fn new(alpha: DVector<f64>) -> Self {
        Self {
            alpha,
            provenance: Provenance::Supplied,
        }
    }

    /// `e¹(x_i; α)`, clamped away from 0 and 1.
    pub fn predict_e1(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(predict_clipped(&self.alpha, x)?.0)
    }

    /// `e⁰(x_i; α) = 1 − e¹(x_i; α)`.
    pub fn predict_e0(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.predict_e1(x)?.map(|e| 1.0 - e))
    }

    /// Predictions together with the number of clamped entries.
    pub fn predict_counted(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
        predict_clipped(&self.alpha, x)
    }
}

pub(crate) fn check_dims(alpha_len: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != alpha_len {
        return Err(Error::Dimension(format!(
            "design has {} columns but coefficient vector has length {}",
            x.ncols(),
            alpha_len
        )));
    }
    Ok(())
}

pub(crate) fn check_classes(d: &[bool], n: usize) -> Result<()> {
    if d.len() != n {
        return Err(Error::Dimension(format!(
            "{} treatment indicators for {} rows",
            d.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let n1 = d.iter().filter(|&&t| t).count();
    if n1 == 0 || n1 == n {
        return Err(Error::MissingClass);
    }
    Ok(())
}

#[inline]
pub(crate) fn clip(e: f64) -> (f64, bool) {
    if e < PROB_CLIP {
        (PROB_CLIP, true)
    } else if e > 1.0 - PROB_CLIP {
        (1.0 - PROB_CLIP, true)
    } else {
        (e, false)
    }
}

pub(crate) fn predict_clipped(alpha: &DVector<f64>, x: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
    check_dims(alpha.len(), x)?;
    let eta = x * alpha;
    let mut clipped = 0;
    let e = eta.map(|z| {
        let (v, c) = clip(sigmoid(z));
        clipped += usize::from(c);
        v
    });
    Ok((e, clipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn predictions() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        let m0 = LogisticPropensity::new(DVector::zeros(2));
        assert_eq!(m0.predict_e1(&x).unwrap().as_slice(), &[0.5, 0.5]);
        let m = LogisticPropensity::new(DVector::from_vec(vec![-1.0, 1.0]));
        assert_eq!(m.predict_e1(&x).unwrap()[0], 0.5);
        let m2 = LogisticPropensity::new(DVector::from_vec(vec![0.0, 1.0]));
        let e = m2.predict_e1(&x).unwrap();
        assert!((e[1] - 1.0 / (1.0 + libm::exp(-2.0))).abs() < 1e-15);
        assert!((e[1] - 0.880797).abs() < 1e-6);
        let e0 = m2.predict_e0(&x).unwrap();
        for i in 0..2 {
            assert_eq!(e0[i] + e[i], 1.0);
        }
        assert!(matches!(
            LogisticPropensity::new(DVector::zeros(3)).predict_e1(&x),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn clipping_counted() {
        let x = DMatrix::from_row_slice(2, 1, &[100.0, -100.0]);
        let m = LogisticPropensity::new(DVector::from_vec(vec![1.0]));
        let (e, c) = m.predict_counted(&x).unwrap();
        assert_eq!(c, 2);
        assert_eq!(e[0], 1.0 - PROB_CLIP);
        assert_eq!(e[1], PROB_CLIP);
    }
}
