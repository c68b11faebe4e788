//! Semiparametric DiD: weighted least squares for the conditional ATT.
//!
//! `θ̂ = {Σ e¹_i x_i x_iᵀ}⁻¹ Σ e¹_i x_i ρ_i Δ_i` with `ρ = d¹/e¹ − d⁰/e⁰`,
//! and the ATT is the treated-sample mean of `x_iᵀθ̂`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{quantile_sorted, SpdFactor};
use crate::propensity::Weighting;

/// Where the propensity weights came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PsMode {
    /// Supplied propensities (true or externally estimated).
    Known,
    /// Maximum-likelihood logistic fit.
    Mle,
    /// Covariate-balancing GMM fit.
    Cbd(Weighting),
}

/// `ρ_i = 1/e¹_i` for treated units and `−1/(1 − e¹_i)` for controls.
pub fn rho_weights(e1: &DVector<f64>, d: &[bool]) -> Result<DVector<f64>> {
    if e1.len() != d.len() {
        return Err(Error::Dimension(format!(
            "{} propensities for {} units",
            e1.len(),
            d.len()
        )));
    }
    let mut rho = DVector::zeros(d.len());
    for (i, (&e, &t)) in e1.iter().zip(d).enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::DivisionGuard { index: i, value: e });
        }
        rho[i] = if t { 1.0 / e } else { -1.0 / (1.0 - e) };
    }
    Ok(rho)
}

/// Solution of a weighted least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    /// Coefficients.
    pub coef: DVector<f64>,
    /// Condition number of the equilibrated Gram matrix.
    pub condition: f64,
    /// `‖Σ w_i x_i (z_i − x_iᵀβ)‖_∞` divided by its natural scale.
    pub relative_residual: f64,
}

/// Minimizes `Σ w_i (z_i − x_iᵀβ)²` via a Cholesky factor of the equilibrated Gram
/// matrix plus one step of iterative refinement.
pub fn wls(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<WlsSolution> {
    let (n, p) = x.shape();
    if w.len() != n || z.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, weights {}, response {}",
            w.len(),
            z.len()
        )));
    }
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..p {
            let a = w[i] * xi[j];
            rhs[j] += a * z[i];
            for k in j..p {
                gram[(k, j)] += a * xi[k];
            }
        }
    }
    for j in 0..p {
        for k in (j + 1)..p {
            gram[(j, k)] = gram[(k, j)];
        }
    }
    let factor = SpdFactor::new(&gram, "weighted Gram matrix")?;
    let mut coef = factor.solve(&rhs);
    let resid = |c: &DVector<f64>| -> (DVector<f64>, f64) {
        let fitted = x * c;
        let mut r = DVector::zeros(p);
        let mut mag = DVector::zeros(p);
        for i in 0..n {
            let e = z[i] - fitted[i];
            let m = z[i].abs() + fitted[i].abs();
            for j in 0..p {
                let a = w[i] * x[(i, j)];
                r[j] += a * e;
                mag[j] += a.abs() * m;
            }
        }
        (r, mag.max())
    };
    let (r, _) = resid(&coef);
    coef += factor.solve(&r);
    let (r, scale) = resid(&coef);
    let relative_residual = if scale > 0.0 { r.amax() / scale } else { r.amax() };
    Ok(WlsSolution {
        coef,
        condition: factor.condition(),
        relative_residual,
    })
}

/// SDID coefficient fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    /// `θ̂`.
    pub theta: DVector<f64>,
    /// Propensities used as weights and inside `ρ`.
    pub e1: DVector<f64>,
    /// `ρ(d_i, x_i)`.
    pub rho: DVector<f64>,
    /// `x_iᵀθ̂`.
    pub fitted: DVector<f64>,
    /// `ρ_iΔ_i − x_iᵀθ̂`.
    pub residuals: DVector<f64>,
    /// Mean of `x_iᵀθ̂` over treated units.
    pub att: f64,
    /// Source of `e1`.
    pub ps_mode: PsMode,
    /// Condition number of the equilibrated weighted Gram matrix.
    pub gram_condition: f64,
    /// Relative normal-equation residual.
    pub normal_residual: f64,
}

/// Fits `θ̂` by weighted least squares of `ρΔ` on `x` with weights `e¹`.
pub fn fit_theta(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    e1: &DVector<f64>,
    ps_mode: PsMode,
) -> Result<ThetaFit> {
    let n = x.nrows();
    if d.len() != n || delta.len() != n || e1.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows; got {} indicators, {} changes, {} propensities",
            d.len(),
            delta.len(),
            e1.len()
        )));
    }
    let rho = rho_weights(e1, d)?;
    let z = rho.component_mul(delta);
    let sol = wls(x, e1, &z)?;
    let fitted = x * &sol.coef;
    let residuals = &z - &fitted;
    let (sum, n1) = fitted
        .iter()
        .zip(d)
        .filter(|(_, &t)| t)
        .fold((0.0, 0usize), |(s, c), (&f, _)| (s + f, c + 1));
    if n1 == 0 {
        return Err(Error::MissingClass);
    }
    Ok(ThetaFit {
        theta: sol.coef,
        e1: e1.clone(),
        rho,
        fitted,
        residuals,
        att: sum / n1 as f64,
        ps_mode,
        gram_condition: sol.condition,
        normal_residual: sol.relative_residual,
    })
}

/// Mean and empirical 95% interval of replicated estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttSummary {
    /// Sample mean.
    pub mean: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
    /// Number of values.
    pub count: usize,
}

/// Mean and 2.5%/97.5% linear-interpolation quantiles.
pub fn att_summary(values: &[f64]) -> Result<AttSummary> {
    if values.is_empty() {
        return Err(Error::Argument("no values to summarize".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(AttSummary {
        mean,
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rho_examples() {
        let e = DVector::from_vec(vec![0.5, 0.5, 0.8]);
        let r = rho_weights(&e, &[true, false, false]).unwrap();
        assert_eq!(r.as_slice(), &[2.0, -2.0, -1.0 / (1.0 - 0.8)]);
        assert!((r[2] + 5.0).abs() < 1e-12);
        let bad = DVector::from_vec(vec![1.0]);
        assert_eq!(
            rho_weights(&bad, &[true]),
            Err(Error::DivisionGuard { index: 0, value: 1.0 })
        );
    }

    #[test]
    fn four_unit_intercept_only() {
        // e ≡ 0.5, x ≡ 1: θ̂ = mean(ρΔ) = (2·1 + 2·3 − 2·2 − 2·0) / 4 = 1.
        let x = DMatrix::from_element(4, 1, 1.0);
        let d = [true, true, false, false];
        let delta = DVector::from_vec(vec![1.0, 3.0, 2.0, 0.0]);
        let e = DVector::from_element(4, 0.5);
        let fit = fit_theta(&x, &d, &delta, &e, PsMode::Known).unwrap();
        assert!((fit.theta[0] - 1.0).abs() < 1e-14);
        assert!((fit.att - 1.0).abs() < 1e-14);
        let expected = DVector::from_vec(vec![1.0, 5.0, -5.0, -1.0]);
        assert!((&fit.residuals - expected).amax() < 1e-14);
    }

    #[test]
    fn zero_change_gives_zero() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 1.0, 1.1, 1.0, 1.9]);
        let d = [true, false, true];
        let e = DVector::from_vec(vec![0.3, 0.6, 0.5]);
        let fit = fit_theta(&x, &d, &DVector::zeros(3), &e, PsMode::Known).unwrap();
        assert_eq!(fit.theta.amax(), 0.0);
        assert_eq!(fit.att, 0.0);
    }

    #[test]
    fn collinear_columns_named() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0]);
        let e = DVector::from_element(3, 0.5);
        let r = fit_theta(&x, &[true, false, true], &DVector::zeros(3), &e, PsMode::Known);
        match r {
            Err(Error::Rank { columns, .. }) => assert!(columns.contains(&1) && columns.contains(&2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summary_examples() {
        let c = att_summary(&[2.5; 7]).unwrap();
        assert_eq!((c.mean, c.lower, c.upper), (2.5, 2.5, 2.5));
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = att_summary(&v).unwrap();
        assert!((s.mean - 50.5).abs() < 1e-12);
        assert!((s.lower - 3.475).abs() < 1e-12 && (s.upper - 97.525).abs() < 1e-12);
        assert!(att_summary(&[]).is_err());
    }
}
