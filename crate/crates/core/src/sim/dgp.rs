//! Data-generating processes of the simulation studies.
//!
//! All families draw `x_j ~ U(0, 2)`, a shared baseline `y(0) ~ N(0, 1)`, and
//! `y⁰(1) = y(0) + ε⁰`, `y¹(1) = y(0) + a(x) + ε¹` with standard normal noise.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::{Role, StreamKey};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{Dataset, ModelSpec, Unit};

/// Simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DgpFamily {
    /// `e¹ = sigmoid(−x₁ + α*x₂)`, `a(x) = β*x₁`; the working model omits `x₂`.
    Robustness,
    /// `e¹ = sigmoid(−x₁)`, `a(x) = 1 + β*x₁`.
    Case11,
    /// `e¹ = sigmoid(−x₁ + x₂)`, `a(x) = 1 + β*(x₁ + x₂)`.
    Case12,
    /// Four covariates, `a(x) = 1 + β*x₁`, `e¹ = sigmoid(−x₁)`.
    Case21,
    /// Four covariates, `a(x) = 1 + β*(x₁ + x₂)`, `e¹ = sigmoid(−x₁ + x₂)`.
    Case22,
    /// Six covariates, `a(x) = 1 + β*(x₁ + x₂)`, `e¹ = sigmoid(−x₁ + x₂)`.
    Case23,
}

impl DgpFamily {
    /// Number of raw covariates.
    pub fn n_covariates(self) -> usize {
        match self {
            DgpFamily::Case11 => 1,
            DgpFamily::Robustness | DgpFamily::Case12 => 2,
            DgpFamily::Case21 | DgpFamily::Case22 => 4,
            DgpFamily::Case23 => 6,
        }
    }

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            DgpFamily::Robustness => "robustness",
            DgpFamily::Case11 => "1-1",
            DgpFamily::Case12 => "1-2",
            DgpFamily::Case21 => "2-1",
            DgpFamily::Case22 => "2-2",
            DgpFamily::Case23 => "2-3",
        }
    }
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    /// Family.
    pub family: DgpFamily,
    /// `β*`.
    pub beta_star: f64,
    /// `α*` (robustness family only).
    pub alpha_star: f64,
    /// Sample size.
    pub n: usize,
    /// Whether the robustness working model carries an intercept.
    pub robustness_intercept: bool,
    zero_change: bool,
}

impl DgpSpec {
    /// A design with `α* = 0` and an intercept in the robustness working model.
    pub fn new(family: DgpFamily, beta_star: f64, n: usize) -> Self {
        Self {
            family,
            beta_star,
            alpha_star: 0.0,
            n,
            robustness_intercept: true,
            zero_change: false,
        }
    }

    /// Robustness design with the given `α*`.
    pub fn robustness(beta_star: f64, alpha_star: f64, n: usize) -> Self {
        Self {
            alpha_star,
            ..Self::new(DgpFamily::Robustness, beta_star, n)
        }
    }

    /// Degenerate override: every observed change Δ is zero.
    pub fn with_zero_change(mut self) -> Self {
        self.zero_change = true;
        self
    }

    /// Working model used for estimation.
    pub fn working_spec(&self) -> ModelSpec {
        match self.family {
            DgpFamily::Robustness => ModelSpec::new(vec![0], self.robustness_intercept)
                .expect("single index is valid"),
            f => ModelSpec::full(f.n_covariates()),
        }
    }

    /// Covariates with a nonzero slope in `a(x)` (zero-based).
    pub fn truth_set(&self) -> Vec<usize> {
        match self.family {
            DgpFamily::Robustness | DgpFamily::Case11 | DgpFamily::Case21 => vec![0],
            DgpFamily::Case12 | DgpFamily::Case22 | DgpFamily::Case23 => vec![0, 1],
        }
    }

    /// Coefficients of `a(x)` over `(1, x₁, …, x_l)`.
    pub fn beta1(&self) -> Vec<f64> {
        let l = self.family.n_covariates();
        let mut b = vec![0.0; l + 1];
        if self.family != DgpFamily::Robustness {
            b[0] = 1.0;
        }
        for j in self.truth_set() {
            b[j + 1] = self.beta_star;
        }
        b
    }

    /// True treatment probability.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let z = match self.family {
            DgpFamily::Robustness => -x[0] + self.alpha_star * x[1],
            DgpFamily::Case11 | DgpFamily::Case21 => -x[0],
            DgpFamily::Case12 | DgpFamily::Case22 | DgpFamily::Case23 => -x[0] + x[1],
        };
        sigmoid(z)
    }

    /// Conditional ATT `a(x)`.
    pub fn att_function(&self, x: &[f64]) -> f64 {
        let b = self.beta1();
        b[0] + x.iter().zip(&b[1..]).map(|(xi, bi)| xi * bi).sum::<f64>()
    }

    /// Checks `n ≥ 2p` and finiteness.
    pub fn validate(&self) -> Result<()> {
        if !self.beta_star.is_finite() || !self.alpha_star.is_finite() {
            return Err(Error::Argument("design parameters must be finite".into()));
        }
        let p = self.family.n_covariates() + 1;
        if self.n < 2 * p {
            return Err(Error::Argument(format!(
                "n = {} is below 2p = {} for this design",
                self.n,
                2 * p
            )));
        }
        Ok(())
    }
}

/// Quantities known only to the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTruth {
    /// True `e¹(x_i)`.
    pub e1: DVector<f64>,
    /// True `a(x_i)`.
    pub att: DVector<f64>,
    /// Coefficients of `a(x)` over `(1, x₁, …, x_l)`.
    pub beta1: Vec<f64>,
    /// Indices of covariates with nonzero slope.
    pub truth_set: Vec<usize>,
}

/// Draws one dataset.
pub fn generate(spec: &DgpSpec, key: StreamKey) -> Result<(Dataset, HiddenTruth)> {
    spec.validate()?;
    let l = spec.family.n_covariates();
    let n = spec.n;
    let mut rx = key.rng(Role::Covariates);
    let mut rd = key.rng(Role::Treatment);
    let mut ry = key.rng(Role::Baseline);
    let mut r0 = key.rng(Role::ControlNoise);
    let mut r1 = key.rng(Role::TreatedNoise);
    let mut units = Vec::with_capacity(n);
    let mut e1 = DVector::zeros(n);
    let mut att = DVector::zeros(n);
    for i in 0..n {
        let x: Vec<f64> = (0..l).map(|_| 2.0 * rx.random::<f64>()).collect();
        let e = spec.propensity(&x);
        let treated = rd.random::<f64>() < e;
        let y0: f64 = ry.sample(StandardNormal);
        let eps0: f64 = r0.sample(StandardNormal);
        let eps1: f64 = r1.sample(StandardNormal);
        let a = spec.att_function(&x);
        let y_post = if spec.zero_change {
            y0
        } else if treated {
            y0 + a + eps1
        } else {
            y0 + eps0
        };
        e1[i] = e;
        att[i] = a;
        units.push(Unit {
            covariates: x,
            treated,
            y_pre: y0,
            y_post,
        });
    }
    let names: Vec<String> = (1..=l).map(|j| format!("x{j}")).collect();
    let ds = Dataset::new(names, units)?;
    Ok((
        ds,
        HiddenTruth {
            e1,
            att,
            beta1: spec.beta1(),
            truth_set: spec.truth_set(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_shapes() {
        let s = DgpSpec::new(DgpFamily::Case21, 3.0, 100);
        assert_eq!(s.family.n_covariates(), 4);
        assert_eq!(s.truth_set(), vec![0]);
        assert_eq!(s.beta1(), vec![1.0, 3.0, 0.0, 0.0, 0.0]);
        let s = DgpSpec::new(DgpFamily::Case23, 0.5, 100);
        assert_eq!(s.beta1(), vec![1.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.working_spec().dim(), 7);
        let r = DgpSpec::robustness(1.0, 0.0, 10);
        assert_eq!(r.propensity(&[1.0, 1.7]), sigmoid(-1.0));
    }

    #[test]
    fn generate_is_deterministic() {
        let s = DgpSpec::new(DgpFamily::Case12, 1.0, 50);
        let a = generate(&s, StreamKey::new(1, 0, 0)).unwrap();
        let b = generate(&s, StreamKey::new(1, 0, 0)).unwrap();
        let c = generate(&s, StreamKey::new(1, 0, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
        assert!(a.0.units().iter().all(|u| u.covariates.iter().all(|&v| (0.0..2.0).contains(&v))));
    }

    #[test]
    fn zero_change_override() {
        let s = DgpSpec::new(DgpFamily::Case11, 1.0, 40).with_zero_change();
        let (ds, _) = generate(&s, StreamKey::new(3, 0, 0)).unwrap();
        assert!(ds.delta().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_n_rejected() {
        assert!(generate(&DgpSpec::new(DgpFamily::Case23, 1.0, 10), StreamKey::new(0, 0, 0)).is_err());
    }
}
