//! Two-period panel data, working-model specifications and design matrices.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One observed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    /// Raw covariates, without an intercept.
    pub covariates: Vec<f64>,
    /// Treatment indicator `d¹`.
    pub treated: bool,
    /// Outcome before treatment, `y(0)`.
    pub y_pre: f64,
    /// Outcome after treatment, `y(1)`.
    pub y_post: f64,
}

impl Unit {
    /// Observed change `y(1) − y(0)`.
    #[inline]
    pub fn delta(&self) -> f64 {
        self.y_post - self.y_pre
    }
}

/// A validated two-period dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    units: Vec<Unit>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking shapes, finiteness and that both groups are present.
    pub fn new(covariate_names: Vec<String>, units: Vec<Unit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::EmptyData);
        }
        let l = covariate_names.len();
        for (i, u) in units.iter().enumerate() {
            if u.covariates.len() != l {
                return Err(Error::Dimension(format!(
                    "unit {} has {} covariates, expected {}",
                    i,
                    u.covariates.len(),
                    l
                )));
            }
            if !u.y_pre.is_finite()
                || !u.y_post.is_finite()
                || !u.covariates.iter().all(|v| v.is_finite())
            {
                return Err(Error::Parse {
                    row: i + 1,
                    msg: "non-finite value".into(),
                });
            }
        }
        let n1 = units.iter().filter(|u| u.treated).count();
        if n1 == 0 || n1 == units.len() {
            return Err(Error::MissingClass);
        }
        Ok(Self {
            units,
            covariate_names,
        })
    }

    /// Units in file order.
    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Raw covariate names.
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Index of a named covariate.
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Number of units.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    /// Always false; a dataset has at least two units.
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Raw covariate dimension.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Number of treated units.
    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.treated).count()
    }

    /// Number of control units.
    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// Treatment indicators.
    pub fn treatment(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.treated).collect()
    }

    /// Observed changes Δ.
    pub fn delta(&self) -> DVector<f64> {
        delta(self)
    }

    /// Keeps the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut units = Vec::with_capacity(rows.len());
        for &r in rows {
            let u = self.units.get(r).ok_or(Error::IndexOutOfRange {
                index: r,
                dim: self.len(),
            })?;
            units.push(u.clone());
        }
        Self::new(self.covariate_names.clone(), units)
    }

    /// Round-robin split: row `j` goes to block `j mod k`.
    pub fn split_blocks(&self, k: usize) -> Result<Vec<Self>> {
        if k == 0 {
            return Err(Error::Argument("block count must be positive".into()));
        }
        if self.len() < k {
            return Err(Error::Argument(format!(
                "cannot split {} rows into {} blocks",
                self.len(),
                k
            )));
        }
        (0..k)
            .map(|b| {
                let rows: Vec<usize> = (b..self.len()).step_by(k).collect();
                self.subset(&rows)
            })
            .collect()
    }
}

/// Δ_i = y_post_i − y_pre_i.
pub fn delta(ds: &Dataset) -> DVector<f64> {
    DVector::from_iterator(ds.len(), ds.units.iter().map(Unit::delta))
}

/// Working-model specification: which covariates enter, and whether an intercept does.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelSpec {
    selected: Vec<usize>,
    include_intercept: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::intercept_only()
    }
}

impl ModelSpec {
    /// A specification over `selected` (order kept). Indices must be unique.
    pub fn new(selected: Vec<usize>, include_intercept: bool) -> Result<Self> {
        for (k, &i) in selected.iter().enumerate() {
            if selected[..k].contains(&i) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        if selected.is_empty() && !include_intercept {
            return Err(Error::Argument("model has no columns".into()));
        }
        Ok(Self {
            selected,
            include_intercept,
        })
    }

    /// Intercept-only model.
    pub fn intercept_only() -> Self {
        Self {
            selected: Vec::new(),
            include_intercept: true,
        }
    }

    /// Intercept plus every covariate `0..l`.
    pub fn full(l: usize) -> Self {
        Self {
            selected: (0..l).collect(),
            include_intercept: true,
        }
    }

    /// Selected covariate indices in column order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// Whether the first column is an intercept.
    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Effective dimension `p`.
    pub fn dim(&self) -> usize {
        self.selected.len() + usize::from(self.include_intercept)
    }

    /// This specification with one more covariate appended.
    pub fn with(&self, index: usize) -> Result<Self> {
        let mut s = self.selected.clone();
        s.push(index);
        Self::new(s, self.include_intercept)
    }

    /// Checks every index against the raw covariate dimension.
    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        match self.selected.iter().find(|&&i| i >= n_covariates) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index,
                dim: n_covariates,
            }),
            None => Ok(()),
        }
    }

    /// Column position of covariate `index`, if selected.
    pub fn column_of(&self, index: usize) -> Option<usize> {
        self.selected
            .iter()
            .position(|&i| i == index)
            .map(|k| k + usize::from(self.include_intercept))
    }

    /// Expands a coefficient vector over this specification to the full working model
    /// `full` (zero on columns `full` has and `self` lacks).
    pub fn pad_to(&self, theta: &DVector<f64>, full: &ModelSpec) -> Result<DVector<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "coefficient length {} does not match model dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        let mut out = DVector::zeros(full.dim());
        if self.include_intercept {
            if !full.include_intercept {
                return Err(Error::Argument("target model has no intercept".into()));
            }
            out[0] = theta[0];
        }
        for (k, &i) in self.selected.iter().enumerate() {
            let col = full
                .column_of(i)
                .ok_or_else(|| Error::Argument(format!("covariate {i} missing from target model")))?;
            out[col] = theta[k + usize::from(self.include_intercept)];
        }
        Ok(out)
    }
}

/// Rows `(1, selected covariates)` (intercept first when enabled).
pub fn design_matrix(ds: &Dataset, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    spec.validate(ds.n_covariates())?;
    let off = usize::from(spec.include_intercept);
    let mut x = DMatrix::zeros(ds.len(), spec.dim());
    for (i, u) in ds.units.iter().enumerate() {
        if off == 1 {
            x[(i, 0)] = 1.0;
        }
        for (k, &j) in spec.selected.iter().enumerate() {
            x[(i, k + off)] = u.covariates[j];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn unit(c: &[f64], t: bool, pre: f64, post: f64) -> Unit {
        Unit {
            covariates: c.to_vec(),
            treated: t,
            y_pre: pre,
            y_post: post,
        }
    }

    fn names(l: usize) -> Vec<String> {
        (0..l).map(|i| alloc::format!("x{}", i + 1)).collect()
    }

    #[test]
    fn design_rows() {
        let ds = Dataset::new(
            names(2),
            vec![unit(&[2.0, 5.0], true, 0.0, 1.0), unit(&[3.0, 4.0], false, 0.0, 1.0)],
        )
        .unwrap();
        let spec = ModelSpec::new(vec![0], true).unwrap();
        let x = design_matrix(&ds, &spec).unwrap();
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        let x0 = design_matrix(&ds, &ModelSpec::intercept_only()).unwrap();
        assert_eq!(x0.shape(), (2, 1));
        assert!(x0.iter().all(|&v| v == 1.0));
        let bad = ModelSpec::new(vec![5], true).unwrap();
        assert!(matches!(
            design_matrix(&ds, &bad),
            Err(Error::IndexOutOfRange { index: 5, dim: 2 })
        ));
        let order = ModelSpec::new(vec![1, 0], false).unwrap();
        let xo = design_matrix(&ds, &order).unwrap();
        assert_eq!(xo.row(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 2.0]);
    }

    #[test]
    fn delta_values() {
        let ds = Dataset::new(
            names(1),
            vec![unit(&[0.0], true, 1.0, 3.5), unit(&[0.0], false, 2.0, 2.0)],
        )
        .unwrap();
        assert_eq!(ds.delta().as_slice(), &[2.5, 0.0]);
    }

    #[test]
    fn invariants_enforced() {
        assert_eq!(Dataset::new(names(1), vec![]), Err(Error::EmptyData));
        assert_eq!(
            Dataset::new(names(1), vec![unit(&[0.0], true, 0.0, 0.0)]),
            Err(Error::MissingClass)
        );
        assert!(matches!(
            Dataset::new(names(2), vec![unit(&[0.0], true, 0.0, 0.0)]),
            Err(Error::Dimension(_))
        ));
        assert_eq!(ModelSpec::new(vec![1, 1], true), Err(Error::DuplicateIndex(1)));
    }

    #[test]
    fn round_robin_blocks() {
        let units: Vec<Unit> = (0..6)
            .map(|i| unit(&[i as f64], i % 2 == 0, 0.0, 0.0))
            .collect();
        let ds = Dataset::new(vec!["r".to_string()], units).unwrap();
        let blocks = ds.split_blocks(3);
        // {r1,r4} has a treated and a control unit: rows 0 (treated) and 3 (control).
        let blocks = blocks.unwrap();
        let ids: Vec<Vec<f64>> = blocks
            .iter()
            .map(|b| b.units().iter().map(|u| u.covariates[0]).collect())
            .collect();
        assert_eq!(ids, vec![vec![0.0, 3.0], vec![1.0, 4.0], vec![2.0, 5.0]]);
        assert_eq!(ds.split_blocks(1).unwrap()[0], ds);
        assert!(matches!(ds.split_blocks(0), Err(Error::Argument(_))));
        assert!(matches!(ds.split_blocks(7), Err(Error::Argument(_))));
    }

    #[test]
    fn padding() {
        let full = ModelSpec::full(4);
        let sub = ModelSpec::new(vec![2, 0], true).unwrap();
        let t = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let padded = sub.pad_to(&t, &full).unwrap();
        assert_eq!(padded.as_slice(), &[1.0, 3.0, 0.0, 2.0, 0.0]);
    }
}
