//! Single-replication drivers for the simulation tables.

use nalgebra::DVector;

use super::dgp::{generate, DgpSpec};
use super::oracle::{bias_term, empirical_risk, tp_fp};
use super::rng::StreamKey;
use crate::did::{fit_theta, PsMode};
use crate::error::Result;
use crate::model::{design_matrix, ModelSpec};
use crate::propensity::CbdOptions;
use crate::selection::{
    criterion_from_fits, fit_ps, forward_select_cached, CriterionKind, FitCache, PsConfig, SelectionOptions,
};

/// Propensity configuration for a mode, with `e_true` used in known mode.
pub fn ps_config(mode: PsMode, e_true: &DVector<f64>) -> PsConfig {
    match mode {
        PsMode::Known => PsConfig::Known(e_true.clone()),
        PsMode::Mle => PsConfig::Mle,
        PsMode::Cbd(w) => PsConfig::Cbd(CbdOptions::new(w)),
    }
}

/// ATT estimate of one replication.
pub fn att_replicate(spec: &DgpSpec, key: StreamKey, mode: PsMode) -> Result<f64> {
    let (ds, truth) = generate(spec, key)?;
    let x = design_matrix(&ds, &spec.working_spec())?;
    let d = ds.treatment();
    let ps = fit_ps(&x, &d, &ps_config(mode, &truth.e1), &SelectionOptions::default())?;
    Ok(fit_theta(&x, &d, &ds.delta(), ps.e1(), mode)?.att)
}

/// Realized bias term and both penalties of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRecord {
    /// `2 Σ e¹(ρΔ − xᵀθ*) xᵀ(θ̂ − θ*)`.
    pub true_term: f64,
    /// Penalty of the proposed criterion.
    pub proposal: f64,
    /// QIC_w penalty.
    pub qicw: f64,
}

/// One replication of a bias table cell, on the family's working model.
pub fn bias_replicate(
    spec: &DgpSpec,
    key: StreamKey,
    mode: PsMode,
    theta_star: &DVector<f64>,
    opts: &SelectionOptions,
) -> Result<BiasRecord> {
    let (ds, truth) = generate(spec, key)?;
    let working = spec.working_spec();
    let x = design_matrix(&ds, &working)?;
    let d = ds.treatment();
    let delta = ds.delta();
    let ps = fit_ps(&x, &d, &ps_config(mode, &truth.e1), opts)?;
    let theta = fit_theta(&x, &d, &delta, ps.e1(), mode)?;
    let proposed = criterion_from_fits(&x, &d, &delta, &ps, &theta, &working, CriterionKind::proposed_for(mode), opts)?;
    let qicw = criterion_from_fits(&x, &d, &delta, &ps, &theta, &working, CriterionKind::Qicw, opts)?;
    Ok(BiasRecord {
        true_term: bias_term(&x, &d, &delta, ps.e1(), &theta.theta, theta_star),
        proposal: proposed.penalty,
        qicw: qicw.penalty,
    })
}

/// Outcome of one selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// Empirical risk against the full working model's `θ*`.
    pub risk: f64,
    /// True positives.
    pub tp: usize,
    /// False positives.
    pub fp: usize,
    /// Selected specification.
    pub spec: ModelSpec,
}

/// Proposed-criterion and QIC_w selections on the same replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    /// Proposed criterion.
    pub proposed: SelectionOutcome,
    /// QIC_w.
    pub qicw: SelectionOutcome,
}

/// One replication of a selection table cell.
pub fn selection_replicate(
    spec: &DgpSpec,
    key: StreamKey,
    mode: PsMode,
    theta_star: &DVector<f64>,
    opts: &SelectionOptions,
) -> Result<SelectionRecord> {
    let (ds, truth) = generate(spec, key)?;
    let full = spec.working_spec();
    let x_full = design_matrix(&ds, &full)?;
    let ps = ps_config(mode, &truth.e1);
    let candidates: alloc::vec::Vec<usize> = (0..spec.family.n_covariates()).collect();
    let mut cache = FitCache::new();
    let mut run = |kind: CriterionKind| -> Result<SelectionOutcome> {
        let sel = forward_select_cached(&ds, &candidates, kind, &ps, opts, &mut cache)?;
        let padded = sel.final_spec.pad_to(&sel.final_fit.theta, &full)?;
        let (tp, fp) = tp_fp(&sel.final_spec, &truth.truth_set);
        Ok(SelectionOutcome {
            risk: empirical_risk(&padded, theta_star, &x_full, &truth.e1),
            tp,
            fp,
            spec: sel.final_spec,
        })
    };
    let proposed = run(CriterionKind::proposed_for(mode))?;
    let qicw = run(CriterionKind::Qicw)?;
    Ok(SelectionRecord { proposed, qicw })
}
