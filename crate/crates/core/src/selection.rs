//! Risk-based information criteria and forward selection.
//!
//! Every proposed criterion has the form
//! `Σ e¹_i (ρ_iΔ_i − x_iᵀθ̂)² + 2 tr{L_n⁻¹ V_n}`, where `V_n` accounts for the
//! estimation of the propensity score (nothing for known scores, the GMM
//! influence for CBD and the score influence for MLE). QIC_w is the comparator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::did::{fit_theta, PsMode, ThetaFit};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::model::{design_matrix, Dataset, ModelSpec};
use crate::propensity::{
    fit_cbd, fit_mle_with, moment_h, CbdFit, CbdOptions, MleFit, MleOptions,
};

/// Which criterion is being computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CriterionKind {
    /// Proposed criterion with known propensity scores.
    ProposedKnown,
    /// Proposed criterion with CBD-estimated propensity scores.
    ProposedCbd,
    /// Proposed criterion with MLE propensity scores.
    ProposedMle,
    /// Weighted quasi-likelihood criterion.
    Qicw,
}

impl CriterionKind {
    /// The proposed criterion matching a propensity mode.
    pub fn proposed_for(mode: PsMode) -> Self {
        match mode {
            PsMode::Known => Self::ProposedKnown,
            PsMode::Mle => Self::ProposedMle,
            PsMode::Cbd(_) => Self::ProposedCbd,
        }
    }
}

/// A criterion evaluated at one specification.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionValue {
    /// Goodness-of-fit term.
    pub gof: f64,
    /// Penalty term.
    pub penalty: f64,
    /// `gof + penalty`.
    pub total: f64,
    /// Criterion.
    pub kind: CriterionKind,
    /// Source of the propensity scores.
    pub ps_mode: PsMode,
    /// Specification evaluated.
    pub spec: ModelSpec,
}

impl CriterionValue {
    fn new(gof: f64, penalty: f64, kind: CriterionKind, ps_mode: PsMode, spec: ModelSpec) -> Self {
        Self {
            gof,
            penalty,
            total: gof + penalty,
            kind,
            ps_mode,
            spec,
        }
    }
}

/// Direction of the propensity-estimation correction in the MLE penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MleCorrection {
    /// `V_i = e(ρΔ − xᵀθ)x + M_n I⁻¹ s_i`, the sign implied by `α̂ − α* ≈ I⁻¹ n⁻¹ Σ s_i`.
    #[default]
    Linearized,
    /// `V_i = e(ρΔ − xᵀθ)x − M_n I⁻¹ s_i`.
    Subtracted,
}

/// QIC_w variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QicwOptions {
    /// Count the intercept in `p`.
    pub count_intercept: bool,
    /// Weight the squared residuals by `e¹`.
    pub weighted_gof: bool,
    /// Multiply `2σ̂²p` by the mean propensity.
    pub scale_by_mean_propensity: bool,
}

impl Default for QicwOptions {
    fn default() -> Self {
        Self {
            count_intercept: true,
            weighted_gof: true,
            scale_by_mean_propensity: true,
        }
    }
}

/// Settings shared by criterion evaluation and selection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionOptions {
    /// QIC_w variant.
    pub qicw: QicwOptions,
    /// MLE penalty correction sign.
    pub mle_correction: MleCorrection,
    /// MLE settings.
    pub mle: MleOptions,
    /// Covariates the propensity model is fitted on.
    pub ps_scope: PsScope,
}

/// Which covariates enter the propensity model while selecting the outcome model.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PsScope {
    /// Refit the propensity model on each candidate specification.
    PerSpec,
    /// Fit once on the whole candidate pool (with intercept) and keep it fixed.
    /// A single evaluation uses the evaluated specification itself.
    #[default]
    Candidates,
    /// Fit once on this specification.
    Spec(ModelSpec),
}

/// How to obtain propensity scores.
#[derive(Debug, Clone, PartialEq)]
pub enum PsConfig {
    /// Use these scores for every specification.
    Known(DVector<f64>),
    /// Fit by maximum likelihood.
    Mle,
    /// Fit by covariate-balancing GMM.
    Cbd(CbdOptions),
}

impl PsConfig {
    /// Mode tag.
    pub fn mode(&self) -> PsMode {
        match self {
            PsConfig::Known(_) => PsMode::Known,
            PsConfig::Mle => PsMode::Mle,
            PsConfig::Cbd(o) => PsMode::Cbd(o.weighting),
        }
    }
}

/// A fitted (or supplied) propensity model together with its design.
#[derive(Debug, Clone, PartialEq)]
pub enum PsFit {
    /// Supplied scores.
    Known(DVector<f64>),
    /// MLE on design `x`.
    Mle {
        fit: MleFit,
        x: DMatrix<f64>,
        e1: DVector<f64>,
    },
    /// CBD on design `x`.
    Cbd {
        fit: CbdFit,
        x: DMatrix<f64>,
        e1: DVector<f64>,
    },
}

impl PsFit {
    /// Fitted `e¹`.
    pub fn e1(&self) -> &DVector<f64> {
        match self {
            PsFit::Known(e) => e,
            PsFit::Mle { e1, .. } | PsFit::Cbd { e1, .. } => e1,
        }
    }

    /// Mode tag.
    pub fn mode(&self) -> PsMode {
        match self {
            PsFit::Known(_) => PsMode::Known,
            PsFit::Mle { .. } => PsMode::Mle,
            PsFit::Cbd { fit, .. } => PsMode::Cbd(fit.weighting),
        }
    }
}

/// Fits the propensity model on design `x`.
pub fn fit_ps(x: &DMatrix<f64>, d: &[bool], config: &PsConfig, opts: &SelectionOptions) -> Result<PsFit> {
    match config {
        PsConfig::Known(e1) => {
            if e1.len() != x.nrows() {
                return Err(Error::Dimension(format!(
                    "{} known propensities for {} units",
                    e1.len(),
                    x.nrows()
                )));
            }
            Ok(PsFit::Known(e1.clone()))
        }
        PsConfig::Mle => {
            let fit = fit_mle_with(x, d, &opts.mle)?;
            if !fit.converged {
                return Err(Error::Convergence {
                    stage: "propensity MLE",
                    detail: format!("score norm {:e} after {} iterations", fit.score_norm, fit.iterations),
                });
            }
            let e1 = fit.model.predict_e1(x)?;
            Ok(PsFit::Mle { fit, x: x.clone(), e1 })
        }
        PsConfig::Cbd(o) => {
            let fit = fit_cbd(x, d, o)?;
            if !fit.converged {
                return Err(Error::Convergence {
                    stage: "covariate-balancing GMM",
                    detail: format!(
                        "first-order condition {:e} above {:e} after {} iterations",
                        fit.foc_norm, fit.foc_tolerance, fit.iterations
                    ),
                });
            }
            let e1 = fit.model.predict_e1(x)?;
            Ok(PsFit::Cbd { fit, x: x.clone(), e1 })
        }
    }
}

fn check_lengths(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, e1: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
    let n = x.nrows();
    if d.len() != n || delta.len() != n || e1.len() != n || theta.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "design {}x{}; indicators {}, changes {}, propensities {}, coefficients {}",
            n,
            x.ncols(),
            d.len(),
            delta.len(),
            e1.len(),
            theta.len()
        )));
    }
    Ok(())
}

fn rho(e: f64, t: bool) -> f64 {
    if t {
        1.0 / e
    } else {
        -1.0 / (1.0 - e)
    }
}

/// `Σ e¹_i (ρ_iΔ_i − x_iᵀθ)²`.
pub fn gof_weighted(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, e1: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    check_lengths(x, d, delta, e1, theta)?;
    let fitted = x * theta;
    Ok((0..x.nrows())
        .map(|i| {
            let r = rho(e1[i], d[i]) * delta[i] - fitted[i];
            e1[i] * r * r
        })
        .sum())
}

/// `Σ (ρ_iΔ_i − x_iᵀθ)²`.
pub fn gof_unweighted(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, e1: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    check_lengths(x, d, delta, e1, theta)?;
    let fitted = x * theta;
    Ok((0..x.nrows())
        .map(|i| {
            let r = rho(e1[i], d[i]) * delta[i] - fitted[i];
            r * r
        })
        .sum())
}

/// `L_n = n⁻¹ Σ e¹ x xᵀ`, factored.
fn l_factor(x: &DMatrix<f64>, e1: &DVector<f64>) -> Result<SpdFactor> {
    let (n, p) = x.shape();
    let mut l = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i);
        l += xi.transpose() * xi * e1[i];
    }
    SpdFactor::new(&symmetrize(&(l / n as f64)), "weighted Gram matrix")
}

/// `2 tr{(Σ e¹xxᵀ)⁻¹ Σ (ρ²Δ² − (xᵀθ)²) e¹² xxᵀ}`, returned as is (it may be negative).
pub fn penalty_known(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, e1: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    check_lengths(x, d, delta, e1, theta)?;
    let (n, p) = x.shape();
    let l = l_factor(x, e1)?;
    let fitted = x * theta;
    let mut v = DMatrix::zeros(p, p);
    for i in 0..n {
        let rd = rho(e1[i], d[i]) * delta[i];
        let w = (rd * rd - fitted[i] * fitted[i]) * e1[i] * e1[i];
        let xi = x.row(i);
        v += xi.transpose() * xi * w;
    }
    Ok(2.0 * l.solve_matrix(&(v / n as f64)).trace())
}

/// `2 tr{L_n⁻¹ V_n}` with `V_i = e¹(ρΔ − xᵀθ)x + M_n ψ_i`.
///
/// `effect` carries the propensity design `x_ps` (n × k) and the influence rows
/// `ψ_i` (n × k) of `α̂`; `None` gives the no-estimation-effect trace.
pub fn sandwich_penalty(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    e1: &DVector<f64>,
    theta: &DVector<f64>,
    effect: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<f64> {
    check_lengths(x, d, delta, e1, theta)?;
    let (n, p) = x.shape();
    let l = l_factor(x, e1)?;
    let fitted = x * theta;
    let nf = n as f64;
    let m = match effect {
        Some((x_ps, psi)) => {
            if x_ps.nrows() != n || psi.shape() != x_ps.shape() {
                return Err(Error::Dimension("propensity design and influence rows disagree".into()));
            }
            let k = x_ps.ncols();
            let mut m = DMatrix::zeros(p, k);
            for i in 0..n {
                let e = e1[i];
                let d1 = if d[i] { 1.0 } else { 0.0 };
                let s = e * (1.0 - e) * ((d1 - 1.0) * delta[i] / ((1.0 - e) * (1.0 - e)) - fitted[i]);
                m += x.row(i).transpose() * x_ps.row(i) * s;
            }
            Some((m / nf, psi))
        }
        None => None,
    };
    let mut vn = DMatrix::zeros(p, p);
    for i in 0..n {
        let r = rho(e1[i], d[i]) * delta[i] - fitted[i];
        let mut vi: DVector<f64> = x.row(i).transpose() * (e1[i] * r);
        if let Some((m, psi)) = &m {
            vi += m * psi.row(i).transpose();
        }
        vn += &vi * vi.transpose();
    }
    Ok(2.0 * l.solve_matrix(&(vn / nf)).trace())
}

/// Influence rows `ψ_i = −(GᵀWG)⁻¹GᵀW h_i` of a CBD fit on design `x_ps`.
pub fn cbd_influence(cbd: &CbdFit, x_ps: &DMatrix<f64>, d: &[bool]) -> Result<DMatrix<f64>> {
    let g = &cbd.jacobian;
    let w = &cbd.weight_matrix;
    let gw = g.transpose() * w;
    let gwg = symmetrize(&(&gw * g));
    let a = SpdFactor::new(&gwg, "GᵀWG")?.solve_matrix(&gw);
    let h = moment_h(&cbd.model.alpha, x_ps, d)?;
    Ok(-(h * a.transpose()))
}

/// Influence rows `ψ_i = ±I⁻¹ (d¹_i − e¹_i) x_i` of an MLE fit on design `x_ps`.
pub fn mle_influence(mle: &MleFit, x_ps: &DMatrix<f64>, d: &[bool], sign: MleCorrection) -> Result<DMatrix<f64>> {
    let e1 = mle.model.predict_e1(x_ps)?;
    let mut s = x_ps.clone();
    for (i, mut row) in s.row_iter_mut().enumerate() {
        row *= f64::from(u8::from(d[i])) - e1[i];
    }
    let inv = SpdFactor::new(&mle.fisher_information, "Fisher information")?;
    let psi = inv.solve_matrix(&s.transpose()).transpose();
    Ok(match sign {
        MleCorrection::Linearized => psi,
        MleCorrection::Subtracted => -psi,
    })
}

/// CBD penalty with the propensity model fit on the same design as `θ`.
pub fn penalty_cbd(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, cbd: &CbdFit, theta: &DVector<f64>) -> Result<f64> {
    penalty_cbd_on(x, x, d, delta, cbd, theta)
}

/// CBD penalty with the propensity model fit on design `x_ps`.
pub fn penalty_cbd_on(
    x: &DMatrix<f64>,
    x_ps: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    cbd: &CbdFit,
    theta: &DVector<f64>,
) -> Result<f64> {
    let e1 = cbd.model.predict_e1(x_ps)?;
    let psi = cbd_influence(cbd, x_ps, d)?;
    sandwich_penalty(x, d, delta, &e1, theta, Some((x_ps, &psi)))
}

/// MLE penalty with the propensity model fit on the same design as `θ`.
pub fn penalty_mle(x: &DMatrix<f64>, d: &[bool], delta: &DVector<f64>, mle: &MleFit, theta: &DVector<f64>) -> Result<f64> {
    penalty_mle_on(x, x, d, delta, mle, theta, MleCorrection::default())
}

/// MLE penalty with the propensity model fit on design `x_ps`.
pub fn penalty_mle_on(
    x: &DMatrix<f64>,
    x_ps: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    mle: &MleFit,
    theta: &DVector<f64>,
    sign: MleCorrection,
) -> Result<f64> {
    let e1 = mle.model.predict_e1(x_ps)?;
    let psi = mle_influence(mle, x_ps, d, sign)?;
    sandwich_penalty(x, d, delta, &e1, theta, Some((x_ps, &psi)))
}

/// Sum of the within-group population variances of Δ.
pub fn sigma_hat_sq(d: &[bool], delta: &DVector<f64>) -> Result<f64> {
    if d.len() != delta.len() {
        return Err(Error::Dimension(format!("{} indicators for {} changes", d.len(), delta.len())));
    }
    let var = |treated: bool, group: &'static str| -> Result<f64> {
        let vals: Vec<f64> = d.iter().zip(delta.iter()).filter(|(&t, _)| t == treated).map(|(_, &v)| v).collect();
        if vals.len() < 2 {
            return Err(Error::DegenerateGroup { group, size: vals.len() });
        }
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        Ok(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k)
    };
    Ok(var(true, "treated")? + var(false, "control")?)
}

/// QIC_w penalty `2σ̂²p`, times the mean of `e¹` when so configured.
pub fn qicw_penalty(sigma_sq: f64, p_dim: usize, e1: &DVector<f64>, opts: &QicwOptions) -> f64 {
    let base = 2.0 * sigma_sq * p_dim as f64;
    if opts.scale_by_mean_propensity {
        base * e1.mean()
    } else {
        base
    }
}

/// QIC_w at `(e¹, θ)`. `p_dim` counts the intercept when the options say so.
#[allow(clippy::too_many_arguments)]
pub fn qicw(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    e1: &DVector<f64>,
    theta: &DVector<f64>,
    spec: &ModelSpec,
    ps_mode: PsMode,
    opts: &QicwOptions,
) -> Result<CriterionValue> {
    let gof = if opts.weighted_gof {
        gof_weighted(x, d, delta, e1, theta)?
    } else {
        gof_unweighted(x, d, delta, e1, theta)?
    };
    let p_dim = spec.selected().len() + usize::from(opts.count_intercept && spec.include_intercept());
    let penalty = qicw_penalty(sigma_hat_sq(d, delta)?, p_dim, e1, opts);
    Ok(CriterionValue::new(gof, penalty, CriterionKind::Qicw, ps_mode, spec.clone()))
}

/// A criterion value with the fits that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Criterion value.
    pub value: CriterionValue,
    /// SDID fit.
    pub theta: ThetaFit,
    /// Propensity fit.
    pub ps: PsFit,
}

/// Criterion from already-fitted propensity and θ.
pub fn criterion_from_fits(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    ps: &PsFit,
    theta: &ThetaFit,
    spec: &ModelSpec,
    kind: CriterionKind,
    opts: &SelectionOptions,
) -> Result<CriterionValue> {
    let mode = ps.mode();
    let e1 = ps.e1();
    let th = &theta.theta;
    let mismatch = || Error::Argument(format!("criterion {kind:?} cannot use {mode:?} propensity scores"));
    let value = match (kind, ps) {
        (CriterionKind::Qicw, _) => return qicw(x, d, delta, e1, th, spec, mode, &opts.qicw),
        (CriterionKind::ProposedKnown, PsFit::Known(_)) => penalty_known(x, d, delta, e1, th)?,
        (CriterionKind::ProposedCbd, PsFit::Cbd { fit, x: x_ps, .. }) => penalty_cbd_on(x, x_ps, d, delta, fit, th)?,
        (CriterionKind::ProposedMle, PsFit::Mle { fit, x: x_ps, .. }) => {
            penalty_mle_on(x, x_ps, d, delta, fit, th, opts.mle_correction)?
        }
        _ => return Err(mismatch()),
    };
    let gof = gof_weighted(x, d, delta, e1, th)?;
    if !value.is_finite() {
        return Err(Error::Rank {
            what: "penalty".into(),
            condition: f64::INFINITY,
            columns: Vec::new(),
        });
    }
    Ok(CriterionValue::new(gof, value, kind, mode, spec.clone()))
}

/// Fits the propensity model (on `spec`, or on the [`PsScope::Spec`] specification), fits θ̂ and
/// evaluates the criterion.
pub fn evaluate(ds: &Dataset, spec: &ModelSpec, kind: CriterionKind, ps: &PsConfig, opts: &SelectionOptions) -> Result<Evaluation> {
    let x = design_matrix(ds, spec)?;
    let d = ds.treatment();
    let delta = ds.delta();
    let ps_fit = match &opts.ps_scope {
        PsScope::Spec(fixed) => fit_ps(&design_matrix(ds, fixed)?, &d, ps, opts)?,
        PsScope::PerSpec | PsScope::Candidates => fit_ps(&x, &d, ps, opts)?,
    };
    evaluate_with_ps(&x, &d, &delta, spec, kind, ps_fit, opts)
}

fn evaluate_with_ps(
    x: &DMatrix<f64>,
    d: &[bool],
    delta: &DVector<f64>,
    spec: &ModelSpec,
    kind: CriterionKind,
    ps_fit: PsFit,
    opts: &SelectionOptions,
) -> Result<Evaluation> {
    let theta = fit_theta(x, d, delta, ps_fit.e1(), ps_fit.mode())?;
    let value = criterion_from_fits(x, d, delta, &ps_fit, &theta, spec, kind, opts)?;
    Ok(Evaluation { value, theta, ps: ps_fit })
}

/// Criterion value at one specification.
pub fn evaluate_criterion(
    ds: &Dataset,
    spec: &ModelSpec,
    kind: CriterionKind,
    ps: &PsConfig,
    opts: &SelectionOptions,
) -> Result<CriterionValue> {
    Ok(evaluate(ds, spec, kind, ps, opts)?.value)
}

/// One accepted step of forward selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    /// Covariate added (`None` for the intercept-only start).
    pub added: Option<usize>,
    /// Criterion after the step.
    pub value: CriterionValue,
}

/// Outcome of forward selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Accepted steps, starting from the intercept-only model.
    pub path: Vec<SelectionStep>,
    /// Selected specification.
    pub final_spec: ModelSpec,
    /// SDID fit at the selected specification.
    pub final_fit: ThetaFit,
    /// Propensity fit at the selected specification.
    pub final_ps: PsFit,
    /// Candidates skipped because their addition made a matrix singular.
    pub skipped: Vec<(usize, Error)>,
}

/// Propensity and θ fits keyed by specification, shared between selection runs on
/// the same data.
#[derive(Debug, Default)]
pub struct FitCache {
    fits: BTreeMap<ModelSpec, (PsFit, ThetaFit)>,
}

impl FitCache {
    /// An empty cache.
    pub fn new() -> Self {
        Self::default()
    }
}

struct Selector<'a> {
    ds: &'a Dataset,
    d: Vec<bool>,
    delta: DVector<f64>,
    ps: &'a PsConfig,
    opts: &'a SelectionOptions,
    fixed: Option<PsFit>,
}

impl Selector<'_> {
    fn eval(&self, spec: &ModelSpec, kind: CriterionKind, cache: &mut FitCache) -> Result<Evaluation> {
        let x = design_matrix(self.ds, spec)?;
        if let Some((ps_fit, theta)) = cache.fits.get(spec) {
            let value = criterion_from_fits(&x, &self.d, &self.delta, ps_fit, theta, spec, kind, self.opts)?;
            return Ok(Evaluation {
                value,
                theta: theta.clone(),
                ps: ps_fit.clone(),
            });
        }
        let ps_fit = match &self.fixed {
            Some(f) => f.clone(),
            None => fit_ps(&x, &self.d, self.ps, self.opts)?,
        };
        let ev = evaluate_with_ps(&x, &self.d, &self.delta, spec, kind, ps_fit, self.opts)?;
        cache.fits.insert(spec.clone(), (ev.ps.clone(), ev.theta.clone()));
        Ok(ev)
    }
}

/// Forward selection from the intercept-only model.
///
/// Each round evaluates every unused candidate; the best one is added if it strictly
/// lowers the criterion (ties go to the lower covariate index). Candidates whose
/// addition makes a matrix singular are skipped.
pub fn forward_select(
    ds: &Dataset,
    candidates: &[usize],
    kind: CriterionKind,
    ps: &PsConfig,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    forward_select_cached(ds, candidates, kind, ps, opts, &mut FitCache::new())
}

/// [`forward_select`] reusing fits from `cache`.
pub fn forward_select_cached(
    ds: &Dataset,
    candidates: &[usize],
    kind: CriterionKind,
    ps: &PsConfig,
    opts: &SelectionOptions,
    cache: &mut FitCache,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Argument("no candidate covariates".into()));
    }
    let mut pool: Vec<usize> = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let pool_spec = ModelSpec::new(pool.clone(), true)?;
    pool_spec.validate(ds.n_covariates())?;
    let d = ds.treatment();
    let fixed = match &opts.ps_scope {
        PsScope::PerSpec => None,
        PsScope::Candidates => Some(fit_ps(&design_matrix(ds, &pool_spec)?, &d, ps, opts)?),
        PsScope::Spec(f) => Some(fit_ps(&design_matrix(ds, f)?, &d, ps, opts)?),
    };
    let sel = Selector {
        ds,
        delta: ds.delta(),
        d,
        ps,
        opts,
        fixed,
    };
    let mut spec = ModelSpec::intercept_only();
    let mut current = sel.eval(&spec, kind, cache)?;
    let mut path = alloc::vec![SelectionStep {
        added: None,
        value: current.value.clone(),
    }];
    let mut skipped = Vec::new();
    loop {
        let mut best: Option<(usize, Evaluation)> = None;
        for &c in &pool {
            if spec.selected().contains(&c) || skipped.iter().any(|(s, _)| *s == c) {
                continue;
            }
            let cand = spec.with(c)?;
            match sel.eval(&cand, kind, cache) {
                Ok(ev) => {
                    if best.as_ref().map_or(true, |(_, b)| ev.value.total < b.value.total) {
                        best = Some((c, ev));
                    }
                }
                Err(e @ Error::Rank { .. }) => skipped.push((c, e)),
                Err(e) => return Err(e),
            }
        }
        match best {
            Some((c, ev)) if ev.value.total < current.value.total => {
                spec = ev.value.spec.clone();
                path.push(SelectionStep {
                    added: Some(c),
                    value: ev.value.clone(),
                });
                current = ev;
            }
            _ => break,
        }
    }
    Ok(SelectionResult {
        path,
        final_spec: spec,
        final_fit: current.theta,
        final_ps: current.ps,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gof_examples() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let e = DVector::from_element(3, 0.5);
        let d = [true, true, false];
        // ρΔ = (2, 2, −2), θ = 1 → residuals (1, 1, −3).
        let delta = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let th = DVector::from_element(1, 1.0);
        assert!((gof_weighted(&x, &d, &delta, &e, &th).unwrap() - 0.5 * 11.0).abs() < 1e-12);
        assert!((gof_unweighted(&x, &d, &delta, &e, &th).unwrap() - 11.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_examples() {
        let d = [true, true, false, false];
        let delta = DVector::from_vec(vec![0.0, 2.0, 1.0, 1.0]);
        assert_eq!(sigma_hat_sq(&d, &delta).unwrap(), 1.0);
        assert_eq!(sigma_hat_sq(&d, &DVector::from_element(4, 3.0)).unwrap(), 0.0);
        assert_eq!(
            sigma_hat_sq(&[true, false, false], &DVector::zeros(3)),
            Err(Error::DegenerateGroup { group: "treated", size: 1 })
        );
    }

    #[test]
    fn qicw_closed_form() {
        let plain = QicwOptions {
            scale_by_mean_propensity: false,
            ..QicwOptions::default()
        };
        assert_eq!(qicw_penalty(1.0, 2, &DVector::from_element(2, 0.3), &plain), 4.0);
        let scaled = qicw_penalty(1.0, 2, &DVector::from_element(2, 0.25), &QicwOptions::default());
        assert!((scaled - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_change_penalties_vanish() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.1, 1.0, 0.7, 1.0, 1.3, 1.0, 1.9]);
        let d = [true, false, true, false];
        let e = DVector::from_vec(vec![0.4, 0.5, 0.6, 0.3]);
        let z = DVector::zeros(4);
        let th = DVector::zeros(2);
        assert_eq!(penalty_known(&x, &d, &z, &e, &th).unwrap(), 0.0);
        assert_eq!(sandwich_penalty(&x, &d, &z, &e, &th, None).unwrap(), 0.0);
    }
}
