//! The `cbdid` command line: `estimate`, `select` and `simulate`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use cbdid_core::did::PsMode;
use cbdid_core::model::{design_matrix, Dataset, ModelSpec};
use cbdid_core::propensity::{CbdOptions, Weighting};
use cbdid_core::selection::{
    criterion_from_fits, evaluate, forward_select, CriterionKind, PsConfig, PsFit, PsScope, QicwOptions,
    SelectionOptions,
};
use cbdid_core::{DMatrix, DVector};

use crate::config;
use crate::data::{load_csv, Loaded, OutcomeColumns, Schema};
use crate::error::{Error, Result};
use crate::harness::{run_table, McOptions, TableId};
use crate::report::{mc_sections, mc_summary, render, Cell, Document, Format, Section};

/// Top-level parser.
#[derive(Debug, Parser)]
#[command(name = "cbdid", version, about = "Covariate-balancing semiparametric DiD: estimation, selection and simulation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the propensity model and θ̂ on the full covariate set.
    #[command(args_override_self = true)]
    Estimate(EstimateArgs),
    /// Forward-select outcome covariates, optionally on row blocks.
    #[command(args_override_self = true)]
    Select(SelectArgs),
    /// Reproduce a simulation table.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// 0/1 treatment column.
    #[arg(long)]
    treat: String,
    /// Pre-period outcome column.
    #[arg(long, requires = "ypost", conflicts_with = "delta")]
    ypre: Option<String>,
    /// Post-period outcome column.
    #[arg(long, requires = "ypre", conflicts_with = "delta")]
    ypost: Option<String>,
    /// Outcome change column (instead of --ypre/--ypost).
    #[arg(long, required_unless_present = "ypre")]
    delta: Option<String>,
    /// Covariates in model order (default: every remaining column).
    #[arg(long, value_delimiter = ',')]
    covars: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeightingArg {
    Identity,
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Proposed,
    Qicw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
    Json,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Propensity scores: `known:<column>`, `mle` or `cbd`.
    #[arg(long, default_value = "cbd")]
    ps: String,
    /// GMM weighting matrix for `--ps cbd`.
    #[arg(long, value_enum, default_value_t = WeightingArg::Identity)]
    weighting: WeightingArg,
    /// Count the intercept in the QIC_w parameter count.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    qicw_count_intercept: bool,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp banner so that reruns are byte-identical.
    #[arg(long)]
    no_banner: bool,
    /// Read flags from a config file or an earlier report; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Selection criterion.
    #[arg(long, value_enum, default_value_t = CriterionArg::Proposed)]
    criterion: CriterionArg,
    /// Split rows round-robin into this many blocks and select on each.
    #[arg(long, default_value_t = 1)]
    blocks: usize,
    /// Fit the propensity model once on all candidates (false: refit per candidate model).
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    fixed_ps: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Table id.
    #[arg(long, value_parser = parse_table)]
    table: TableId,
    /// Successful replications per cell (default 500, or 3000 with --paper).
    #[arg(long)]
    reps: Option<usize>,
    /// Use the full 3000 replications.
    #[arg(long)]
    paper: bool,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0: all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Include every replication's values.
    #[arg(long)]
    dump_raw: bool,
    /// Fit the propensity model once on all candidates in selection tables.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    fixed_ps: bool,
    /// Count the intercept in the QIC_w parameter count.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = ArgAction::Set)]
    qicw_count_intercept: bool,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_table(s: &str) -> std::result::Result<TableId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl FormatArg {
    fn format(self) -> Format {
        match self {
            FormatArg::Csv => Format::Csv,
            FormatArg::Md => Format::Md,
            FormatArg::Json => Format::Json,
        }
    }
}

/// Parsed `--ps` value.
#[derive(Debug, Clone, PartialEq, Eq)]
enum PsArg {
    Known(String),
    Mle,
    Cbd,
}

fn parse_ps(s: &str) -> Result<PsArg> {
    match s {
        "mle" => Ok(PsArg::Mle),
        "cbd" => Ok(PsArg::Cbd),
        other => match other.strip_prefix("known:") {
            Some(col) if !col.is_empty() => Ok(PsArg::Known(col.to_string())),
            _ => Err(Error::Config(format!("--ps must be known:<column>, mle or cbd; got `{other}`"))),
        },
    }
}

impl ModelArgs {
    fn weighting(&self) -> Weighting {
        match self.weighting {
            WeightingArg::Identity => Weighting::Identity,
            WeightingArg::Optimal => Weighting::Optimal,
        }
    }

    fn ps_config(&self, ps: &PsArg, known: Option<&DVector<f64>>) -> PsConfig {
        match ps {
            PsArg::Known(_) => PsConfig::Known(known.cloned().unwrap_or_else(|| DVector::zeros(0))),
            PsArg::Mle => PsConfig::Mle,
            PsArg::Cbd => PsConfig::Cbd(CbdOptions::new(self.weighting())),
        }
    }

    fn config(&self, out: &mut Vec<(String, String)>) {
        out.push(("ps".into(), self.ps.clone()));
        out.push(("weighting".into(), self.weighting.to_possible_value().expect("no skipped variants").get_name().into()));
        out.push(("qicw-count-intercept".into(), self.qicw_count_intercept.to_string()));
    }
}

impl DataArgs {
    fn load(&self, ps: &PsArg) -> Result<Loaded> {
        let outcome = match (&self.ypre, &self.ypost, &self.delta) {
            (Some(pre), Some(post), None) => OutcomeColumns::Levels { pre: pre.clone(), post: post.clone() },
            (None, None, Some(d)) => OutcomeColumns::Delta(d.clone()),
            _ => return Err(Error::Config("give either --ypre and --ypost, or --delta".into())),
        };
        let schema = Schema {
            treat: self.treat.clone(),
            outcome,
            covariates: self.covars.clone(),
            propensity: match ps {
                PsArg::Known(c) => Some(c.clone()),
                _ => None,
            },
        };
        load_csv(&self.data, &schema)
    }

    fn config(&self, out: &mut Vec<(String, String)>) {
        out.push(("data".into(), self.data.display().to_string()));
        out.push(("treat".into(), self.treat.clone()));
        if let (Some(pre), Some(post)) = (&self.ypre, &self.ypost) {
            out.push(("ypre".into(), pre.clone()));
            out.push(("ypost".into(), post.clone()));
        }
        if let Some(d) = &self.delta {
            out.push(("delta".into(), d.clone()));
        }
        if let Some(c) = &self.covars {
            out.push(("covars".into(), c.join(",")));
        }
    }
}

impl OutputArgs {
    fn config(&self, out: &mut Vec<(String, String)>) {
        out.push(("format".into(), self.format.format().as_str().into()));
        out.push(("no-banner".into(), self.no_banner.to_string()));
    }

    fn emit(&self, doc: &Document, stdout: &mut dyn Write) -> Result<()> {
        let text = render(doc, self.format.format());
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|source| Error::Io { path: p.display().to_string(), source }),
            None => stdout
                .write_all(text.as_bytes())
                .map_err(|source| Error::Io { path: "<stdout>".into(), source }),
        }
    }
}

fn selection_options(count_intercept: bool, fixed_ps: bool) -> SelectionOptions {
    SelectionOptions {
        qicw: QicwOptions { count_intercept, ..QicwOptions::default() },
        ps_scope: if fixed_ps { PsScope::Candidates } else { PsScope::PerSpec },
        ..SelectionOptions::default()
    }
}

fn term_names(ds: &Dataset, spec: &ModelSpec) -> Vec<String> {
    let mut v = Vec::new();
    if spec.include_intercept() {
        v.push("(intercept)".to_string());
    }
    v.extend(spec.selected().iter().map(|&j| ds.covariate_names()[j].clone()));
    v
}

/// Mean balance moments `n⁻¹ Σ (d − e) x xᵀ` and `n⁻¹ Σ e{(1 − d)/(1 − e) − 1} x xᵀ` over
/// the lower triangle, column-major.
fn balance_section(x: &DMatrix<f64>, d: &[bool], e1: &DVector<f64>, names: &[String]) -> Section {
    let (n, p) = x.shape();
    let mut s = Section::new("balance", "Second-moment balance residuals", &["group", "term_a", "term_b", "residual"]);
    for (group, treated) in [("treated", true), ("control", false)] {
        for j in 0..p {
            for i in j..p {
                let mut sum = 0.0;
                for u in 0..n {
                    let e = e1[u];
                    let w = if treated {
                        f64::from(u8::from(d[u])) - e
                    } else {
                        e * (f64::from(u8::from(!d[u])) / (1.0 - e) - 1.0)
                    };
                    sum += w * x[(u, i)] * x[(u, j)];
                }
                s.rows.push(vec![group.into(), names[i].clone().into(), names[j].clone().into(), Cell::Num(sum / n as f64)]);
            }
        }
    }
    s
}

fn ps_summary(ps: &PsFit, names: &[String], summary: &mut Vec<(String, Cell)>, sections: &mut Vec<Section>) {
    let alpha = match ps {
        PsFit::Known(_) => {
            summary.push(("ps_model".into(), "known".into()));
            None
        }
        PsFit::Mle { fit, .. } => {
            summary.push(("ps_model".into(), "mle".into()));
            summary.push(("ps_converged".into(), fit.converged.to_string().into()));
            summary.push(("ps_iterations".into(), fit.iterations.into()));
            summary.push(("ps_score_norm".into(), Cell::Num(fit.score_norm)));
            Some(&fit.model.alpha)
        }
        PsFit::Cbd { fit, .. } => {
            let w = match fit.weighting {
                Weighting::Identity => "cbd-identity",
                Weighting::Optimal => "cbd-optimal",
            };
            summary.push(("ps_model".into(), w.into()));
            summary.push(("ps_converged".into(), fit.converged.to_string().into()));
            summary.push(("ps_iterations".into(), fit.iterations.into()));
            summary.push(("foc_norm".into(), Cell::Num(fit.foc_norm)));
            summary.push(("foc_tolerance".into(), Cell::Num(fit.foc_tolerance)));
            summary.push(("gmm_objective".into(), Cell::Num(fit.objective)));
            summary.push(("moment_sup_norm".into(), Cell::Num(fit.moment_sup_norm)));
            if fit.weighting == Weighting::Optimal {
                summary.push(("omega_condition".into(), Cell::Num(fit.omega_condition)));
                summary.push(("near_singular_weight".into(), fit.near_singular_weight.to_string().into()));
            }
            Some(&fit.model.alpha)
        }
    };
    if let Some(a) = alpha {
        let mut s = Section::new("propensity", "Propensity coefficients", &["term", "alpha"]);
        for (name, v) in names.iter().zip(a.iter()) {
            s.rows.push(vec![name.clone().into(), Cell::Num(*v)]);
        }
        sections.push(s);
    }
}

fn cmd_estimate(a: &EstimateArgs, stdout: &mut dyn Write) -> Result<()> {
    let ps_arg = parse_ps(&a.model.ps)?;
    let loaded = a.data.load(&ps_arg)?;
    let ds = &loaded.dataset;
    let spec = ModelSpec::full(ds.n_covariates());
    let names = term_names(ds, &spec);
    let ps = a.model.ps_config(&ps_arg, loaded.propensity.as_ref());
    let opts = selection_options(a.model.qicw_count_intercept, true);
    let kind = CriterionKind::proposed_for(ps.mode());
    let ev = evaluate(ds, &spec, kind, &ps, &opts)?;
    let x = design_matrix(ds, &spec)?;
    let d = ds.treatment();
    let qicw = criterion_from_fits(&x, &d, &ds.delta(), &ev.ps, &ev.theta, &spec, CriterionKind::Qicw, &opts)?;

    let mut summary: Vec<(String, Cell)> = vec![
        ("n".into(), ds.len().into()),
        ("n_treated".into(), ds.n_treated().into()),
        ("att".into(), Cell::Num(ev.theta.att)),
    ];
    let mut sections = Vec::new();
    let mut coef = Section::new("coefficients", "SDID coefficients", &["term", "theta"]);
    for (name, v) in names.iter().zip(ev.theta.theta.iter()) {
        coef.rows.push(vec![name.clone().into(), Cell::Num(*v)]);
    }
    sections.push(coef);
    ps_summary(&ev.ps, &names, &mut summary, &mut sections);
    sections.push(balance_section(&x, &d, ev.ps.e1(), &names));
    let mut crit = Section::new("criteria", "Criteria at the full model", &["criterion", "total", "fit", "penalty"]);
    for v in [&ev.value, &qicw] {
        let label = if v.kind == CriterionKind::Qicw { "qicw" } else { "proposed" };
        crit.rows.push(vec![label.into(), Cell::Num(v.total), Cell::Num(v.gof), Cell::Num(v.penalty)]);
    }
    sections.push(crit);

    let mut cfg = Vec::new();
    a.data.config(&mut cfg);
    a.model.config(&mut cfg);
    a.output.config(&mut cfg);
    let doc = Document { command: "estimate".into(), banner: !a.output.no_banner, config: cfg, summary, sections };
    a.output.emit(&doc, stdout)
}

fn cmd_select(a: &SelectArgs, stdout: &mut dyn Write) -> Result<()> {
    let ps_arg = parse_ps(&a.model.ps)?;
    if a.blocks == 0 {
        return Err(Error::Config("--blocks must be positive".into()));
    }
    let loaded = a.data.load(&ps_arg)?;
    let ds = &loaded.dataset;
    let l = ds.n_covariates();
    let full = ModelSpec::full(l);
    let names = term_names(ds, &full);
    let opts = selection_options(a.model.qicw_count_intercept, a.fixed_ps);
    let blocks = ds.split_blocks(a.blocks)?;
    let candidates: Vec<usize> = (0..l).collect();

    let mut coef_cols: Vec<&str> = vec!["block", "criterion", "selected"];
    coef_cols.extend(names.iter().map(String::as_str));
    let mut coefs = Section::new("coefficients", "Selected coefficients (0: not selected)", &coef_cols);
    let mut paths = Section::new("paths", "Forward selection paths", &["block", "step", "added", "total", "fit", "penalty"]);
    for (b, block) in blocks.iter().enumerate() {
        let known = loaded.propensity.as_ref().map(|e| {
            DVector::from_iterator(block.len(), (b..ds.len()).step_by(a.blocks).map(|r| e[r]))
        });
        let ps = a.model.ps_config(&ps_arg, known.as_ref());
        let kind = match a.criterion {
            CriterionArg::Proposed => CriterionKind::proposed_for(ps.mode()),
            CriterionArg::Qicw => CriterionKind::Qicw,
        };
        let res = forward_select(block, &candidates, kind, &ps, &opts)?;
        for (i, step) in res.path.iter().enumerate() {
            let added = step.added.map_or_else(|| "(start)".to_string(), |j| ds.covariate_names()[j].clone());
            paths.rows.push(vec![
                (b + 1).into(),
                i.into(),
                added.into(),
                Cell::Num(step.value.total),
                Cell::Num(step.value.gof),
                Cell::Num(step.value.penalty),
            ]);
        }
        let padded = res.final_spec.pad_to(&res.final_fit.theta, &full)?;
        let selected: Vec<&str> = res.final_spec.selected().iter().map(|&j| ds.covariate_names()[j].as_str()).collect();
        let label = match a.criterion {
            CriterionArg::Proposed => "proposed",
            CriterionArg::Qicw => "qicw",
        };
        let mut row: Vec<Cell> = vec![(b + 1).into(), label.into(), selected.join(" ").into()];
        row.extend(padded.iter().map(|&v| Cell::Num(v)));
        coefs.rows.push(row);
    }

    let mut cfg = Vec::new();
    a.data.config(&mut cfg);
    a.model.config(&mut cfg);
    cfg.push(("criterion".into(), a.criterion.to_possible_value().expect("no skipped variants").get_name().into()));
    cfg.push(("blocks".into(), a.blocks.to_string()));
    cfg.push(("fixed-ps".into(), a.fixed_ps.to_string()));
    a.output.config(&mut cfg);
    let summary = vec![
        ("n".into(), ds.len().into()),
        ("blocks".into(), a.blocks.into()),
        ("ps_mode".into(), ps_label(a.model.ps_config(&ps_arg, None).mode()).into()),
    ];
    let doc = Document {
        command: "select".into(),
        banner: !a.output.no_banner,
        config: cfg,
        summary,
        sections: vec![coefs, paths],
    };
    a.output.emit(&doc, stdout)
}

fn ps_label(mode: PsMode) -> &'static str {
    match mode {
        PsMode::Known => "known",
        PsMode::Mle => "mle",
        PsMode::Cbd(Weighting::Identity) => "cbd-identity",
        PsMode::Cbd(Weighting::Optimal) => "cbd-optimal",
    }
}

fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let reps = a.reps.unwrap_or(if a.paper { 3000 } else { 500 });
    let opts = McOptions {
        reps,
        seed: a.seed,
        jobs: a.jobs,
        selection: selection_options(a.qicw_count_intercept, a.fixed_ps),
        ..McOptions::default()
    };
    let start = Instant::now();
    let report = run_table(a.table, &opts)?;
    let _ = writeln!(
        stderr,
        "{}: {} cells, {} replications attempted, {} failed, {:.1}s",
        a.table,
        report.cells.len(),
        report.attempted(),
        report.failed(),
        start.elapsed().as_secs_f64()
    );
    let cfg = vec![
        ("table".to_string(), a.table.id().to_string()),
        ("reps".to_string(), reps.to_string()),
        ("paper".to_string(), a.paper.to_string()),
        ("seed".to_string(), a.seed.to_string()),
        ("fixed-ps".to_string(), a.fixed_ps.to_string()),
        ("qicw-count-intercept".to_string(), a.qicw_count_intercept.to_string()),
        ("dump-raw".to_string(), a.dump_raw.to_string()),
        ("format".to_string(), a.output.format.format().as_str().to_string()),
        ("no-banner".to_string(), a.output.no_banner.to_string()),
    ];
    let doc = Document {
        command: "simulate".into(),
        banner: !a.output.no_banner,
        config: cfg,
        summary: mc_summary(&report),
        sections: mc_sections(&report, a.dump_raw),
    };
    a.output.emit(&doc, stdout)?;
    report.check()
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run(argv: Vec<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let argv = match config::expand(argv) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (stage, res) = match &cli.command {
        Command::Estimate(a) => ("estimate", cmd_estimate(a, stdout)),
        Command::Select(a) => ("select", cmd_select(a, stdout)),
        Command::Simulate(a) => ("simulate", cmd_simulate(a, stdout, stderr)),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error in {stage}: {e}");
            e.exit_code()
        }
    }
}
