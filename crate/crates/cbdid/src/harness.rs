//! Parallel Monte Carlo runs over the published simulation grids.
//!
//! Each replication draws from its own stream keyed by `(seed, cell, rep)`, results
//! are collected in replication order and reduced sequentially, so a report is
//! bit-identical for any worker count.

use std::fmt;
use std::str::FromStr;

use cbdid_core::did::{att_summary, PsMode};
use cbdid_core::propensity::Weighting;
use cbdid_core::selection::SelectionOptions;
use cbdid_core::sim::{
    att_replicate, bias_replicate, selection_replicate, theta_star_oracle, DgpFamily, DgpSpec, StreamKey, ThetaStar,
    DEFAULT_MC_SIZE,
};
use rayon::prelude::*;

use crate::error::{Error, Result};

const BETAS: [f64; 4] = [0.1, 0.5, 1.0, 3.0];
const ALPHAS: [f64; 2] = [1.0, 3.0];
const SIZES: [usize; 3] = [200, 400, 600];

/// Reproducible tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableId {
    /// ATT estimates under a misspecified propensity model.
    AttComparison,
    /// Penalty vs. true bias with known propensity scores.
    BiasKnown,
    /// Penalty vs. true bias with CBD (identity weighting).
    BiasCbdIdentity,
    /// Penalty vs. true bias with MLE propensity scores.
    BiasMle,
    /// Forward selection with known propensity scores.
    SelKnown,
    /// Forward selection with CBD (identity weighting).
    SelCbdIdentity,
    /// Forward selection with CBD (optimal weighting).
    SelCbdOptimal,
    /// Forward selection with MLE propensity scores.
    SelMle,
}

/// What a table measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// Mean and empirical interval of ATT estimates.
    Att,
    /// Monte Carlo true bias and both penalties.
    Bias(PsMode),
    /// Risk, TP and FP of both criteria.
    Selection(PsMode),
}

impl TableId {
    /// Every table, in id order.
    pub const ALL: [TableId; 8] = [
        TableId::AttComparison,
        TableId::BiasKnown,
        TableId::BiasCbdIdentity,
        TableId::BiasMle,
        TableId::SelKnown,
        TableId::SelCbdIdentity,
        TableId::SelCbdOptimal,
        TableId::SelMle,
    ];

    /// Command-line id.
    pub fn id(self) -> &'static str {
        match self {
            TableId::AttComparison => "att-comparison",
            TableId::BiasKnown => "bias-known",
            TableId::BiasCbdIdentity => "bias-cbd-id",
            TableId::BiasMle => "bias-mle",
            TableId::SelKnown => "sel-known",
            TableId::SelCbdIdentity => "sel-cbd-id",
            TableId::SelCbdOptimal => "sel-cbd-opt",
            TableId::SelMle => "sel-mle",
        }
    }

    /// Human-readable caption.
    pub fn title(self) -> &'static str {
        match self {
            TableId::AttComparison => "ATT estimates: CBD-id, CBD-opt and MLE propensity scores",
            TableId::BiasKnown => "Bias evaluation, known propensity scores",
            TableId::BiasCbdIdentity => "Bias evaluation, CBD propensity scores (identity weighting)",
            TableId::BiasMle => "Bias evaluation, MLE propensity scores",
            TableId::SelKnown => "Forward selection, known propensity scores",
            TableId::SelCbdIdentity => "Forward selection, CBD propensity scores (identity weighting)",
            TableId::SelCbdOptimal => "Forward selection, CBD propensity scores (optimal weighting)",
            TableId::SelMle => "Forward selection, MLE propensity scores",
        }
    }

    /// Measurement and propensity mode.
    pub fn kind(self) -> TableKind {
        match self {
            TableId::AttComparison => TableKind::Att,
            TableId::BiasKnown => TableKind::Bias(PsMode::Known),
            TableId::BiasCbdIdentity => TableKind::Bias(PsMode::Cbd(Weighting::Identity)),
            TableId::BiasMle => TableKind::Bias(PsMode::Mle),
            TableId::SelKnown => TableKind::Selection(PsMode::Known),
            TableId::SelCbdIdentity => TableKind::Selection(PsMode::Cbd(Weighting::Identity)),
            TableId::SelCbdOptimal => TableKind::Selection(PsMode::Cbd(Weighting::Optimal)),
            TableId::SelMle => TableKind::Selection(PsMode::Mle),
        }
    }

    /// Grid of designs in table row order.
    pub fn cells(self) -> Vec<DgpSpec> {
        let mut out = Vec::new();
        match self.kind() {
            TableKind::Att => {
                for b in BETAS {
                    for a in ALPHAS {
                        for n in SIZES {
                            out.push(DgpSpec::robustness(b, a, n));
                        }
                    }
                }
            }
            TableKind::Bias(_) => {
                for b in BETAS {
                    for n in SIZES {
                        for f in [DgpFamily::Case11, DgpFamily::Case12] {
                            out.push(DgpSpec::new(f, b, n));
                        }
                    }
                }
            }
            TableKind::Selection(_) => {
                for b in BETAS {
                    for n in SIZES {
                        for f in [DgpFamily::Case21, DgpFamily::Case22, DgpFamily::Case23] {
                            out.push(DgpSpec::new(f, b, n));
                        }
                    }
                }
            }
        }
        out
    }

    /// Index of the cell with this family, `β*`, `n` (and `α*` for the ATT table).
    pub fn find_cell(self, family: DgpFamily, beta: f64, alpha: f64, n: usize) -> Option<usize> {
        self.cells().iter().position(|s| {
            s.family == family && s.beta_star == beta && s.n == n && (family != DgpFamily::Robustness || s.alpha_star == alpha)
        })
    }

    /// Names of the columns identifying a cell.
    pub fn key_columns(self) -> &'static [&'static str] {
        match self.kind() {
            TableKind::Att => &["beta", "alpha", "n"],
            _ => &["case", "beta", "n"],
        }
    }

    /// Values identifying a cell, aligned with [`TableId::key_columns`].
    pub fn key_values(self, spec: &DgpSpec) -> Vec<String> {
        match self.kind() {
            TableKind::Att => vec![spec.beta_star.to_string(), spec.alpha_star.to_string(), spec.n.to_string()],
            _ => vec![spec.family.label().to_string(), spec.beta_star.to_string(), spec.n.to_string()],
        }
    }

    /// Names of the aggregated columns.
    pub fn value_columns(self) -> &'static [&'static str] {
        match self.kind() {
            TableKind::Att => &[
                "true", "cbd_id", "cbd_id_lo", "cbd_id_hi", "cbd_opt", "cbd_opt_lo", "cbd_opt_hi", "mle", "mle_lo",
                "mle_hi",
            ],
            TableKind::Bias(_) => &["true", "proposal", "qicw"],
            TableKind::Selection(_) => &["proposal_risk", "proposal_tp", "proposal_fp", "qicw_risk", "qicw_tp", "qicw_fp"],
        }
    }

    /// Names of the per-replication values.
    pub fn raw_columns(self) -> &'static [&'static str] {
        match self.kind() {
            TableKind::Att => &["cbd_id", "cbd_opt", "mle"],
            TableKind::Bias(_) => &["true", "proposal", "qicw"],
            TableKind::Selection(_) => self.value_columns(),
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TableId::ALL.into_iter().find(|t| t.id() == s).ok_or_else(|| {
            let ids: Vec<&str> = TableId::ALL.iter().map(|t| t.id()).collect();
            Error::Config(format!("unknown table `{s}`; valid ids: {}", ids.join(", ")))
        })
    }
}

/// Settings of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    /// Successful replications per cell.
    pub reps: usize,
    /// Master seed.
    pub seed: u64,
    /// Worker threads (0 = all cores). Does not affect results.
    pub jobs: usize,
    /// Monte Carlo size of the θ* oracle.
    pub mc_size: usize,
    /// Criterion and selection settings.
    pub selection: SelectionOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            reps: 500,
            seed: 0,
            jobs: 0,
            mc_size: DEFAULT_MC_SIZE,
            selection: SelectionOptions::default(),
        }
    }
}

/// A replication excluded from the aggregates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    /// Replication index (the stream key's `rep`).
    pub rep: u64,
    /// Error message.
    pub message: String,
}

/// Aggregates of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    /// Index in the table's full grid (the stream key's `cell`).
    pub index: usize,
    /// Design.
    pub spec: DgpSpec,
    /// Values aligned with [`TableId::value_columns`].
    pub values: Vec<f64>,
    /// Successful replications in replication order, aligned with [`TableId::raw_columns`].
    pub raw: Vec<Vec<f64>>,
    /// Excluded replications.
    pub failures: Vec<Failure>,
}

impl CellReport {
    /// Aggregate by column name.
    pub fn value(&self, table: TableId, column: &str) -> Option<f64> {
        table.value_columns().iter().position(|c| *c == column).map(|j| self.values[j])
    }
}

/// Result of a table run.
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    /// Table.
    pub table: TableId,
    /// Requested successes per cell.
    pub reps: usize,
    /// Master seed.
    pub seed: u64,
    /// θ* Monte Carlo size.
    pub mc_size: usize,
    /// Cells in grid order.
    pub cells: Vec<CellReport>,
}

impl McReport {
    /// Replications attempted over all cells.
    pub fn attempted(&self) -> usize {
        self.cells.iter().map(|c| c.raw.len() + c.failures.len()).sum()
    }

    /// Replications that failed over all cells.
    pub fn failed(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }

    /// `failed / attempted`.
    pub fn failure_rate(&self) -> f64 {
        self.failed() as f64 / self.attempted().max(1) as f64
    }

    /// Errors when more than 1% of replications failed or a cell fell short of `reps`.
    pub fn check(&self) -> Result<()> {
        let short = self.cells.iter().any(|c| c.raw.len() < self.reps);
        if short || self.failed() * 100 > self.attempted() {
            return Err(Error::FailureRate {
                table: self.table.id().to_string(),
                failed: self.failed(),
                attempted: self.attempted(),
            });
        }
        Ok(())
    }

    /// Cell by grid index.
    pub fn cell(&self, index: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.index == index)
    }
}

fn replicate(table: TableId, spec: &DgpSpec, key: StreamKey, star: &ThetaStar, opts: &McOptions) -> cbdid_core::Result<Vec<f64>> {
    match table.kind() {
        TableKind::Att => Ok(vec![
            att_replicate(spec, key, PsMode::Cbd(Weighting::Identity))?,
            att_replicate(spec, key, PsMode::Cbd(Weighting::Optimal))?,
            att_replicate(spec, key, PsMode::Mle)?,
        ]),
        TableKind::Bias(mode) => {
            let r = bias_replicate(spec, key, mode, &star.theta, &opts.selection)?;
            Ok(vec![r.true_term, r.proposal, r.qicw])
        }
        TableKind::Selection(mode) => {
            let r = selection_replicate(spec, key, mode, &star.theta, &opts.selection)?;
            let (p, q) = (&r.proposed, &r.qicw);
            Ok(vec![p.risk, p.tp as f64, p.fp as f64, q.risk, q.tp as f64, q.fp as f64])
        }
    }
}

fn mean_column(raw: &[Vec<f64>], j: usize) -> f64 {
    raw.iter().map(|r| r[j]).sum::<f64>() / raw.len().max(1) as f64
}

fn aggregate(table: TableId, star: &ThetaStar, raw: &[Vec<f64>]) -> Vec<f64> {
    match table.kind() {
        TableKind::Att => {
            let mut v = vec![star.att];
            for j in 0..3 {
                let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
                match att_summary(&col) {
                    Ok(s) => v.extend([s.mean, s.lower, s.upper]),
                    Err(_) => v.extend([f64::NAN; 3]),
                }
            }
            v
        }
        _ => (0..table.raw_columns().len()).map(|j| mean_column(raw, j)).collect(),
    }
}

/// Runs every cell of `table`.
pub fn run_table(table: TableId, opts: &McOptions) -> Result<McReport> {
    let all: Vec<usize> = (0..table.cells().len()).collect();
    run_cells(table, &all, opts)
}

/// Runs the listed cells of `table` (grid indices). A cell's result does not depend on
/// which other cells are run alongside it.
///
/// Failed replications are excluded and recorded; further replication indices
/// `reps, reps + 1, …` are drawn until each cell has `reps` successes or its failures
/// exceed 1% of `reps`.
pub fn run_cells(table: TableId, cells: &[usize], opts: &McOptions) -> Result<McReport> {
    let grid = table.cells();
    if let Some(&bad) = cells.iter().find(|&&c| c >= grid.len()) {
        return Err(Error::Config(format!("table {table} has {} cells; no cell {bad}", grid.len())));
    }
    if opts.reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let stars: Vec<ThetaStar> = cells
            .par_iter()
            .map(|&c| {
                let spec = &grid[c];
                theta_star_oracle(spec, &spec.working_spec(), opts.mc_size, StreamKey::new(opts.seed, c as u64, u64::MAX))
            })
            .collect::<cbdid_core::Result<_>>()?;

        let budget = opts.reps / 100;
        let mut raw: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cells.len()];
        let mut failures: Vec<Vec<Failure>> = vec![Vec::new(); cells.len()];
        let mut next: Vec<u64> = vec![0; cells.len()];
        loop {
            let mut tasks: Vec<(usize, u64)> = Vec::new();
            for k in 0..cells.len() {
                let need = opts.reps - raw[k].len();
                if need > 0 && failures[k].len() <= budget {
                    tasks.extend((next[k]..next[k] + need as u64).map(|r| (k, r)));
                    next[k] += need as u64;
                }
            }
            if tasks.is_empty() {
                break;
            }
            let results: Vec<cbdid_core::Result<Vec<f64>>> = tasks
                .par_iter()
                .map(|&(k, r)| {
                    let c = cells[k];
                    replicate(table, &grid[c], StreamKey::new(opts.seed, c as u64, r), &stars[k], opts)
                })
                .collect();
            for (&(k, r), res) in tasks.iter().zip(results) {
                match res {
                    Ok(v) => raw[k].push(v),
                    Err(e) => failures[k].push(Failure { rep: r, message: e.to_string() }),
                }
            }
        }
        let cells = cells
            .iter()
            .enumerate()
            .map(|(k, &c)| CellReport {
                index: c,
                spec: grid[c].clone(),
                values: aggregate(table, &stars[k], &raw[k]),
                raw: std::mem::take(&mut raw[k]),
                failures: std::mem::take(&mut failures[k]),
            })
            .collect();
        Ok(McReport {
            table,
            reps: opts.reps,
            seed: opts.seed,
            mc_size: opts.mc_size,
            cells,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(TableId::AttComparison.cells().len(), 24);
        assert_eq!(TableId::BiasKnown.cells().len(), 24);
        assert_eq!(TableId::SelMle.cells().len(), 36);
        for t in TableId::ALL {
            assert_eq!(t.id().parse::<TableId>().unwrap(), t);
            if !matches!(t.kind(), TableKind::Att) {
                assert_eq!(t.raw_columns().len(), t.value_columns().len());
            }
        }
        assert!("nope".parse::<TableId>().is_err());
    }

    #[test]
    fn find_cells() {
        let t = TableId::AttComparison;
        let c = t.find_cell(DgpFamily::Robustness, 1.0, 3.0, 600).unwrap();
        let s = &t.cells()[c];
        assert_eq!((s.beta_star, s.alpha_star, s.n), (1.0, 3.0, 600));
        let t = TableId::SelCbdIdentity;
        let c = t.find_cell(DgpFamily::Case23, 3.0, 0.0, 600).unwrap();
        assert_eq!(c, t.cells().len() - 1);
    }

    #[test]
    fn small_run_is_complete_and_reproducible() {
        let opts = McOptions { reps: 20, seed: 3, jobs: 2, mc_size: 20_000, ..Default::default() };
        let a = run_cells(TableId::BiasKnown, &[0, 1], &opts).unwrap();
        a.check().unwrap();
        assert_eq!(a.cells.len(), 2);
        assert!(a.cells.iter().all(|c| c.raw.len() == 20 && c.values.iter().all(|v| v.is_finite())));
        let b = run_cells(TableId::BiasKnown, &[1], &McOptions { jobs: 1, ..opts }).unwrap();
        assert_eq!(a.cells[1], b.cells[0]);
    }
}
