//! Simulation designs, truth oracles and single-replication drivers.
//!
//! Estimators only ever see the [`Dataset`](crate::model::Dataset); the
//! [`HiddenTruth`] returned alongside it is reserved for oracles.

mod dgp;
mod oracle;
mod replicate;
mod rng;

pub use dgp::{generate, DgpFamily, DgpSpec, HiddenTruth};
pub use oracle::{bias_term, empirical_risk, theta_star_oracle, tp_fp, ThetaStar, DEFAULT_MC_SIZE};
pub use replicate::{
    att_replicate, bias_replicate, ps_config, selection_replicate, BiasRecord, SelectionOutcome,
    SelectionRecord,
};
pub use rng::{Role, StreamKey};

use crate::did::PsMode;
use crate::error::Result;
use crate::selection::SelectionOptions;

/// Monte Carlo mean of the realized bias term over `reps` replications of cell 0.
pub fn true_bias_oracle(spec: &DgpSpec, mode: PsMode, reps: usize, seed: u64, mc_size: usize) -> Result<f64> {
    let star = theta_star_oracle(spec, &spec.working_spec(), mc_size, StreamKey::new(seed, 0, u64::MAX))?;
    let opts = SelectionOptions::default();
    let mut sum = 0.0;
    for r in 0..reps {
        sum += bias_replicate(spec, StreamKey::new(seed, 0, r as u64), mode, &star.theta, &opts)?.true_term;
    }
    Ok(sum / reps.max(1) as f64)
}
