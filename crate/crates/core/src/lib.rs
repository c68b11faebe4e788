//! Covariate-balancing propensity scores for semiparametric difference-in-differences.
//!
//! The crate covers the full estimation stack:
//!
//! - [`model`]: two-period panel data, working-model specifications and design matrices.
//! - [`propensity`]: logistic propensity scores fit by maximum likelihood or by
//!   GMM over second-order covariate-balancing moments.
//! - [`did`]: the weighted least-squares SDID estimator of the conditional ATT.
//! - [`selection`]: risk-based information criteria and forward selection.
//! - [`sim`]: data-generating processes, truth oracles and single-replication drivers.
//!
//! Everything builds without `std` (an allocator is required).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod did;
pub mod error;
pub mod linalg;
mod math;
pub mod model;
pub mod propensity;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use math::sigmoid;

pub use nalgebra::{DMatrix, DVector};
