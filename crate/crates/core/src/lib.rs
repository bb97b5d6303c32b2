//! Quantile Velander-formula models of customer peak load.
//!
//! The `tau`-quantile of a customer's peak load is modelled as
//! `alpha_tau * E + beta_tau * sqrt(E)` where `E` is the customer's
//! electricity consumption. All levels of a quantile grid are fitted jointly
//! by minimising the average pinball loss, optionally under non-crossing
//! constraints ([`Constraint`]).
//!
//! Modules:
//! - [`model`]: domain types, the formula and the losses.
//! - [`ingest`]: smart-meter CSV parsing, cleaning and record datasets.
//! - [`solver`]: the constrained multiple quantile regression and its
//!   brute-force optimality oracle.
//! - [`evaluation`]: cross-validation, year-ahead and scaling transfer,
//!   aggregation studies, curve export and synthetic populations.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    average_pinball_loss, compute_features, pairwise_sum, pinball_loss, velander_quantile, Constraint, CustomerRecord,
    Interval, LoadProfile, QuantileGrid, QuantileParamSet,
};
pub use solver::{fit, verify_optimality, FitProblem, FitResult, Verdict};
