//! Selective inference for sequential regression model selection.
//!
//! Builds forward stepwise and lasso paths, describes the event "the path
//! reached active set E" as a polytope given `X_E'y`, samples the conditional
//! null law on that polytope, and turns the samples into selected-model
//! p-values that feed sequential stopping rules.

pub mod changepoint;
pub mod error;
pub mod model;
pub mod par;
pub mod paths;
pub mod polytope;
pub mod pvalues;
pub mod rng;
pub mod samplers;
pub mod sim;
pub mod stats;
pub mod stopping;

pub use error::{Error, Result};
pub use model::{ActiveSet, Dataset, SufficientStat};
pub use par::Execution;
pub use paths::{Algorithm, ModelPath, PathStep};
