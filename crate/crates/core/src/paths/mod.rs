//! Forward stepwise and lasso paths, and reconstruction of a path's order
//! from `(E_k, X_E'y)` alone.

mod lasso;
mod stepwise;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActiveSet, Dataset, SufficientStat};

pub use lasso::{lasso_path, restricted_lasso_path, LassoKnots, LassoMode, LassoProblem, Knot, RestrictedPath};
pub use stepwise::{forward_stepwise, stepwise_entry_order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ForwardStepwise,
    Lasso,
}

/// One step of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    /// 1-based step index.
    pub k: usize,
    pub entered: usize,
    /// `|t*|` for forward stepwise, `lambda_k` for the lasso.
    pub statistic: f64,
    pub lambda: Option<f64>,
    pub active_after: ActiveSet,
}

#[derive(Debug, Clone)]
pub struct ModelPath {
    pub algorithm: Algorithm,
    pub base: ActiveSet,
    pub steps: Vec<PathStep>,
    /// Number of steps asked for; `steps.len()` is smaller when the path ran
    /// out of admissible variables.
    pub requested: usize,
    pub knots: Option<LassoKnots>,
}

impl ModelPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn truncated(&self) -> bool {
        self.steps.len() < self.requested
    }

    /// `E_k`; `k = 0` gives the forced-in set.
    pub fn active_at(&self, k: usize) -> Result<&ActiveSet> {
        match k {
            0 => Ok(&self.base),
            _ => self.step(k).map(|s| &s.active_after),
        }
    }

    pub fn step(&self, k: usize) -> Result<&PathStep> {
        if k == 0 || k > self.steps.len() {
            return Err(Error::StepOutOfRange { step: k, len: self.steps.len() });
        }
        Ok(&self.steps[k - 1])
    }

    pub fn entrants(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.entered).collect()
    }
}

/// Recover the entry order of `active` using only `X_E'y`.
///
/// `suff.xty[i]` must equal `X_{active.entries[i]}'y`; the order of
/// `active.entries` itself is ignored. The response is never consulted.
pub fn reconstruct_subpath(
    dataset: &Dataset,
    active: &ActiveSet,
    suff: &SufficientStat,
    algorithm: Algorithm,
) -> Result<Vec<usize>> {
    if suff.xty.len() != active.len() {
        return Err(Error::InvalidInput(format!(
            "{} sufficient statistics for an active set of size {}",
            suff.xty.len(),
            active.len()
        )));
    }
    let base = dataset.base_active();
    if !base.entries.iter().all(|&b| active.contains(b)) {
        return Err(Error::ReconstructionFailure("active set does not contain the forced-in columns".into()));
    }
    let order = match algorithm {
        Algorithm::ForwardStepwise => stepwise::reconstruct(dataset, active, suff)?,
        Algorithm::Lasso => lasso::reconstruct(dataset, active, suff)?,
    };
    let mut full = base.entries.clone();
    full.extend(order);
    Ok(full)
}
