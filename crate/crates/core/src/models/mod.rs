//! Histogram gradient-boosted trees: a pinball-loss quantile pair for CQR
//! and a logistic classifier for ratio estimation.
//!
//! Features are binned once (at most `max_bins` bins per feature) and each
//! feature gets one extra bin for missing values, so NA-bearing inputs are
//! scored without imputation.

mod classifier;
mod quantile;
mod tree;

pub use classifier::{fit_classifier, ProbClassifier, YProfile, PROB_CLIP};
pub use quantile::{fit_quantile_pair, pinball_loss, QuantilePair, QuantileRegressor};
pub use tree::{BinMapper, Tree};

use crate::error::{McvError, Result};

/// Shared boosting hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
    pub subsample: f64,
    /// Share of rows held out to pick the number of rounds (classifier only;
    /// 0 disables early stopping).
    pub validation_fraction: f64,
    /// Rounds without held-out improvement before stopping.
    pub patience: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 4, learning_rate: 0.1, max_bins: 64, min_samples_leaf: 20, lambda: 1.0, subsample: 1.0, validation_fraction: 0.0, patience: 10 }
    }
}

impl TreeParams {
    /// Shallow, heavily shrunk ensemble for probability estimates that feed
    /// likelihood ratios when imputation is close to the truth.
    pub fn ratio_default() -> Self {
        Self { n_trees: 100, max_depth: 2, learning_rate: 0.05, min_samples_leaf: 100, lambda: 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(McvError::Config("n_trees, max_depth and min_samples_leaf must be positive".into()));
        }
        if !(2..=255).contains(&self.max_bins) {
            return Err(McvError::Config("max_bins must lie in 2..=255".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(McvError::Config("learning_rate must lie in (0, 1]".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) || self.patience == 0 {
            return Err(McvError::Config("validation_fraction must lie in [0, 0.5] and patience must be positive".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) || self.lambda < 0.0 {
            return Err(McvError::Config("subsample must lie in (0, 1] and lambda must be >= 0".into()));
        }
        Ok(())
    }
}
