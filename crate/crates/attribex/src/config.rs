//! Hyperparameters of the learn/detect/search pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeWeighting;
use crate::retrieval::AttrMetric;

/// Everything the pipeline core needs to go from a training corpus to
/// rankings. Paths, seeds and run-directory bookkeeping live in the CLI.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    /// Power-normalization exponent in (0, 1]; 1 disables it.
    pub power_alpha: f64,
    /// PCA target dimensionality; 0 disables projection.
    pub pca_dim: usize,
    pub whiten: bool,
    /// Mutual kNN neighborhood size (clipped to n-1 at build time).
    pub k_nn: usize,
    pub edge_weighting: EdgeWeighting,
    /// Attribute-sharing weight.
    pub lambda: f64,
    /// Redundancy-penalty weight.
    pub gamma: f64,
    /// Number of attributes (clipped to 4n at design time).
    pub k: usize,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    /// SVM regularization trade-off.
    pub c: f64,
    pub attr_metric: AttrMetric,
    pub use_deep: bool,
    pub use_class: bool,
    /// One gallery image per identity; when false every view beyond the
    /// probe goes to the gallery.
    pub single_gallery_shot: bool,
    /// Worker threads for the detector trainings. Execution detail, not
    /// part of the configuration identity: results are the same for any
    /// thread count, so snapshots and hashes exclude it.
    #[serde(skip, default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            power_alpha: 1.0,
            pca_dim: 0,
            whiten: false,
            k_nn: 60,
            edge_weighting: EdgeWeighting::Weighted,
            lambda: 2.0,
            gamma: 7.0,
            k: 1000,
            eigen_tol: 1e-8,
            eigen_max_iter: 5000,
            c: 1.0,
            attr_metric: AttrMetric::Cosine,
            use_deep: true,
            use_class: true,
            single_gallery_shot: true,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.power_alpha.is_nan() || self.power_alpha <= 0.0 || self.power_alpha > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "power_alpha must be in (0, 1], got {}",
                self.power_alpha
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.k_nn == 0 {
            return Err(Error::InvalidConfig("k_nn must be at least 1".into()));
        }
        if self.c.is_nan() || self.c <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "c must be positive, got {}",
                self.c
            )));
        }
        if self.eigen_tol.is_nan() || self.eigen_tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eigen_tol must be positive, got {}",
                self.eigen_tol
            )));
        }
        if self.eigen_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "eigen_max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
