//! Run configuration: one JSON file drives every stage. Unknown keys are
//! rejected so typos fail loudly instead of silently using defaults.

use serde::{Deserialize, Serialize};

use attribex::config::PipelineConfig;
use attribex::error::{Error, Result};
use attribex::graph::EdgeWeighting;
use attribex::retrieval::AttrMetric;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // synthetic corpus
    pub n_train_instances: usize,
    pub n_test_instances: usize,
    pub n_distractor_instances: usize,
    pub views_per_instance: usize,
    pub dim: usize,
    pub view_noise: f64,

    // normalization and projection
    pub power_alpha: f64,
    pub pca_dim: usize,
    pub whiten: bool,

    // similarity graph
    pub k_nn: usize,
    pub edge_weighting: EdgeWeighting,

    // attribute design
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,

    // detectors
    pub c: f64,

    // retrieval
    pub attr_metric: AttrMetric,
    pub use_deep: bool,
    pub use_class: bool,

    // evaluation
    pub single_gallery_shot: bool,
    /// 1 evaluates the run directory's search output; above 1 runs the
    /// repeated half-split protocol directly on the corpus.
    pub eval_repeats: usize,

    // parameter sweep grids
    pub sweep_lambdas: Vec<f64>,
    pub sweep_gammas: Vec<f64>,
    pub sweep_ks: Vec<usize>,

    // synthetic experiments
    pub experiment_repeats: usize,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_train_instances: 40,
            n_test_instances: 20,
            n_distractor_instances: 0,
            views_per_instance: 8,
            dim: 64,
            view_noise: 0.5,
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
            eval_repeats: 1,
            sweep_lambdas: vec![0.0, 1.0, 2.0, 5.0],
            sweep_gammas: vec![0.01, 1.0, 7.0],
            sweep_ks: vec![10, 25, 50],
            experiment_repeats: 5,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_instances < 2 {
            return Err(Error::InvalidConfig(
                "n_train_instances must be at least 2".into(),
            ));
        }
        if self.views_per_instance == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig(
                "views_per_instance and dim must be positive".into(),
            ));
        }
        if self.view_noise < 0.0 {
            return Err(Error::InvalidConfig(
                "view_noise must be nonnegative".into(),
            ));
        }
        if self.eval_repeats == 0 {
            return Err(Error::InvalidConfig("eval_repeats must be at least 1".into()));
        }
        if self.experiment_repeats == 0 {
            return Err(Error::InvalidConfig(
                "experiment_repeats must be at least 1".into(),
            ));
        }
        self.to_pipeline(1).validate()
    }

    pub fn to_pipeline(&self, threads: usize) -> PipelineConfig {
        PipelineConfig {
            power_alpha: self.power_alpha,
            pca_dim: self.pca_dim,
            whiten: self.whiten,
            k_nn: self.k_nn,
            edge_weighting: self.edge_weighting,
            lambda: self.lambda,
            gamma: self.gamma,
            k: self.k,
            eigen_tol: self.eigen_tol,
            eigen_max_iter: self.eigen_max_iter,
            c: self.c,
            attr_metric: self.attr_metric,
            use_deep: self.use_deep,
            use_class: self.use_class,
            single_gallery_shot: self.single_gallery_shot,
            threads,
        }
    }

    /// Stable fingerprint of the configuration (FNV-1a over the canonical
    /// JSON form); stamped into the manifest next to every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canonical.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }
}
