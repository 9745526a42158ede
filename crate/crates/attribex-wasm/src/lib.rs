//! Browser demo bindings: generate a synthetic corpus, learn attributes,
//! run one-example retrieval, and sweep the sharing weight, all in-page.
//!
//! Each export takes a JSON configuration string and returns a JSON result
//! string (or `{"error": ...}`), keeping the JS side free of wasm-specific
//! types. Build with `wasm-pack build --target web crates/attribex-wasm`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use attribex::attrdesign::{mean_abs_column_correlation, objective_components};
use attribex::config::PipelineConfig;
use attribex::dataset::Split;
use attribex::error::Result;
use attribex::eval::evaluate_trained;
use attribex::eval::{mean_average_precision, GroundTruth};
use attribex::pipeline::{assign_query_roles, preprocess, raw_feature_search, search, train};
use attribex::retrieval::AttrMetric;
use attribex::synthcheck::{build_experiment_corpus, ExperimentSpec};

#[derive(Deserialize, Clone)]
#[serde(default)]
struct DemoConfig {
    n_train_instances: usize,
    n_test_instances: usize,
    views_per_instance: usize,
    dim: usize,
    view_noise: f64,
    lambda: f64,
    gamma: f64,
    k: usize,
    k_nn: usize,
    seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_train_instances: 30,
            n_test_instances: 12,
            views_per_instance: 6,
            dim: 64,
            view_noise: 0.5,
            lambda: 2.0,
            gamma: 7.0,
            k: 30,
            k_nn: 12,
            seed: 42,
        }
    }
}

impl DemoConfig {
    fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            n_train_instances: self.n_train_instances,
            n_test_instances: self.n_test_instances,
            views_per_instance: self.views_per_instance,
            dim: self.dim,
            view_noise: self.view_noise,
            seed: self.seed,
            lambda: self.lambda,
            gamma: self.gamma,
            k: self.k,
            k_nn: self.k_nn,
            repeats: 1,
            ..ExperimentSpec::default()
        }
    }

    fn pipeline(&self) -> PipelineConfig {
        let spec = self.spec();
        PipelineConfig {
            attr_metric: AttrMetric::Cosine,
            ..spec.pipeline_config()
        }
    }
}

fn parse(config_json: &str) -> std::result::Result<DemoConfig, String> {
    if config_json.trim().is_empty() {
        return Ok(DemoConfig::default());
    }
    serde_json::from_str(config_json).map_err(|e| format!("bad config: {e}"))
}

fn jsonify<T: Serialize>(result: std::result::Result<T, String>) -> String {
    match result {
        Ok(value) => serde_json::to_string(&value)
            .unwrap_or_else(|e| format!("{{\"error\":\"serialization failed: {e}\"}}")),
        Err(msg) => serde_json::to_string(&serde_json::json!({ "error": msg }))
            .unwrap_or_else(|_| "{\"error\":\"unknown\"}".into()),
    }
}

#[derive(Serialize)]
struct LearnResult {
    n: usize,
    k: usize,
    /// Row-major n x k attribute matrix (values are +-1/sqrt(n)).
    attributes: Vec<f64>,
    /// Row-major n x n sparsified similarity matrix.
    similarity: Vec<f64>,
    instance_ids: Vec<String>,
    column_eigenvalues: Vec<f64>,
    mean_abs_column_correlation: f64,
    objective: ObjectiveOut,
}

#[derive(Serialize)]
struct ObjectiveOut {
    f1: f64,
    f2: f64,
    f3: f64,
    total: f64,
}

fn learn_impl(cfg: &DemoConfig) -> Result<LearnResult> {
    let (train_ds, _test) = build_experiment_corpus(&cfg.spec(), cfg.seed)?;
    let pipeline_cfg = cfg.pipeline();
    let trained = train(&train_ds, &pipeline_cfg)?;
    let processed = preprocess(&train_ds, pipeline_cfg.power_alpha, None)?;
    let objective =
        objective_components(&trained.attributes, &trained.graph, cfg.lambda, cfg.gamma)?;
    Ok(LearnResult {
        n: trained.attributes.n(),
        k: trained.attributes.k(),
        attributes: trained.attributes.matrix().data().to_vec(),
        similarity: trained.graph.s().data().to_vec(),
        instance_ids: processed.instance_ids().to_vec(),
        column_eigenvalues: trained.attributes.column_eigenvalues().to_vec(),
        mean_abs_column_correlation: mean_abs_column_correlation(trained.attributes.matrix()),
        objective: ObjectiveOut {
            f1: objective.f1,
            f2: objective.f2,
            f3: objective.f3,
            total: objective.total,
        },
    })
}

/// Learn an attribute matrix on a synthetic corpus; returns the matrix, the
/// similarity graph and the objective terms for display.
#[wasm_bindgen]
pub fn learn_attributes(config_json: &str) -> String {
    jsonify(parse(config_json).and_then(|cfg| learn_impl(&cfg).map_err(|e| e.to_string())))
}

#[derive(Serialize)]
struct RetrievalResult {
    map_attributes: f64,
    map_raw: f64,
    cmc: Vec<f64>,
    example_query: Option<ExampleQuery>,
}

#[derive(Serialize)]
struct ExampleQuery {
    query_id: String,
    query_instance: String,
    /// (image_id, instance_id, fused score, is_match) in rank order.
    ranking: Vec<(String, String, f64, bool)>,
}

fn retrieval_impl(cfg: &DemoConfig) -> Result<RetrievalResult> {
    let spec = cfg.spec();
    let (train_ds, test_ds) = build_experiment_corpus(&spec, cfg.seed)?;
    let pipeline_cfg = cfg.pipeline();
    let trained = train(&train_ds, &pipeline_cfg)?;
    let report = evaluate_trained(&trained, &test_ds, &pipeline_cfg, cfg.seed)?;

    let roles = assign_query_roles(&test_ds, pipeline_cfg.single_gallery_shot)?;
    let probes_raw = roles.split_subset(Split::Probe)?;
    let gallery_raw = roles.split_subset(Split::Gallery)?;

    let raw_ranked = raw_feature_search(&probes_raw, &gallery_raw)?;
    let gt = GroundTruth::from_datasets(&probes_raw, &gallery_raw);
    let (_, map_raw, _) = mean_average_precision(&raw_ranked, &gt)?;

    let probes = preprocess(&probes_raw, pipeline_cfg.power_alpha, trained.projector.as_ref())?;
    let gallery = preprocess(
        &gallery_raw,
        pipeline_cfg.power_alpha,
        trained.projector.as_ref(),
    )?;
    let results = search(&trained, &probes, &gallery, &pipeline_cfg)?;
    let example_query = results.first().map(|q| {
        let instance_of = |id: &str| -> String {
            gallery_raw
                .images()
                .iter()
                .find(|r| r.image_id == id)
                .map(|r| r.instance_id.clone())
                .unwrap_or_default()
        };
        let query_instance = probes_raw
            .images()
            .iter()
            .find(|r| r.image_id == q.ranked.query_id)
            .map(|r| r.instance_id.clone())
            .unwrap_or_default();
        ExampleQuery {
            query_id: q.ranked.query_id.clone(),
            query_instance: query_instance.clone(),
            ranking: q
                .ranked
                .ranking
                .iter()
                .map(|(id, score)| {
                    let inst = instance_of(id);
                    let hit = inst == query_instance;
                    (id.clone(), inst, *score, hit)
                })
                .collect(),
        }
    });

    Ok(RetrievalResult {
        map_attributes: report.map,
        map_raw,
        cmc: report.cmc,
        example_query,
    })
}

/// Train on held-in instances, retrieve held-out probes against a
/// single-shot gallery; returns mAP (attributes and raw baseline), the CMC
/// curve and one example ranking.
#[wasm_bindgen]
pub fn evaluate_retrieval(config_json: &str) -> String {
    jsonify(parse(config_json).and_then(|cfg| retrieval_impl(&cfg).map_err(|e| e.to_string())))
}

#[derive(Serialize)]
struct SweepResult {
    ks: Vec<usize>,
    curves: Vec<SweepCurve>,
}

#[derive(Serialize)]
struct SweepCurve {
    lambda: f64,
    maps: Vec<f64>,
}

fn sweep_impl(cfg: &DemoConfig, lambdas: &[f64]) -> Result<SweepResult> {
    let spec = cfg.spec();
    let (train_ds, test_ds) = build_experiment_corpus(&spec, cfg.seed)?;
    let mut ks: Vec<usize> = vec![(cfg.k / 5).max(1), (cfg.k / 2).max(1), cfg.k];
    ks.dedup();
    let mut curves = Vec::new();
    for &lambda in lambdas {
        let pipeline_cfg = PipelineConfig {
            lambda,
            ..cfg.pipeline()
        };
        let trained = train(&train_ds, &pipeline_cfg)?;
        let mut maps = Vec::new();
        for &k in &ks {
            let mut prefix = trained.clone();
            prefix.bank = trained.bank.prefix(k);
            let eval_cfg = PipelineConfig {
                k,
                ..pipeline_cfg.clone()
            };
            maps.push(evaluate_trained(&prefix, &test_ds, &eval_cfg, cfg.seed)?.map);
        }
        curves.push(SweepCurve { lambda, maps });
    }
    Ok(SweepResult { ks, curves })
}

/// mAP against attribute count for a list of sharing weights; the shape of
/// the parameter-study curves.
#[wasm_bindgen]
pub fn sweep_lambda(config_json: &str, lambdas_json: &str) -> String {
    let run = || -> std::result::Result<SweepResult, String> {
        let cfg = parse(config_json)?;
        let lambdas: Vec<f64> = if lambdas_json.trim().is_empty() {
            vec![0.0, 2.0]
        } else {
            serde_json::from_str(lambdas_json).map_err(|e| format!("bad lambdas: {e}"))?
        };
        sweep_impl(&cfg, &lambdas).map_err(|e| e.to_string())
    };
    jsonify(run())
}
