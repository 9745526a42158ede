//! Retrieval evaluation: average precision, mAP, CMC curves, the
//! repeated-half-split protocol and the lambda/gamma/k parameter sweep.
//!
//! Relevance here is binary. Some benchmarks mark a third, "junk" class of
//! images that should count neither for nor against a ranking; the synthetic
//! ground truth has no such class, so a junk set is deliberately not modeled.
//! Adding one would mean filtering junk ids out of each ranking before
//! [`average_precision`] sees it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{split_half, FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::pipeline::{assign_query_roles, search, train};
use crate::retrieval::RankedResult;

/// Relevant gallery images per query; the query image itself never appears
/// in its own relevant set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    /// Relevance by shared instance id: a gallery image is relevant to a
    /// probe when it shows the same instance.
    pub fn from_datasets(probes: &FeatureDataset, gallery: &FeatureDataset) -> GroundTruth {
        let mut relevant = BTreeMap::new();
        for probe in probes.images() {
            let set: BTreeSet<String> = gallery
                .images()
                .iter()
                .filter(|g| g.instance_id == probe.instance_id && g.image_id != probe.image_id)
                .map(|g| g.image_id.clone())
                .collect();
            relevant.insert(probe.image_id.clone(), set);
        }
        GroundTruth { relevant }
    }
}

/// Average precision of a mask of relevant positions in rank order:
/// mean over relevant ranks r of precision@r, divided by n_relevant.
pub fn average_precision(ranked_relevance: &[bool], n_relevant: usize) -> Result<f64> {
    let hits = ranked_relevance.iter().filter(|&&r| r).count();
    if n_relevant == 0 || n_relevant < hits {
        return Err(Error::BadRelevantCount(n_relevant));
    }
    let mut seen = 0usize;
    let mut acc = 0.0;
    for (idx, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            seen += 1;
            acc += seen as f64 / (idx + 1) as f64;
        }
    }
    Ok(acc / n_relevant as f64)
}

/// Evaluation output for a single protocol run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub per_query_ap: BTreeMap<String, f64>,
    /// cmc[r-1] = fraction of queries whose first relevant hit is at rank <= r.
    pub cmc: Vec<f64>,
    /// Queries with no relevant gallery image, excluded from the averages.
    pub excluded_queries: Vec<String>,
    pub config_snapshot: PipelineConfig,
    pub seed_list: Vec<u64>,
}

/// Per-query AP and the unweighted mean. Queries with no relevant images are
/// excluded and reported. A query missing from the ground truth is an error.
pub fn mean_average_precision(
    results: &[RankedResult],
    gt: &GroundTruth,
) -> Result<(BTreeMap<String, f64>, f64, Vec<String>)> {
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for res in results {
        let relevant = gt
            .relevant
            .get(&res.query_id)
            .ok_or_else(|| Error::MissingGroundTruth(res.query_id.clone()))?;
        if relevant.is_empty() {
            excluded.push(res.query_id.clone());
            continue;
        }
        let mask: Vec<bool> = res
            .ranking
            .iter()
            .map(|(id, _)| relevant.contains(id))
            .collect();
        let ap = average_precision(&mask, relevant.len())?;
        per_query.insert(res.query_id.clone(), ap);
    }
    let map = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok((per_query, map, excluded))
}

/// Cumulative match characteristic over ranks 1..=max_rank. A query whose
/// relevant set is empty is an error (the re-id protocol guarantees a match
/// exists).
pub fn cmc(results: &[RankedResult], gt: &GroundTruth, max_rank: usize) -> Result<Vec<f64>> {
    if max_rank == 0 {
        return Err(Error::InvalidConfig("max_rank must be at least 1".into()));
    }
    if results.is_empty() {
        return Err(Error::DegenerateData("no results to evaluate".into()));
    }
    let mut first_hits = Vec::with_capacity(results.len());
    for res in results {
        let relevant = gt
            .relevant
            .get(&res.query_id)
            .ok_or_else(|| Error::MissingGroundTruth(res.query_id.clone()))?;
        if relevant.is_empty() {
            return Err(Error::EmptyRelevantSet(res.query_id.clone()));
        }
        let first = res
            .ranking
            .iter()
            .position(|(id, _)| relevant.contains(id))
            .map(|p| p + 1); // 1-based rank
        first_hits.push(first);
    }
    let n = first_hits.len() as f64;
    let curve = (1..=max_rank)
        .map(|r| {
            first_hits
                .iter()
                .filter(|h| h.is_some_and(|rank| rank <= r))
                .count() as f64
                / n
        })
        .collect();
    Ok(curve)
}

/// Outcome of one train/test half-split repeat.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepeatedEvalReport {
    pub base_seed: u64,
    pub n_repeats: usize,
    pub repeats: Vec<EvalReport>,
    pub mean_map: f64,
    pub mean_cmc: Vec<f64>,
    pub config_snapshot: PipelineConfig,
}

/// Evaluate one split: train the pipeline on `train_half`, assign
/// probe/gallery roles in `test_half`, search, and score.
pub fn evaluate_split(
    train_half: &FeatureDataset,
    test_half: &FeatureDataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EvalReport> {
    let trained = train(train_half, cfg)?;
    evaluate_trained(&trained, test_half, cfg, seed)
}

/// Score an already-trained pipeline on a test corpus (used by the sweep to
/// share one training across k prefixes).
pub fn evaluate_trained(
    trained: &crate::pipeline::TrainedPipeline,
    test_half: &FeatureDataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EvalReport> {
    let roles = assign_query_roles(test_half, cfg.single_gallery_shot)?;
    let raw_probes = roles.split_subset(Split::Probe)?;
    let raw_gallery = roles.split_subset(Split::Gallery)?;
    let probes = crate::pipeline::preprocess(&raw_probes, cfg.power_alpha, trained.projector.as_ref())?;
    let gallery =
        crate::pipeline::preprocess(&raw_gallery, cfg.power_alpha, trained.projector.as_ref())?;
    let results = search(trained, &probes, &gallery, cfg)?;
    let ranked: Vec<RankedResult> = results.into_iter().map(|q| q.ranked).collect();
    report_from_rankings(&ranked, &raw_probes, &raw_gallery, cfg, seed)
}

/// Assemble an [`EvalReport`] from rankings plus the probe/gallery corpora
/// that define the ground truth.
pub fn report_from_rankings(
    ranked: &[RankedResult],
    probes: &FeatureDataset,
    gallery: &FeatureDataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EvalReport> {
    let gt = GroundTruth::from_datasets(probes, gallery);
    let (per_query_ap, map, excluded) = mean_average_precision(ranked, &gt)?;
    let curve = cmc(ranked, &gt, gallery.n_images().max(1))?;
    Ok(EvalReport {
        map,
        per_query_ap,
        cmc: curve,
        excluded_queries: excluded,
        config_snapshot: cfg.clone(),
        seed_list: vec![seed],
    })
}

/// The repeated half-split protocol: for each repeat, split instances in
/// half with seed base_seed + repeat, train on one half, evaluate
/// probe-vs-gallery retrieval on the other, and average the curves.
pub fn repeated_splits_eval(
    dataset: &FeatureDataset,
    n_repeats: usize,
    cfg: &PipelineConfig,
    base_seed: u64,
) -> Result<RepeatedEvalReport> {
    if n_repeats == 0 {
        return Err(Error::InvalidConfig("n_repeats must be at least 1".into()));
    }
    let mut repeats = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let seed = base_seed + r as u64;
        let run = || -> Result<EvalReport> {
            let (train_half, test_half) = split_half(dataset, seed)?;
            // All images of the training half act as train split regardless
            // of their corpus role.
            let train_half = retag_as_train(&train_half)?;
            evaluate_split(&train_half, &test_half, cfg, seed)
        };
        match run() {
            Ok(rep) => repeats.push(rep),
            Err(e) => {
                return Err(Error::RepeatFailed {
                    repeat: r,
                    source: Box::new(e),
                })
            }
        }
    }

    let mean_map = repeats.iter().map(|r| r.map).sum::<f64>() / repeats.len() as f64;
    let max_len = repeats.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let mean_cmc: Vec<f64> = (0..max_len)
        .map(|i| {
            repeats
                .iter()
                // A curve shorter than max_len stays at its final value.
                .map(|r| *r.cmc.get(i).unwrap_or_else(|| r.cmc.last().unwrap_or(&0.0)))
                .sum::<f64>()
                / repeats.len() as f64
        })
        .collect();

    Ok(RepeatedEvalReport {
        base_seed,
        n_repeats,
        repeats,
        mean_map,
        mean_cmc,
        config_snapshot: cfg.clone(),
    })
}

fn retag_as_train(ds: &FeatureDataset) -> Result<FeatureDataset> {
    let images = ds
        .images()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.split = Split::Train;
            r
        })
        .collect();
    FeatureDataset::new(images, ds.dim())
}

/// One cell of the parameter sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub gamma: f64,
    pub k: usize,
    pub map: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
    pub seed: u64,
    /// Grid values that appeared more than once in the request.
    pub deduplicated: Vec<String>,
}

impl SweepGrid {
    /// CSV with columns lambda,gamma,k,repeat,metric,value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,gamma,k,repeat,metric,value\n");
        for cell in &self.cells {
            let value = match cell.map {
                Some(m) => format!("{m}"),
                None => "NA".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},0,map,{}\n",
                cell.lambda, cell.gamma, cell.k, value
            ));
        }
        out
    }
}

fn dedup_sorted<T: PartialOrd + PartialEq + Copy + std::fmt::Display>(
    values: &[T],
    notes: &mut Vec<String>,
    label: &str,
) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for &v in values {
        if out.contains(&v) {
            notes.push(format!("{label}={v}"));
        } else {
            out.push(v);
        }
    }
    out
}

/// Train and evaluate every (lambda, gamma, k) cell on one fixed half-split.
/// Attribute columns are learned incrementally, so cells sharing (lambda,
/// gamma) reuse one training at max k and evaluate prefixes. A failed cell is
/// recorded and the sweep continues.
pub fn parameter_sweep(
    dataset: &FeatureDataset,
    lambdas: &[f64],
    gammas: &[f64],
    ks: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SweepGrid> {
    if lambdas.is_empty() {
        return Err(Error::EmptyGrid("lambda"));
    }
    if gammas.is_empty() {
        return Err(Error::EmptyGrid("gamma"));
    }
    if ks.is_empty() {
        return Err(Error::EmptyGrid("k"));
    }
    let mut deduplicated = Vec::new();
    let lambdas = dedup_sorted(lambdas, &mut deduplicated, "lambda");
    let gammas = dedup_sorted(gammas, &mut deduplicated, "gamma");
    let ks = dedup_sorted(ks, &mut deduplicated, "k");
    let k_max = ks.iter().copied().max().unwrap();

    let (train_half, test_half) = split_half(dataset, seed)?;
    let train_half = retag_as_train(&train_half)?;

    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &gamma in &gammas {
            let cell_cfg = PipelineConfig {
                lambda,
                gamma,
                k: k_max,
                ..cfg.clone()
            };
            match train(&train_half, &cell_cfg) {
                Ok(trained) => {
                    for &k in &ks {
                        let mut prefix = trained.clone();
                        prefix.bank = trained.bank.prefix(k);
                        let eval_cfg = PipelineConfig {
                            k,
                            ..cell_cfg.clone()
                        };
                        match evaluate_trained(&prefix, &test_half, &eval_cfg, seed) {
                            Ok(report) => cells.push(SweepCell {
                                lambda,
                                gamma,
                                k,
                                map: Some(report.map),
                                error: None,
                            }),
                            Err(e) => cells.push(SweepCell {
                                lambda,
                                gamma,
                                k,
                                map: None,
                                error: Some(e.to_string()),
                            }),
                        }
                    }
                }
                Err(e) => {
                    for &k in &ks {
                        cells.push(SweepCell {
                            lambda,
                            gamma,
                            k,
                            map: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    Ok(SweepGrid {
        cells,
        seed,
        deduplicated,
    })
}
