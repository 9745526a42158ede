//! End-to-end orchestration shared by the evaluation protocol, the synthetic
//! experiments and the CLI: preprocess features, build the graph, design
//! attributes, train detectors, embed, and rank probes against a gallery.

use std::collections::BTreeMap;

use crate::attrdesign::{design_attributes, AttributeMatrix};
use crate::config::PipelineConfig;
use crate::dataset::{
    apply_projector, fit_pca_whitener, l2_normalize, power_normalize, FeatureDataset, Projector,
    Split,
};
use crate::detectors::{
    embed_dataset, train_attribute_detectors, train_category_classifier, AttributeEmbedding,
    DetectorBank, LinearModel,
};
use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;
use crate::linalg::Mat;
use crate::retrieval::{fuse_components, rank, score_attr, score_class, score_deep, FusionScores,
    RankedResult};

/// Everything learned from the training half.
#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub projector: Option<Projector>,
    pub graph: SimilarityGraph,
    pub attributes: AttributeMatrix,
    pub bank: DetectorBank,
    pub category: Option<LinearModel>,
}

/// Power-normalize (when alpha < 1), l2-normalize, and project (when a
/// projector is given) every feature of the dataset.
pub fn preprocess(
    dataset: &FeatureDataset,
    alpha: f64,
    projector: Option<&Projector>,
) -> Result<FeatureDataset> {
    let dim = projector.map_or(dataset.dim(), Projector::target_dim);
    let mut failure: Option<Error> = None;
    let out = dataset.mapped_features(dim, |rec| {
        let powered = match power_normalize(&rec.feature, alpha) {
            Ok(p) => p,
            Err(e) => {
                failure.get_or_insert(e);
                return vec![0.0; dim];
            }
        };
        let normalized = l2_normalize(&powered);
        match projector {
            Some(p) => match apply_projector(p, &normalized) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![0.0; dim]
                }
            },
            None => normalized,
        }
    });
    match failure {
        Some(e) => Err(e),
        None => out,
    }
}

/// Fit the optional PCA projector on training features only (searching
/// corpora never leak into the projection).
pub fn fit_projector(train: &FeatureDataset, cfg: &PipelineConfig) -> Result<Option<Projector>> {
    if cfg.pca_dim == 0 {
        return Ok(None);
    }
    let normalized = preprocess(train, cfg.power_alpha, None)?;
    let projector = fit_pca_whitener(&normalized.feature_matrix(), cfg.pca_dim, cfg.whiten)?;
    Ok(Some(projector))
}

/// Train the full pipeline on `train`. If the corpus carries distractor
/// images, a category classifier is trained with the train images as
/// positives and the distractors as negatives; otherwise the classifier is
/// skipped and fusion falls back to the remaining signals.
pub fn train(train_ds: &FeatureDataset, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    cfg.validate()?;
    let train_only = train_ds.split_subset(Split::Train)?;
    if train_only.n_instances() < 2 {
        return Err(Error::DegenerateData(
            "training needs at least 2 train-split instances".into(),
        ));
    }
    let projector = fit_projector(&train_only, cfg)?;
    let processed_train = preprocess(&train_only, cfg.power_alpha, projector.as_ref())?;

    let graph = SimilarityGraph::build(&processed_train, cfg.k_nn, cfg.lambda, cfg.edge_weighting)?;
    let attributes = design_attributes(&graph, cfg.k, cfg.gamma, cfg.eigen_tol, cfg.eigen_max_iter)?;
    let bank = train_attribute_detectors(&processed_train, &attributes, cfg.c, cfg.threads)?;

    let category = if cfg.use_class {
        let distractors = train_ds.filtered(|r| r.split == Split::Distractor)?;
        if distractors.n_images() > 0 {
            let processed_distract =
                preprocess(&distractors, cfg.power_alpha, projector.as_ref())?;
            Some(train_category_classifier(
                &processed_train.feature_matrix(),
                &processed_distract.feature_matrix(),
                cfg.c,
            )?)
        } else {
            None
        }
    } else {
        None
    };

    Ok(TrainedPipeline {
        projector,
        graph,
        attributes,
        bank,
        category,
    })
}

/// One probe's scores and ranking over the gallery.
#[derive(Clone, Debug)]
pub struct QueryResult {
    pub ranked: RankedResult,
    pub fusion: FusionScores,
}

/// Rank each probe against the gallery.
///
/// `probes` and `gallery` hold preprocessed features; embeddings come from
/// the bank. With `use_deep`/`use_class` off (or no category model), the
/// corresponding component is a constant vector which normalizes to the
/// neutral 0.5.
pub fn search(
    pipeline: &TrainedPipeline,
    probes: &FeatureDataset,
    gallery: &FeatureDataset,
    cfg: &PipelineConfig,
) -> Result<Vec<QueryResult>> {
    if gallery.n_images() == 0 {
        return Err(Error::DegenerateData("empty gallery".into()));
    }
    let gallery_embeddings = embed_dataset(&pipeline.bank, gallery)?;
    let probe_embeddings = embed_dataset(&pipeline.bank, probes)?;
    search_embedded(
        pipeline.category.as_ref(),
        probes,
        &probe_embeddings,
        gallery,
        &gallery_embeddings,
        cfg,
    )
}

/// As [`search`] but with precomputed embeddings (the CLI reads them from
/// the run directory instead of recomputing).
pub fn search_embedded(
    category: Option<&LinearModel>,
    probes: &FeatureDataset,
    probe_embeddings: &[AttributeEmbedding],
    gallery: &FeatureDataset,
    gallery_embeddings: &[AttributeEmbedding],
    cfg: &PipelineConfig,
) -> Result<Vec<QueryResult>> {
    let gallery_ids: Vec<String> = gallery
        .images()
        .iter()
        .map(|r| r.image_id.clone())
        .collect();
    let gallery_features = gallery.feature_matrix();

    let class_scores = match (category, cfg.use_class) {
        (Some(model), true) => Some(score_class(model, &gallery_features)?),
        _ => None,
    };

    let mut results = Vec::with_capacity(probes.n_images());
    for (probe, embedding) in probes.images().iter().zip(probe_embeddings) {
        let attr = score_attr(embedding, gallery_embeddings, cfg.attr_metric)?;
        let deep = if cfg.use_deep {
            Some(score_deep(&probe.feature, &gallery_features)?)
        } else {
            None
        };
        let fusion = fuse_components(&attr, deep.as_deref(), class_scores.as_deref())?;
        let ranked = rank(&fusion.fused, &gallery_ids, &probe.image_id)?;
        results.push(QueryResult { ranked, fusion });
    }
    Ok(results)
}

/// Assign retrieval roles inside a test corpus: per instance, the first view
/// (by image id) becomes the gallery shot and the rest become probes. With
/// `single_gallery_shot` false the assignment flips: first view probes, the
/// rest gallery.
pub fn assign_query_roles(test: &FeatureDataset, single_gallery_shot: bool) -> Result<FeatureDataset> {
    let mut first_view: BTreeMap<&str, &str> = BTreeMap::new();
    for rec in test.images() {
        let entry = first_view
            .entry(rec.instance_id.as_str())
            .or_insert(rec.image_id.as_str());
        if rec.image_id.as_str() < *entry {
            *entry = rec.image_id.as_str();
        }
    }
    let images = test
        .images()
        .iter()
        .map(|rec| {
            let is_first = first_view[rec.instance_id.as_str()] == rec.image_id;
            let split = match (is_first, single_gallery_shot) {
                (true, true) => Split::Gallery,
                (false, true) => Split::Probe,
                (true, false) => Split::Probe,
                (false, false) => Split::Gallery,
            };
            let mut r = rec.clone();
            r.split = split;
            r
        })
        .collect();
    FeatureDataset::new(images, test.dim())
}

/// Raw-feature cosine ranking over the same probes and gallery; the baseline
/// the attribute representation is compared against.
pub fn raw_feature_search(
    probes: &FeatureDataset,
    gallery: &FeatureDataset,
) -> Result<Vec<RankedResult>> {
    let gallery_ids: Vec<String> = gallery
        .images()
        .iter()
        .map(|r| r.image_id.clone())
        .collect();
    let gallery_features: Mat = gallery.feature_matrix();
    probes
        .images()
        .iter()
        .map(|probe| {
            let scores = score_deep(&probe.feature, &gallery_features)?;
            rank(&scores, &gallery_ids, &probe.image_id)
        })
        .collect()
}
