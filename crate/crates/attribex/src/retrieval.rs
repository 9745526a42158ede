//! Query scoring and ranking: attribute-space similarity, optional fusion
//! with feature-space similarity and the category classifier response, each
//! min-max normalized to [0, 1] over the gallery before the unweighted sum.

use serde::{Deserialize, Serialize};

use crate::detectors::{AttributeEmbedding, LinearModel};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Similarity used in attribute space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrMetric {
    Cosine,
    /// Negative Euclidean distance (larger is more similar).
    Euclidean,
}

/// Attribute-space similarity of the query against each gallery embedding.
pub fn score_attr(
    query: &AttributeEmbedding,
    gallery: &[AttributeEmbedding],
    metric: AttrMetric,
) -> Result<Vec<f64>> {
    for g in gallery {
        if g.scores.len() != query.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: query.scores.len(),
                got: g.scores.len(),
            });
        }
    }
    Ok(match metric {
        AttrMetric::Cosine => gallery
            .iter()
            .map(|g| linalg::cosine(&query.scores, &g.scores))
            .collect(),
        AttrMetric::Euclidean => gallery
            .iter()
            .map(|g| {
                -query
                    .scores
                    .iter()
                    .zip(&g.scores)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    })
}

/// Cosine similarity of the query feature against each gallery feature row.
pub fn score_deep(query_feature: &[f64], gallery_features: &Mat) -> Result<Vec<f64>> {
    if gallery_features.cols() != query_feature.len() {
        return Err(Error::DimensionMismatch {
            expected: query_feature.len(),
            got: gallery_features.cols(),
        });
    }
    Ok((0..gallery_features.rows())
        .map(|i| linalg::cosine(query_feature, gallery_features.row(i)))
        .collect())
}

/// Raw classifier margin per gallery image; independent of the query.
pub fn score_class(model: &LinearModel, gallery_features: &Mat) -> Result<Vec<f64>> {
    if gallery_features.cols() != model.w.len() {
        return Err(Error::DimensionMismatch {
            expected: model.w.len(),
            got: gallery_features.cols(),
        });
    }
    Ok((0..gallery_features.rows())
        .map(|i| linalg::dot(&model.w, gallery_features.row(i)) + model.b)
        .collect())
}

/// (x - min) / (max - min); a constant vector (including length 1) maps to
/// 0.5 everywhere, a neutral value that cannot reorder the fused sum.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|x| (x - min) / (max - min)).collect()
}

/// Elementwise sum of the three normalized score vectors.
pub fn fuse(s_deep: &[f64], s_class: &[f64], s_attr: &[f64]) -> Result<Vec<f64>> {
    if s_deep.len() != s_attr.len() || s_class.len() != s_attr.len() {
        return Err(Error::ShapeMismatch(format!(
            "fusion inputs have lengths {}, {}, {}",
            s_deep.len(),
            s_class.len(),
            s_attr.len()
        )));
    }
    Ok(s_deep
        .iter()
        .zip(s_class)
        .zip(s_attr)
        .map(|((d, c), a)| d + c + a)
        .collect())
}

/// Normalized per-component and fused scores for one query over a gallery.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionScores {
    pub s_attr: Vec<f64>,
    pub s_deep: Vec<f64>,
    pub s_class: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Normalize each available component over the gallery and sum them.
/// Disabled components enter as constant vectors, which normalize to the
/// neutral 0.5 and leave the ordering to the remaining signals.
pub fn fuse_components(
    attr: &[f64],
    deep: Option<&[f64]>,
    class: Option<&[f64]>,
) -> Result<FusionScores> {
    let n = attr.len();
    let s_attr = minmax_normalize(attr);
    let s_deep = match deep {
        Some(d) => {
            if d.len() != n {
                return Err(Error::ShapeMismatch(
                    "deep scores length differs from attribute scores".into(),
                ));
            }
            minmax_normalize(d)
        }
        None => vec![0.5; n],
    };
    let s_class = match class {
        Some(c) => {
            if c.len() != n {
                return Err(Error::ShapeMismatch(
                    "class scores length differs from attribute scores".into(),
                ));
            }
            minmax_normalize(c)
        }
        None => vec![0.5; n],
    };
    let fused = fuse(&s_deep, &s_class, &s_attr)?;
    Ok(FusionScores {
        s_attr,
        s_deep,
        s_class,
        fused,
    })
}

/// A descending ranking of the gallery for one query. Ties break by
/// ascending image id, so rankings are total and reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranking: Vec<(String, f64)>,
}

pub fn rank(scores: &[f64], image_ids: &[String], query_id: &str) -> Result<RankedResult> {
    if scores.len() != image_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} gallery ids",
            scores.len(),
            image_ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| image_ids[a].cmp(&image_ids[b]))
    });
    Ok(RankedResult {
        query_id: query_id.to_string(),
        ranking: order
            .into_iter()
            .map(|i| (image_ids[i].clone(), scores[i]))
            .collect(),
    })
}
