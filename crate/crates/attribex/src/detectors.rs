//! Attribute detectors: one linear SVM per attribute column, plus the
//! general category classifier used by score fusion.
//!
//! The trainer minimizes the primal objective
//!     (1/2)||w||^2 + c * sum_i hinge(y_i (w.x_i + b))
//! with an unregularized bias, by SMO on the dual (equality-constrained,
//! maximal-violating-pair selection). It stops when the duality gap
//! certifies the objective to 1e-6 relative, so the result is solver-grade
//! rather than heuristic.

use serde::{Deserialize, Serialize};

use crate::attrdesign::AttributeMatrix;
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::parallel;

/// Certified relative tolerance on the primal objective.
pub const OBJECTIVE_REL_TOL: f64 = 1e-7;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    /// Regularization trade-off the model was trained with.
    pub c: f64,
    /// Total hinge loss on the training set at the solution.
    pub train_loss: f64,
    /// Set when training data had no signal (all points identical); w = 0.
    pub degenerate: bool,
}

impl LinearModel {
    pub fn score(&self, feature: &[f64]) -> Result<f64> {
        if feature.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: feature.len(),
            });
        }
        Ok(linalg::dot(&self.w, feature) + self.b)
    }
}

#[derive(Clone, Debug)]
pub struct DetectorBank {
    detectors: Vec<LinearModel>,
    feature_dim: usize,
}

/// Metadata serialized next to the stacked [w|b] ATSF matrix. Training is
/// deterministic; `seed` records the corpus seed of the run.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct DetectorSidecar {
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
    pub feature_dim: usize,
    pub attribute_count: usize,
    pub per_detector_loss: Vec<f64>,
    pub positive_counts: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl DetectorBank {
    pub fn new(detectors: Vec<LinearModel>, feature_dim: usize) -> Result<Self> {
        for d in &detectors {
            if d.w.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: d.w.len(),
                });
            }
        }
        Ok(DetectorBank {
            detectors,
            feature_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn attribute_count(&self) -> usize {
        self.detectors.len()
    }

    pub fn detectors(&self) -> &[LinearModel] {
        &self.detectors
    }

    /// Bank restricted to the first k detectors (attribute columns are
    /// learned incrementally, so a prefix is itself a valid bank).
    pub fn prefix(&self, k: usize) -> DetectorBank {
        DetectorBank {
            detectors: self.detectors[..k.min(self.detectors.len())].to_vec(),
            feature_dim: self.feature_dim,
        }
    }

    /// Stacked [w | b] rows for ATSF serialization.
    pub fn to_matrix(&self) -> Mat {
        let k = self.attribute_count();
        let d = self.feature_dim;
        let mut m = Mat::zeros(k, d + 1);
        for (i, det) in self.detectors.iter().enumerate() {
            m.row_mut(i)[..d].copy_from_slice(&det.w);
            m[(i, d)] = det.b;
        }
        m
    }

    pub fn from_matrix(m: &Mat, sidecar: &DetectorSidecar) -> Result<Self> {
        if m.rows() != sidecar.attribute_count || m.cols() != sidecar.feature_dim + 1 {
            return Err(Error::ShapeMismatch(format!(
                "detector matrix is {}x{}, sidecar declares {}x{}",
                m.rows(),
                m.cols(),
                sidecar.attribute_count,
                sidecar.feature_dim + 1
            )));
        }
        let d = sidecar.feature_dim;
        let detectors = (0..m.rows())
            .map(|i| LinearModel {
                w: m.row(i)[..d].to_vec(),
                b: m.row(i)[d],
                c: sidecar.c,
                train_loss: sidecar.per_detector_loss.get(i).copied().unwrap_or(0.0),
                degenerate: sidecar.degenerate.get(i).copied().unwrap_or(false),
            })
            .collect();
        DetectorBank::new(detectors, d)
    }
}

#[derive(Clone, Debug)]
pub struct AttributeEmbedding {
    pub image_id: String,
    pub scores: Vec<f64>,
}

/// Raw detector margins for one feature vector.
pub fn embed(bank: &DetectorBank, feature: &[f64]) -> Result<Vec<f64>> {
    if feature.len() != bank.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.feature_dim(),
            got: feature.len(),
        });
    }
    Ok(bank
        .detectors
        .iter()
        .map(|d| linalg::dot(&d.w, feature) + d.b)
        .collect())
}

/// Embed every image of a dataset, in image order.
pub fn embed_dataset(bank: &DetectorBank, dataset: &FeatureDataset) -> Result<Vec<AttributeEmbedding>> {
    dataset
        .images()
        .iter()
        .map(|rec| {
            Ok(AttributeEmbedding {
                image_id: rec.image_id.clone(),
                scores: embed(bank, &rec.feature)?,
            })
        })
        .collect()
}

/// Train a hinge-loss linear SVM; `positives` and `negatives` are row
/// matrices of the two classes.
pub fn train_linear_svm(positives: &Mat, negatives: &Mat, c: f64) -> Result<LinearModel> {
    if positives.rows() == 0 {
        return Err(Error::EmptyClass("positives"));
    }
    if negatives.rows() == 0 {
        return Err(Error::EmptyClass("negatives"));
    }
    if positives.cols() != negatives.cols() {
        return Err(Error::DimensionMismatch {
            expected: positives.cols(),
            got: negatives.cols(),
        });
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidConfig(format!("c must be positive, got {c}")));
    }

    let d = positives.cols();
    let m = positives.rows() + negatives.rows();
    let mut features = Mat::zeros(m, d);
    let mut labels = Vec::with_capacity(m);
    for i in 0..positives.rows() {
        features.row_mut(i).copy_from_slice(positives.row(i));
        labels.push(1.0);
    }
    for i in 0..negatives.rows() {
        features
            .row_mut(positives.rows() + i)
            .copy_from_slice(negatives.row(i));
        labels.push(-1.0);
    }
    let gram = gram_matrix(&features);
    solve_hinge_svm(&features, &labels, c, &gram)
}

/// Same contract as [`train_linear_svm`]; the category classifier plays a
/// different role in the pipeline (gallery-side scoring) but is the same
/// kind of model.
pub fn train_category_classifier(positives: &Mat, negatives: &Mat, c: f64) -> Result<LinearModel> {
    train_linear_svm(positives, negatives, c)
}

/// Train one detector per attribute column: positives are all images of
/// instances with `A[i][j] > 0`, negatives all other images of the dataset.
/// Detector trainings are independent and run on up to `threads` workers.
pub fn train_attribute_detectors(
    dataset: &FeatureDataset,
    attributes: &AttributeMatrix,
    c: f64,
    threads: usize,
) -> Result<DetectorBank> {
    if attributes.n() != dataset.n_instances() {
        return Err(Error::AlignmentMismatch {
            rows: attributes.n(),
            instances: dataset.n_instances(),
        });
    }
    let m = dataset.n_images();
    if m == 0 {
        return Err(Error::EmptyClass("training images"));
    }

    // Image index -> instance row in the attribute matrix.
    let ids = dataset.instance_ids();
    let mut image_instance_row = vec![0usize; m];
    for (row, id) in ids.iter().enumerate() {
        for &img in dataset.images_of(id)? {
            image_instance_row[img] = row;
        }
    }

    let features = dataset.feature_matrix();
    let gram = gram_matrix(&features);

    let k = attributes.k();
    let results: Vec<Result<LinearModel>> = parallel::run_indexed(k, threads, |j| {
        let labels: Vec<f64> = (0..m)
            .map(|img| {
                if attributes.value(image_instance_row[img], j) > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        if !labels.iter().any(|&y| y > 0.0) {
            return Err(Error::SingleSignColumn { column: j });
        }
        if !labels.iter().any(|&y| y < 0.0) {
            return Err(Error::SingleSignColumn { column: j });
        }
        solve_hinge_svm(&features, &labels, c, &gram)
    });

    let mut detectors = Vec::with_capacity(k);
    for r in results {
        detectors.push(r?);
    }
    DetectorBank::new(detectors, dataset.dim())
}

fn gram_matrix(features: &Mat) -> Mat {
    let m = features.rows();
    let mut k = Mat::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = linalg::dot(features.row(i), features.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// SMO over the dual of the free-bias hinge SVM.
fn solve_hinge_svm(features: &Mat, labels: &[f64], c: f64, gram: &Mat) -> Result<LinearModel> {
    let m = features.rows();
    let d = features.cols();
    debug_assert_eq!(labels.len(), m);

    // No signal at all: every training point identical.
    if all_rows_identical(features) {
        let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
        let n_neg = m - n_pos;
        let b = match n_pos.cmp(&n_neg) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        };
        let hinge: f64 = labels.iter().map(|&y| (1.0 - y * b).max(0.0)).sum();
        return Ok(LinearModel {
            w: vec![0.0; d],
            b,
            c,
            train_loss: hinge,
            degenerate: true,
        });
    }

    let mut alpha = vec![0.0f64; m];
    let mut grad = vec![-1.0f64; m]; // gradient of (1/2)a'Qa - e'a at a = 0
    let tau = 1e-12;
    let max_iter = 10_000 + 500 * m;
    let check_every = m.clamp(32, 256);

    let mut best: Option<(Vec<f64>, f64, f64)> = None; // (w, b, primal)

    for iter in 0..max_iter {
        // Maximal violating pair.
        let mut i_up: Option<(usize, f64)> = None;
        let mut j_low: Option<(usize, f64)> = None;
        for t in 0..m {
            let v = -labels[t] * grad[t];
            let can_up = (labels[t] > 0.0 && alpha[t] < c) || (labels[t] < 0.0 && alpha[t] > 0.0);
            let can_low = (labels[t] < 0.0 && alpha[t] < c) || (labels[t] > 0.0 && alpha[t] > 0.0);
            if can_up && i_up.is_none_or(|(_, b)| v > b) {
                i_up = Some((t, v));
            }
            if can_low && j_low.is_none_or(|(_, b)| v < b) {
                j_low = Some((t, v));
            }
        }
        let (Some((i, m_up)), Some((j, m_low))) = (i_up, j_low) else {
            break;
        };
        let kkt_violation = m_up - m_low;

        let do_check = kkt_violation <= 1e-12 || iter % check_every == check_every - 1;
        if do_check {
            let (w, b, primal) = primal_solution(features, labels, c, &alpha);
            let dual: f64 = alpha.iter().sum::<f64>() - 0.5 * linalg::dot(&w, &w);
            let gap = primal - dual;
            if best.as_ref().is_none_or(|(_, _, p)| primal < *p) {
                best = Some((w, b, primal));
            }
            if gap <= OBJECTIVE_REL_TOL * primal.abs().max(1.0) || kkt_violation <= 1e-12 {
                break;
            }
        }

        // Two-variable update (LIBSVM-style clipping).
        let yi = labels[i];
        let yj = labels[j];
        let old_ai = alpha[i];
        let old_aj = alpha[j];
        // In both branches the feasible direction changes w by a multiple of
        // x_i - x_j (after label adjustment), so the curvature is
        // K_ii + K_jj - 2 K_ij.
        if yi != yj {
            let quad = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(tau);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(tau);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let dai = alpha[i] - old_ai;
        let daj = alpha[j] - old_aj;
        if dai == 0.0 && daj == 0.0 {
            // Numerically stuck; the next gap check decides.
            let (w, b, primal) = primal_solution(features, labels, c, &alpha);
            if best.as_ref().is_none_or(|(_, _, p)| primal < *p) {
                best = Some((w, b, primal));
            }
            break;
        }
        for t in 0..m {
            grad[t] += labels[t] * (yi * dai * gram[(i, t)] + yj * daj * gram[(j, t)]);
        }
    }

    // Final certification pass.
    let (w, b, primal) = primal_solution(features, labels, c, &alpha);
    let (w, b, _) = match best {
        Some((bw, bb, bp)) if bp < primal => (bw, bb, bp),
        _ => (w, b, primal),
    };
    let train_loss: f64 = (0..m)
        .map(|t| (1.0 - labels[t] * (linalg::dot(&w, features.row(t)) + b)).max(0.0))
        .sum();
    Ok(LinearModel {
        w,
        b,
        c,
        train_loss,
        degenerate: false,
    })
}

fn all_rows_identical(features: &Mat) -> bool {
    let first = features.row(0);
    (1..features.rows()).all(|i| {
        features
            .row(i)
            .iter()
            .zip(first)
            .all(|(a, b)| (a - b).abs() <= 1e-12)
    })
}

/// w from the dual variables, the exact optimal bias for that w, and the
/// primal objective value.
fn primal_solution(features: &Mat, labels: &[f64], c: f64, alpha: &[f64]) -> (Vec<f64>, f64, f64) {
    let m = features.rows();
    let d = features.cols();
    let mut w = vec![0.0f64; d];
    for t in 0..m {
        let coef = alpha[t] * labels[t];
        if coef != 0.0 {
            for (wk, xk) in w.iter_mut().zip(features.row(t)) {
                *wk += coef * xk;
            }
        }
    }
    let scores: Vec<f64> = (0..m).map(|t| linalg::dot(&w, features.row(t))).collect();
    let b = optimal_bias(labels, &scores);
    let hinge: f64 = (0..m)
        .map(|t| (1.0 - labels[t] * (scores[t] + b)).max(0.0))
        .sum();
    let primal = 0.5 * linalg::dot(&w, &w) + c * hinge;
    (w, b, primal)
}

/// Exact minimizer over b of sum_i hinge(y_i (s_i + b)): the hinge sum is
/// piecewise linear in b with all slope changes equal to +c, so the minimum
/// sits on the flat interval after n_pos breakpoints; return its midpoint.
fn optimal_bias(labels: &[f64], scores: &[f64]) -> f64 {
    let mut breakpoints: Vec<f64> = labels
        .iter()
        .zip(scores)
        .map(|(&y, &s)| if y > 0.0 { 1.0 - s } else { -1.0 - s })
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    if n_pos == 0 {
        return -1.0 - scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    if n_pos >= breakpoints.len() {
        return 1.0 - scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    0.5 * (breakpoints[n_pos - 1] + breakpoints[n_pos])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrdesign::design_attributes;
    use crate::dataset::generate_synthetic;
    use crate::graph::{EdgeWeighting, SimilarityGraph};
    use crate::rng::SplitMix64;

    fn primal_objective(model: &LinearModel, pos: &Mat, neg: &Mat, c: f64) -> f64 {
        let mut hinge = 0.0;
        for i in 0..pos.rows() {
            hinge += (1.0 - (linalg::dot(&model.w, pos.row(i)) + model.b)).max(0.0);
        }
        for i in 0..neg.rows() {
            hinge += (1.0 + (linalg::dot(&model.w, neg.row(i)) + model.b)).max(0.0);
        }
        0.5 * linalg::dot(&model.w, &model.w) + c * hinge
    }

    #[test]
    fn separable_1d() {
        let pos = Mat::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        let neg = Mat::from_rows(&[vec![-2.0], vec![-3.0]]).unwrap();
        let model = train_linear_svm(&pos, &neg, 1.0).unwrap();
        assert!(model.w[0] > 0.0);
        for i in 0..2 {
            assert!(linalg::dot(&model.w, pos.row(i)) + model.b > 0.0);
            assert!(linalg::dot(&model.w, neg.row(i)) + model.b < 0.0);
        }
    }

    #[test]
    fn mirror_symmetric_data_has_zero_bias() {
        let pos = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.5]]).unwrap();
        let neg = Mat::from_rows(&[vec![-1.0, -2.0], vec![-2.0, -1.0], vec![-3.0, -0.5]]).unwrap();
        let model = train_linear_svm(&pos, &neg, 1.0).unwrap();
        assert!(model.b.abs() <= 1e-6, "bias = {}", model.b);
    }

    /// Long-run subgradient descent on the identical objective; the
    /// independent oracle for the trainer. Rounds of shrinking constant
    /// steps with best-iterate tracking converge well past 1e-5 relative on
    /// these problem sizes.
    fn subgradient_oracle(pos: &Mat, neg: &Mat, c: f64) -> f64 {
        let d = pos.cols();
        let mut w = vec![0.0f64; d];
        let mut b = 0.0f64;
        let mut best = f64::INFINITY;
        let mut best_w = w.clone();
        let mut best_b = b;
        let mut step = 0.25;
        for _round in 0..30 {
            for _ in 0..3000 {
                let mut gw = w.clone();
                let mut gb = 0.0;
                let consider = |x: &[f64], y: f64, gw: &mut Vec<f64>, gb: &mut f64| {
                    let margin = y * (linalg::dot(&w, x) + b);
                    if margin < 1.0 {
                        for (g, xi) in gw.iter_mut().zip(x) {
                            *g -= c * y * xi;
                        }
                        *gb -= c * y;
                    }
                };
                for i in 0..pos.rows() {
                    consider(pos.row(i), 1.0, &mut gw, &mut gb);
                }
                for i in 0..neg.rows() {
                    consider(neg.row(i), -1.0, &mut gw, &mut gb);
                }
                for (wk, g) in w.iter_mut().zip(&gw) {
                    *wk -= step * g;
                }
                b -= step * gb;
                let model = LinearModel {
                    w: w.clone(),
                    b,
                    c,
                    train_loss: 0.0,
                    degenerate: false,
                };
                let obj = primal_objective(&model, pos, neg, c);
                if obj < best {
                    best = obj;
                    best_w = w.clone();
                    best_b = b;
                }
            }
            // restart each round from the incumbent with a smaller step
            w = best_w.clone();
            b = best_b;
            step *= 0.7;
        }
        best
    }

    #[test]
    fn objective_matches_subgradient_oracle() {
        let mut rng = SplitMix64::new(3);
        let mut make_blob = |cx: f64, cy: f64, n: usize| -> Mat {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    vec![
                        cx + rng.uniform(-0.8, 0.8),
                        cy + rng.uniform(-0.8, 0.8),
                    ]
                })
                .collect();
            Mat::from_rows(&rows).unwrap()
        };
        let pos = make_blob(2.0, 2.0, 10);
        let neg = make_blob(-2.0, -2.0, 10);
        let model = train_linear_svm(&pos, &neg, 1.0).unwrap();
        let ours = primal_objective(&model, &pos, &neg, 1.0);
        let oracle = subgradient_oracle(&pos, &neg, 1.0);
        let rel = (ours - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel < 1e-4, "ours {ours}, oracle {oracle}, rel {rel}");
        // The trainer is certified; it must not be worse than the oracle.
        assert!(ours <= oracle + 1e-9 * oracle.abs().max(1.0));
    }

    #[test]
    fn empty_class_is_an_error() {
        let pos = Mat::from_rows(&[vec![1.0]]).unwrap();
        let empty = Mat::zeros(0, 1);
        assert!(matches!(
            train_linear_svm(&pos, &empty, 1.0),
            Err(Error::EmptyClass("negatives"))
        ));
        assert!(matches!(
            train_linear_svm(&empty, &pos, 1.0),
            Err(Error::EmptyClass("positives"))
        ));
    }

    #[test]
    fn identical_data_yields_degenerate_model() {
        let pos = Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let neg = Mat::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let model = train_linear_svm(&pos, &neg, 1.0).unwrap();
        assert!(model.degenerate);
        assert!(model.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn separable_with_large_c_drives_hinge_to_zero() {
        let mut rng = SplitMix64::new(8);
        let pos_rows: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![3.0 + rng.uniform(-0.5, 0.5), 1.0 + rng.uniform(-0.5, 0.5)])
            .collect();
        let neg_rows: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![-3.0 + rng.uniform(-0.5, 0.5), -1.0 + rng.uniform(-0.5, 0.5)])
            .collect();
        let pos = Mat::from_rows(&pos_rows).unwrap();
        let neg = Mat::from_rows(&neg_rows).unwrap();
        let model = train_linear_svm(&pos, &neg, 10.0).unwrap();
        for i in 0..pos.rows() {
            assert!(linalg::dot(&model.w, pos.row(i)) + model.b > 0.0);
        }
        for i in 0..neg.rows() {
            assert!(linalg::dot(&model.w, neg.row(i)) + model.b < 0.0);
        }
        assert!(model.train_loss <= 1e-3, "hinge = {}", model.train_loss);
    }

    #[test]
    fn scale_invariance_of_margin_signs() {
        let mut rng = SplitMix64::new(19);
        let pos_rows: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![1.5 + rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let neg_rows: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![-1.5 + rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
            .collect();
        let pos = Mat::from_rows(&pos_rows).unwrap();
        let neg = Mat::from_rows(&neg_rows).unwrap();
        let model = train_linear_svm(&pos, &neg, 1.0).unwrap();

        let scale = 3.0;
        let pos2 = Mat::from_rows(
            &pos_rows
                .iter()
                .map(|r| r.iter().map(|x| x * scale).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        let neg2 = Mat::from_rows(
            &neg_rows
                .iter()
                .map(|r| r.iter().map(|x| x * scale).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        let model2 = train_linear_svm(&pos2, &neg2, 1.0 / (scale * scale)).unwrap();

        // (w, b) scales to (w/s, b) on scaled data with c/s^2: margins at the
        // training points keep their signs.
        for i in 0..pos.rows() {
            let m1 = linalg::dot(&model.w, pos.row(i)) + model.b;
            let m2 = linalg::dot(&model2.w, pos2.row(i)) + model2.b;
            assert_eq!(m1 > 0.0, m2 > 0.0, "positive {i}");
        }
        for i in 0..neg.rows() {
            let m1 = linalg::dot(&model.w, neg.row(i)) + model.b;
            let m2 = linalg::dot(&model2.w, neg2.row(i)) + model2.b;
            assert_eq!(m1 > 0.0, m2 > 0.0, "negative {i}");
        }
    }

    #[test]
    fn detector_positive_assignment_rule() {
        // n=2 instances, k=1, column (+, -): positives are instance 1 images.
        let ds = generate_synthetic(2, 3, 8, 0.2, 4).unwrap();
        let g = SimilarityGraph::from_parts(Mat::zeros(2, 2), 0.0, 1).unwrap();
        let a = design_attributes(&g, 1, 7.0, 1e-8, 5000).unwrap();
        let bank = train_attribute_detectors(&ds, &a, 1.0, 1).unwrap();
        assert_eq!(bank.attribute_count(), 1);

        let positive_instance = if a.value(0, 0) > 0.0 { 0 } else { 1 };
        let det = &bank.detectors()[0];
        for (idx, rec) in ds.images().iter().enumerate() {
            let margin = linalg::dot(&det.w, &rec.feature) + det.b;
            let inst_row = ds
                .instance_ids()
                .iter()
                .position(|id| *id == rec.instance_id)
                .unwrap();
            if inst_row == positive_instance {
                assert!(margin > 0.0, "image {idx} should be on the positive side");
            } else {
                assert!(margin < 0.0, "image {idx} should be on the negative side");
            }
        }
    }

    #[test]
    fn bank_has_k_detectors_and_embeds_k_scores() {
        let ds = generate_synthetic(12, 3, 16, 0.4, 5).unwrap();
        let g = SimilarityGraph::build(&ds, 5, 2.0, EdgeWeighting::Weighted).unwrap();
        let a = design_attributes(&g, 10, 7.0, 1e-8, 5000).unwrap();
        let bank = train_attribute_detectors(&ds, &a, 1.0, 2).unwrap();
        assert_eq!(bank.attribute_count(), 10);
        let scores = embed(&bank, &ds.images()[0].feature).unwrap();
        assert_eq!(scores.len(), 10);
    }

    #[test]
    fn parallel_and_sequential_banks_agree() {
        let ds = generate_synthetic(10, 3, 16, 0.4, 6).unwrap();
        let g = SimilarityGraph::build(&ds, 4, 2.0, EdgeWeighting::Weighted).unwrap();
        let a = design_attributes(&g, 6, 7.0, 1e-8, 5000).unwrap();
        let seq = train_attribute_detectors(&ds, &a, 1.0, 1).unwrap();
        let par = train_attribute_detectors(&ds, &a, 1.0, 4).unwrap();
        for (s, p) in seq.detectors().iter().zip(par.detectors()) {
            assert_eq!(s.w, p.w);
            assert_eq!(s.b, p.b);
        }
    }

    #[test]
    fn alignment_mismatch_detected() {
        let ds = generate_synthetic(5, 2, 8, 0.2, 3).unwrap();
        let g = SimilarityGraph::from_parts(Mat::zeros(4, 4), 0.0, 3).unwrap();
        let a = design_attributes(&g, 2, 7.0, 1e-8, 5000).unwrap();
        assert!(matches!(
            train_attribute_detectors(&ds, &a, 1.0, 1),
            Err(Error::AlignmentMismatch { .. })
        ));
    }

    #[test]
    fn embed_single_axis_detector() {
        let bank = DetectorBank::new(
            vec![LinearModel {
                w: vec![1.0, 0.0, 0.0],
                b: 0.0,
                c: 1.0,
                train_loss: 0.0,
                degenerate: false,
            }],
            3,
        )
        .unwrap();
        let scores = embed(&bank, &[0.7, -3.0, 5.0]).unwrap();
        assert_eq!(scores, vec![0.7]);
        assert!(matches!(
            embed(&bank, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embed_is_affine() {
        let mut rng = SplitMix64::new(44);
        let bank = DetectorBank::new(
            (0..4)
                .map(|_| LinearModel {
                    w: rng.gaussian_vec(5),
                    b: rng.next_gaussian(),
                    c: 1.0,
                    train_loss: 0.0,
                    degenerate: false,
                })
                .collect(),
            5,
        )
        .unwrap();
        let x = rng.gaussian_vec(5);
        let y = rng.gaussian_vec(5);
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let ex = embed(&bank, &x).unwrap();
        let ey = embed(&bank, &y).unwrap();
        let exy = embed(&bank, &xy).unwrap();
        for j in 0..4 {
            let bias = bank.detectors()[j].b;
            assert!((exy[j] - (ex[j] + ey[j] - bias)).abs() < 1e-9);
        }
    }

    #[test]
    fn bank_matrix_round_trip() {
        let ds = generate_synthetic(6, 2, 8, 0.3, 7).unwrap();
        let g = SimilarityGraph::build(&ds, 3, 2.0, EdgeWeighting::Weighted).unwrap();
        let a = design_attributes(&g, 4, 7.0, 1e-8, 5000).unwrap();
        let bank = train_attribute_detectors(&ds, &a, 1.0, 1).unwrap();
        let m = bank.to_matrix();
        let sidecar = DetectorSidecar {
            c: 1.0,
            seed: 7,
            feature_dim: bank.feature_dim(),
            attribute_count: bank.attribute_count(),
            per_detector_loss: bank.detectors().iter().map(|d| d.train_loss).collect(),
            positive_counts: vec![0; bank.attribute_count()],
            degenerate: bank.detectors().iter().map(|d| d.degenerate).collect(),
        };
        let back = DetectorBank::from_matrix(&m, &sidecar).unwrap();
        for (x, y) in bank.detectors().iter().zip(back.detectors()) {
            assert_eq!(x.w, y.w);
            assert_eq!(x.b, y.b);
        }
    }
}
