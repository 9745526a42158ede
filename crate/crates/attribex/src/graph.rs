//! Instance-level similarity graph: the proximity matrix S, its mutual-kNN
//! sparsification, the unnormalized Laplacian L = D - S, and the design
//! matrix P = Q - lambda*L with Q = n*I - ones(n, n).

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Whether retained mutual-kNN edges keep their similarity value or become 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeighting {
    Weighted,
    Binary,
}

#[derive(Clone, Debug)]
pub struct SimilarityGraph {
    s: Mat,
    laplacian: Mat,
    p: Mat,
    lambda: f64,
    k_nn_requested: usize,
    k_nn_effective: usize,
}

impl SimilarityGraph {
    /// Full construction: average-cosine instance similarity, mutual-kNN
    /// sparsification (k clipped to n-1), Laplacian, and P.
    pub fn build(
        dataset: &FeatureDataset,
        k_nn: usize,
        lambda: f64,
        weighting: EdgeWeighting,
    ) -> Result<SimilarityGraph> {
        let n = dataset.n_instances();
        if n < 2 {
            return Err(Error::DegenerateData(format!(
                "similarity graph needs at least 2 instances, got {n}"
            )));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        let k_eff = k_nn.min(n - 1).max(1);
        let sim = instance_similarity(dataset)?;
        let mut s = mutual_knn_sparsify(&sim, k_eff)?;
        if weighting == EdgeWeighting::Binary {
            for i in 0..n {
                for j in 0..n {
                    if s[(i, j)] > 0.0 {
                        s[(i, j)] = 1.0;
                    }
                }
            }
        }
        let lap = laplacian(&s)?;
        let p = build_p(n, &lap, lambda)?;
        Ok(SimilarityGraph {
            s,
            laplacian: lap,
            p,
            lambda,
            k_nn_requested: k_nn,
            k_nn_effective: k_eff,
        })
    }

    /// Assemble from precomputed parts. Used by tests and tools that read
    /// the graph back from disk.
    pub fn from_parts(s: Mat, lambda: f64, k_nn: usize) -> Result<SimilarityGraph> {
        let n = s.rows();
        let lap = laplacian(&s)?;
        let p = build_p(n, &lap, lambda)?;
        Ok(SimilarityGraph {
            s,
            laplacian: lap,
            p,
            lambda,
            k_nn_requested: k_nn,
            k_nn_effective: k_nn.min(n.saturating_sub(1)).max(1),
        })
    }

    pub fn n(&self) -> usize {
        self.s.rows()
    }

    pub fn s(&self) -> &Mat {
        &self.s
    }

    pub fn laplacian(&self) -> &Mat {
        &self.laplacian
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn k_nn_requested(&self) -> usize {
        self.k_nn_requested
    }

    pub fn k_nn_effective(&self) -> usize {
        self.k_nn_effective
    }

    pub fn k_nn_was_clipped(&self) -> bool {
        self.k_nn_effective != self.k_nn_requested
    }
}

/// Instance-level proximity: entry (i, j) is the mean cosine similarity over
/// all cross-instance image pairs; the diagonal is 0. Instances follow the
/// dataset's sorted instance order.
pub fn instance_similarity(dataset: &FeatureDataset) -> Result<Mat> {
    let ids = dataset.instance_ids();
    let n = ids.len();
    let mut sim = Mat::zeros(n, n);
    for i in 0..n {
        let imgs_i = dataset.images_of(&ids[i])?;
        if imgs_i.is_empty() {
            return Err(Error::InstanceWithoutImages(ids[i].clone()));
        }
        for j in (i + 1)..n {
            let imgs_j = dataset.images_of(&ids[j])?;
            if imgs_j.is_empty() {
                return Err(Error::InstanceWithoutImages(ids[j].clone()));
            }
            let mut acc = 0.0;
            for &a in imgs_i {
                for &b in imgs_j {
                    acc += linalg::cosine(
                        &dataset.images()[a].feature,
                        &dataset.images()[b].feature,
                    );
                }
            }
            let mean = acc / (imgs_i.len() * imgs_j.len()) as f64;
            sim[(i, j)] = mean;
            sim[(j, i)] = mean;
        }
    }
    Ok(sim)
}

/// Keep entry (i, j) iff j is among i's k largest off-diagonal entries and
/// vice versa. Retained weights are clamped at 0 so the Laplacian stays
/// positive semidefinite even when cosine similarities go negative.
pub fn mutual_knn_sparsify(sim: &Mat, k: usize) -> Result<Mat> {
    sim.check_symmetric(1e-8)?;
    let n = sim.rows();
    if k == 0 || k > n.saturating_sub(1) {
        return Err(Error::KOutOfRange {
            k,
            max: n.saturating_sub(1),
        });
    }

    // Top-k neighbor sets per row; ties broken by ascending index.
    let mut neighbor: Vec<Vec<bool>> = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            sim[(i, b)]
                .total_cmp(&sim[(i, a)])
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            neighbor[i][j] = true;
        }
    }

    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if neighbor[i][j] && neighbor[j][i] {
                let w = sim[(i, j)].max(0.0);
                out[(i, j)] = w;
                out[(j, i)] = w;
            }
        }
    }
    Ok(out)
}

/// Unnormalized Laplacian L = D - s with D = diag(row sums of s).
pub fn laplacian(s: &Mat) -> Result<Mat> {
    s.check_symmetric(1e-8)?;
    let n = s.rows();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        let degree: f64 = s.row(i).iter().sum();
        for j in 0..n {
            l[(i, j)] = if i == j {
                degree - s[(i, j)]
            } else {
                -s[(i, j)]
            };
        }
    }
    Ok(l)
}

/// P = Q - lambda*L where Q = n*I - ones(n, n): diagonal n-1, off-diagonal -1.
pub fn build_p(n: usize, lap: &Mat, lambda: f64) -> Result<Mat> {
    if lap.rows() != n || lap.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "Laplacian is {}x{}, expected {n}x{n}",
            lap.rows(),
            lap.cols()
        )));
    }
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let q = if i == j { n as f64 - 1.0 } else { -1.0 };
            p[(i, j)] = q - lambda * lap[(i, j)];
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureDataset, ImageRecord, Split};
    use crate::rng::SplitMix64;

    fn record(id: &str, inst: &str, feature: Vec<f64>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            instance_id: inst.into(),
            category_id: "c".into(),
            split: Split::Train,
            feature,
        }
    }

    #[test]
    fn orthogonal_instances_have_zero_similarity() {
        let ds = FeatureDataset::new(
            vec![
                record("a", "i1", vec![1.0, 0.0]),
                record("b", "i2", vec![0.0, 1.0]),
            ],
            2,
        )
        .unwrap();
        let s = instance_similarity(&ds).unwrap();
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(0, 0)], 0.0, "diagonal forced to zero");
    }

    #[test]
    fn identical_instances_have_unit_similarity() {
        let ds = FeatureDataset::new(
            vec![
                record("a", "i1", vec![0.6, 0.8]),
                record("b", "i2", vec![0.6, 0.8]),
            ],
            2,
        )
        .unwrap();
        let s = instance_similarity(&ds).unwrap();
        assert!((s[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_averages_cross_pairs() {
        // instance A = {a1, a2}, instance B = {b1}: mean of the two cosines
        let a1 = vec![1.0, 0.0];
        let a2 = vec![0.0, 1.0];
        let b1 = vec![std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
        let ds = FeatureDataset::new(
            vec![
                record("a1", "A", a1.clone()),
                record("a2", "A", a2.clone()),
                record("b1", "B", b1.clone()),
            ],
            2,
        )
        .unwrap();
        let s = instance_similarity(&ds).unwrap();
        let expect = (linalg::cosine(&a1, &b1) + linalg::cosine(&a2, &b1)) / 2.0;
        assert!((s[(0, 1)] - expect).abs() < 1e-12);
    }

    #[test]
    fn mutual_knn_keeps_only_mutual_edges() {
        // sims: (1,2)=0.9, (1,3)=0.5, (2,3)=0.4, k=1
        let s = Mat::from_rows(&[
            vec![0.0, 0.9, 0.5],
            vec![0.9, 0.0, 0.4],
            vec![0.5, 0.4, 0.0],
        ])
        .unwrap();
        let out = mutual_knn_sparsify(&s, 1).unwrap();
        assert_eq!(out[(0, 1)], 0.9);
        assert_eq!(out[(0, 2)], 0.0);
        assert_eq!(out[(1, 2)], 0.0);
        assert_eq!(out.max_abs_asymmetry(), 0.0);
    }

    #[test]
    fn mutual_knn_full_k_returns_input() {
        let mut rng = SplitMix64::new(4);
        let n = 6;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.next_f64();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let out = mutual_knn_sparsify(&s, n - 1).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(out[(i, j)], s[(i, j)]);
            }
        }
    }

    #[test]
    fn mutual_knn_drops_one_sided_edges() {
        // 1's nearest is 2, but 2's nearest is 3 (and vice versa): edge (1,2) dies.
        let s = Mat::from_rows(&[
            vec![0.0, 0.8, 0.1],
            vec![0.8, 0.0, 0.9],
            vec![0.1, 0.9, 0.0],
        ])
        .unwrap();
        let out = mutual_knn_sparsify(&s, 1).unwrap();
        assert_eq!(out[(0, 1)], 0.0);
        assert_eq!(out[(1, 2)], 0.9);
    }

    #[test]
    fn mutual_knn_rejects_bad_k() {
        let s = Mat::zeros(3, 3);
        assert!(matches!(
            mutual_knn_sparsify(&s, 0),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            mutual_knn_sparsify(&s, 3),
            Err(Error::KOutOfRange { .. })
        ));
    }

    #[test]
    fn mutual_knn_output_bounded_by_input() {
        let mut rng = SplitMix64::new(90);
        let n = 9;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.uniform(-0.2, 1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let out = mutual_knn_sparsify(&s, 3).unwrap();
        for i in 0..n {
            let nonzeros = (0..n).filter(|&j| out[(i, j)] != 0.0).count();
            assert!(nonzeros <= 3);
            for j in 0..n {
                assert!(out[(i, j)] <= s[(i, j)].max(0.0) + 1e-15);
                assert!(out[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn laplacian_two_nodes() {
        let s = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let l = laplacian(&s).unwrap();
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(0, 1)], -1.0);
        assert_eq!(l[(1, 0)], -1.0);
        assert_eq!(l[(1, 1)], 1.0);
    }

    #[test]
    fn laplacian_of_zero_graph_is_zero() {
        let l = laplacian(&Mat::zeros(4, 4)).unwrap();
        assert!(l.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_row_sums_vanish() {
        // Oracle: direct row-sum check on a random symmetric matrix.
        let mut rng = SplitMix64::new(12);
        let n = 5;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.next_f64();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let l = laplacian(&s).unwrap();
        for i in 0..n {
            let sum: f64 = l.row(i).iter().sum();
            assert!(sum.abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let s = Mat::from_rows(&[vec![0.0, 1.0], vec![0.2, 0.0]]).unwrap();
        assert!(matches!(laplacian(&s), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn laplacian_is_psd_on_probes() {
        let mut rng = SplitMix64::new(77);
        let n = 8;
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.next_f64();
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let l = laplacian(&s).unwrap();
        for _ in 0..50 {
            let x = rng.gaussian_vec(n);
            let lx = l.matvec(&x);
            let quad = linalg::dot(&x, &lx);
            assert!(quad >= -1e-8, "x^T L x = {quad}");
        }
    }

    #[test]
    fn p_with_zero_lambda_is_q() {
        let l = Mat::from_rows(&[vec![5.0, -5.0, 0.0], vec![-5.0, 9.0, -4.0], vec![0.0, -4.0, 4.0]])
            .unwrap();
        let p = build_p(3, &l, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { -1.0 };
                assert_eq!(p[(i, j)], expect);
            }
        }
    }

    #[test]
    fn p_hand_example_n2() {
        let l = Mat::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let p = build_p(2, &l, 2.0).unwrap();
        assert_eq!(p[(0, 0)], -1.0);
        assert_eq!(p[(0, 1)], 1.0);
        assert_eq!(p[(1, 0)], 1.0);
        assert_eq!(p[(1, 1)], -1.0);
    }

    #[test]
    fn p_rejects_shape_mismatch() {
        let l = Mat::zeros(2, 2);
        assert!(matches!(build_p(3, &l, 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn p_row_sums_vanish_and_symmetric() {
        let ds = crate::dataset::generate_synthetic(12, 3, 16, 0.4, 9).unwrap();
        let g = SimilarityGraph::build(&ds, 4, 2.0, EdgeWeighting::Weighted).unwrap();
        assert!(g.p().max_abs_asymmetry() < 1e-12);
        for i in 0..g.n() {
            let sum: f64 = g.p().row(i).iter().sum();
            assert!(sum.abs() < 1e-9, "P row {i} sums to {sum}");
        }
        // row sparsity: at most k nonzeros per row of S
        for i in 0..g.n() {
            let nz = (0..g.n()).filter(|&j| g.s()[(i, j)] != 0.0).count();
            assert!(nz <= 4);
        }
    }

    #[test]
    fn build_clips_k_nn() {
        let ds = crate::dataset::generate_synthetic(5, 2, 8, 0.3, 2).unwrap();
        let g = SimilarityGraph::build(&ds, 60, 2.0, EdgeWeighting::Weighted).unwrap();
        assert_eq!(g.k_nn_effective(), 4);
        assert!(g.k_nn_was_clipped());
    }

    #[test]
    fn binary_weighting_sets_unit_edges() {
        let ds = crate::dataset::generate_synthetic(6, 2, 8, 0.3, 2).unwrap();
        let g = SimilarityGraph::build(&ds, 2, 1.0, EdgeWeighting::Binary).unwrap();
        for i in 0..g.n() {
            for j in 0..g.n() {
                let v = g.s()[(i, j)];
                assert!(v == 0.0 || v == 1.0);
            }
        }
    }
}
