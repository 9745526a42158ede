//! Feature corpora: ingestion, normalization, PCA/whitening, instance-level
//! splits, and the synthetic generator used for desk-scale runs.
//!
//! Features arrive precomputed; nothing here touches pixels. A corpus on disk
//! is a directory holding `meta.jsonl` (one record per image) and
//! `features.bin` (ATSF matrix, one row per image).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atsf;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng::SplitMix64;

/// Role of an image in the retrieval protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Gallery,
    Probe,
    Distractor,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::Probe => "probe",
            Split::Distractor => "distractor",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub image_id: String,
    pub instance_id: String,
    pub category_id: String,
    pub split: Split,
    pub feature: Vec<f64>,
}

/// An immutable set of images with an index from instance id to image rows.
///
/// Instance ids are kept sorted; everything downstream (similarity matrix,
/// attribute rows) uses that order, which makes runs reproducible.
#[derive(Clone, Debug)]
pub struct FeatureDataset {
    images: Vec<ImageRecord>,
    dim: usize,
    instance_ids: Vec<String>,
    instance_images: BTreeMap<String, Vec<usize>>,
}

impl FeatureDataset {
    pub fn new(images: Vec<ImageRecord>, dim: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut instance_images: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, rec) in images.iter().enumerate() {
            if rec.feature.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rec.feature.len(),
                });
            }
            if rec.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    image_id: rec.image_id.clone(),
                });
            }
            if !seen.insert(rec.image_id.clone()) {
                return Err(Error::DuplicateImageId(rec.image_id.clone()));
            }
            instance_images
                .entry(rec.instance_id.clone())
                .or_default()
                .push(idx);
        }
        let instance_ids = instance_images.keys().cloned().collect();
        Ok(FeatureDataset {
            images,
            dim,
            instance_ids,
            instance_images,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    /// Instance ids in sorted order; row i of the attribute matrix refers to
    /// `instance_ids()[i]`.
    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    /// Indices into `images()` for one instance.
    pub fn images_of(&self, instance_id: &str) -> Result<&[usize]> {
        self.instance_images
            .get(instance_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InstanceWithoutImages(instance_id.to_string()))
    }

    /// New dataset containing the images that satisfy `keep`, in order.
    pub fn filtered(&self, keep: impl Fn(&ImageRecord) -> bool) -> Result<FeatureDataset> {
        let images: Vec<ImageRecord> = self.images.iter().filter(|r| keep(r)).cloned().collect();
        FeatureDataset::new(images, self.dim)
    }

    pub fn split_subset(&self, split: Split) -> Result<FeatureDataset> {
        self.filtered(|r| r.split == split)
    }

    /// New dataset with every feature replaced by `f(record)`.
    pub fn mapped_features(
        &self,
        new_dim: usize,
        mut f: impl FnMut(&ImageRecord) -> Vec<f64>,
    ) -> Result<FeatureDataset> {
        let images = self
            .images
            .iter()
            .map(|r| ImageRecord {
                image_id: r.image_id.clone(),
                instance_id: r.instance_id.clone(),
                category_id: r.category_id.clone(),
                split: r.split,
                feature: f(r),
            })
            .collect();
        FeatureDataset::new(images, new_dim)
    }

    /// Feature rows stacked into a matrix, in image order.
    pub fn feature_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.n_images(), self.dim);
        for (i, rec) in self.images.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&rec.feature);
        }
        m
    }
}

/// Scale to unit Euclidean norm; the zero vector is left unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = linalg::norm(v);
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

/// Signed power normalization: x -> sign(x) |x|^alpha, alpha in (0, 1].
pub fn power_normalize(v: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if alpha.is_nan() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(v.iter().map(|&x| x.signum() * x.abs().powf(alpha)).collect())
}

/// Guard added to eigenvalues before the whitening division so near-zero
/// variance directions do not blow up.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// PCA basis with optional whitening.
#[derive(Clone, Debug)]
pub struct Projector {
    mean: Vec<f64>,
    /// target_dim x d, rows orthonormal.
    basis: Mat,
    eigenvalues: Vec<f64>,
    whiten: bool,
}

#[derive(Serialize, Deserialize)]
struct ProjectorRepr {
    dim: usize,
    target_dim: usize,
    mean: Vec<f64>,
    /// Row-major target_dim x dim.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    whiten: bool,
}

impl Projector {
    pub fn input_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn whiten(&self) -> bool {
        self.whiten
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn to_json(&self) -> String {
        let repr = ProjectorRepr {
            dim: self.input_dim(),
            target_dim: self.target_dim(),
            mean: self.mean.clone(),
            basis: self.basis.data().to_vec(),
            eigenvalues: self.eigenvalues.clone(),
            whiten: self.whiten,
        };
        serde_json::to_string_pretty(&repr).expect("projector serializes")
    }

    pub fn from_json(text: &str) -> Result<Projector> {
        let repr: ProjectorRepr =
            serde_json::from_str(text).map_err(|e| Error::json("parsing projector", e))?;
        let basis = Mat::from_vec(repr.target_dim, repr.dim, repr.basis)?;
        if repr.mean.len() != repr.dim {
            return Err(Error::DimensionMismatch {
                expected: repr.dim,
                got: repr.mean.len(),
            });
        }
        let p = Projector {
            mean: repr.mean,
            basis,
            eigenvalues: repr.eigenvalues,
            whiten: repr.whiten,
        };
        p.check_orthonormal(1e-6)?;
        Ok(p)
    }

    pub fn check_orthonormal(&self, tol: f64) -> Result<()> {
        let t = self.target_dim();
        for i in 0..t {
            for j in i..t {
                let d = linalg::dot(self.basis.row(i), self.basis.row(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > tol {
                    return Err(Error::DegenerateData(format!(
                        "projector basis rows {i},{j} not orthonormal (dot = {d:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Fit a PCA projector on the rows of `features` (one sample per row).
///
/// The basis spans the top `target_dim` principal directions of the sample
/// covariance (normalized by rows-1). With `whiten`, projected coordinates
/// are divided by sqrt(eigenvalue + floor) so retained components have unit
/// variance on the training sample.
pub fn fit_pca_whitener(features: &Mat, target_dim: usize, whiten: bool) -> Result<Projector> {
    let rows = features.rows();
    let d = features.cols();
    if rows < 2 {
        return Err(Error::DegenerateData(format!(
            "PCA needs at least 2 samples, got {rows}"
        )));
    }
    if target_dim == 0 || target_dim > d.min(rows - 1) {
        return Err(Error::TargetDimTooLarge {
            target_dim,
            rows,
            dim: d,
        });
    }

    let mut mean = vec![0.0; d];
    for i in 0..rows {
        for (m, x) in mean.iter_mut().zip(features.row(i)) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }

    let mut cov = Mat::zeros(d, d);
    for i in 0..rows {
        let row = features.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += xa * (row[b] - mean[b]);
            }
        }
    }
    let denom = (rows - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let (eigenvalues, vectors) = linalg::sym_eigen(&cov)?;
    if eigenvalues[0] <= EIGENVALUE_FLOOR {
        return Err(Error::DegenerateData(
            "all samples identical: covariance has no usable direction".into(),
        ));
    }

    let mut basis = Mat::zeros(target_dim, d);
    for r in 0..target_dim {
        for c in 0..d {
            basis[(r, c)] = vectors[(c, r)];
        }
    }
    Ok(Projector {
        mean,
        basis,
        eigenvalues: eigenvalues[..target_dim].to_vec(),
        whiten,
    })
}

/// Project one vector: basis (v - mean), then the whitening division.
pub fn apply_projector(p: &Projector, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.input_dim(),
            got: v.len(),
        });
    }
    let centered: Vec<f64> = v.iter().zip(&p.mean).map(|(x, m)| x - m).collect();
    let mut out = p.basis.matvec(&centered);
    if p.whiten {
        for (y, ev) in out.iter_mut().zip(&p.eigenvalues) {
            *y /= (ev + EIGENVALUE_FLOOR).sqrt();
        }
    }
    Ok(out)
}

/// Partition instances (not images) into two halves, the first with
/// ceil(n/2) instances. Deterministic in the seed.
pub fn split_half(dataset: &FeatureDataset, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    let n = dataset.n_instances();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "split_half needs at least 2 instances, got {n}"
        )));
    }
    let mut ids: Vec<&String> = dataset.instance_ids().iter().collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut ids);
    let take = n.div_ceil(2);
    let first: BTreeSet<&String> = ids[..take].iter().copied().collect();
    let a = dataset.filtered(|r| first.contains(&r.instance_id))?;
    let b = dataset.filtered(|r| !first.contains(&r.instance_id))?;
    Ok((a, b))
}

/// Synthetic corpus with the viewpoint structure of real instance imagery.
///
/// Each instance sits on a low-dimensional identity manifold. A view-stable
/// feature block reads the latent through a fixed linear map (coarse shape,
/// visible from any angle); a view-entangled block carries a stronger copy
/// whose coordinates each view scrambles (fine detail that no fixed readout
/// tracks across views); shared per-view directions and a common nuisance
/// subspace supply imaging conditions. All view-dependent terms scale with
/// `view_noise`: at 0, the views of an instance are identical; around 0.5,
/// cross-view matching in raw feature space is already unreliable. Features
/// are l2-normalized and quantized to f32 so corpora round-trip bit-exactly
/// through the on-disk format.
pub fn generate_synthetic(
    n_instances: usize,
    views_per_instance: usize,
    dim: usize,
    view_noise: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    if n_instances == 0 || views_per_instance == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic generator counts must be positive".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);

    let latent_dim = 6usize;
    let stable_dim = (3 * dim / 4).max(1);
    let sig_tangled = 1.6;
    let eps_rel = 2.4;
    let nuisance_dim = (dim / 4).max(1);

    let tangled_dim = dim - stable_dim;

    // Each instance is a point on a low-dimensional identity manifold.
    // Nearby latents mean visually similar instances, which is what makes
    // attributes shareable: a smooth function of the latent is a property
    // many similar instances have in common.
    let latents: Vec<Vec<f64>> = (0..n_instances)
        .map(|_| rng.gaussian_vec(latent_dim))
        .collect();

    // The latent appears twice in a feature vector. The view-stable block
    // reads it through a fixed linear map: coarse shape visible from any
    // angle. The entangled block carries a stronger copy whose coordinates
    // are scrambled per view: a detail like a buckle is unmistakable in the
    // views that show it, but no fixed linear readout tracks it across views.
    let stable_map: Vec<Vec<f64>> = (0..latent_dim)
        .map(|_| l2_normalize(&rng.gaussian_vec(stable_dim)))
        .collect();
    let tangled_map: Vec<Vec<f64>> = (0..latent_dim)
        .map(|_| l2_normalize(&rng.gaussian_vec(tangled_dim.max(1))))
        .collect();

    let mix = |basis: &[Vec<f64>], latent: &[f64], out_dim: usize, scale: f64| -> Vec<f64> {
        let mut v = vec![0.0; out_dim];
        let s = scale / (latent_dim as f64).sqrt();
        for (b, &u) in basis.iter().zip(latent) {
            for (x, bc) in v.iter_mut().zip(b) {
                *x += s * u * bc;
            }
        }
        v
    };

    // Per-view signed permutations of the entangled block.
    let view_scramble: Vec<(Vec<usize>, Vec<f64>)> = (0..views_per_instance)
        .map(|_| {
            let mut perm: Vec<usize> = (0..tangled_dim).collect();
            rng.shuffle(&mut perm);
            let signs: Vec<f64> = (0..tangled_dim)
                .map(|_| if rng.next_f64() < 0.5 { 1.0 } else { -1.0 })
                .collect();
            (perm, signs)
        })
        .collect();

    let view_directions: Vec<Vec<f64>> = (0..views_per_instance)
        .map(|_| l2_normalize(&rng.gaussian_vec(dim)))
        .collect();

    // Per-image noise lives in a low-dimensional nuisance subspace shared by
    // all images (think lighting or pose jitter), so it behaves like a real
    // imaging condition rather than white noise.
    let nuisance_basis: Vec<Vec<f64>> = (0..nuisance_dim)
        .map(|_| l2_normalize(&rng.gaussian_vec(dim)))
        .collect();

    let id_width = n_instances.to_string().len().max(3);
    let view_width = views_per_instance.to_string().len().max(2);
    // Full scrambling already at view_noise 0.5: a half-turn of a 3D object
    // replaces, not attenuates, the visible detail.
    let entangle = (2.0 * view_noise).min(1.0);
    let mut images = Vec::with_capacity(n_instances * views_per_instance);
    for (i, latent) in latents.iter().enumerate() {
        let stable_part = mix(&stable_map, latent, stable_dim, 1.0);
        let tangled_base = mix(&tangled_map, latent, tangled_dim, sig_tangled);
        for (v, dir) in view_directions.iter().enumerate() {
            let (perm, signs) = &view_scramble[v];
            let mut eps = vec![0.0; dim];
            let z_scale = eps_rel / (nuisance_dim as f64).sqrt();
            for basis_vec in &nuisance_basis {
                let z = rng.next_gaussian() * z_scale;
                for (e, b) in eps.iter_mut().zip(basis_vec) {
                    *e += z * b;
                }
            }
            let mut feature = Vec::with_capacity(dim);
            for (c, p) in stable_part.iter().enumerate() {
                feature.push(p + view_noise * (dir[c] + eps[c]));
            }
            for c in 0..tangled_dim {
                let seen = (1.0 - entangle) * tangled_base[c]
                    + entangle * signs[c] * tangled_base[perm[c]];
                let full = stable_dim + c;
                feature.push(seen + view_noise * (dir[full] + eps[full]));
            }
            let feature: Vec<f64> = l2_normalize(&feature)
                .iter()
                .map(|&x| atsf::quantize_f32(x))
                .collect();
            images.push(ImageRecord {
                image_id: format!("img_{i:0id_width$}_{v:0view_width$}"),
                instance_id: format!("inst_{i:0id_width$}"),
                category_id: "synth".into(),
                split: Split::Train,
                feature,
            });
        }
    }
    FeatureDataset::new(images, dim)
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    image_id: String,
    instance_id: String,
    category_id: String,
    split: Split,
    row: usize,
}

/// Write `meta.jsonl` and `features.bin` into `dir`.
pub fn save_corpus(dataset: &FeatureDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let meta_path = dir.join("meta.jsonl");
    let ctx = || format!("writing {}", meta_path.display());
    let file = std::fs::File::create(&meta_path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    for (row, rec) in dataset.images().iter().enumerate() {
        let meta = MetaRecord {
            image_id: rec.image_id.clone(),
            instance_id: rec.instance_id.clone(),
            category_id: rec.category_id.clone(),
            split: rec.split,
            row,
        };
        let line = serde_json::to_string(&meta).map_err(|e| Error::json(ctx(), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))?;

    let flat: Vec<f64> = dataset
        .images()
        .iter()
        .flat_map(|r| r.feature.iter().copied())
        .collect();
    atsf::write_matrix(
        &dir.join("features.bin"),
        dataset.n_images(),
        dataset.dim(),
        &flat,
    )
}

/// Load a corpus directory written by [`save_corpus`] (or produced by any
/// other tool following the same layout).
pub fn load_features(dir: &Path) -> Result<FeatureDataset> {
    let meta_path = dir.join("meta.jsonl");
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path.display().to_string()));
    }
    let ctx = || format!("reading {}", meta_path.display());
    let file = std::fs::File::open(&meta_path).map_err(|e| Error::io(ctx(), e))?;
    let mut metas = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(ctx(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: MetaRecord =
            serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?;
        metas.push(meta);
    }

    let matrix = atsf::read_matrix(&dir.join("features.bin"))?;
    if metas.len() != matrix.rows {
        return Err(Error::RowCountMismatch {
            meta_rows: metas.len(),
            matrix_rows: matrix.rows,
        });
    }

    let mut row_seen = vec![false; matrix.rows];
    for meta in &metas {
        if meta.row >= matrix.rows {
            return Err(Error::RowIndexInvalid {
                rows: matrix.rows,
                detail: format!("image {} points at row {}", meta.image_id, meta.row),
            });
        }
        if row_seen[meta.row] {
            return Err(Error::RowIndexInvalid {
                rows: matrix.rows,
                detail: format!("row {} referenced twice", meta.row),
            });
        }
        row_seen[meta.row] = true;
    }

    metas.sort_by_key(|m| m.row);
    let images = metas
        .into_iter()
        .map(|m| {
            let start = m.row * matrix.cols;
            ImageRecord {
                image_id: m.image_id,
                instance_id: m.instance_id,
                category_id: m.category_id,
                split: m.split,
                feature: matrix.values[start..start + matrix.cols].to_vec(),
            }
        })
        .collect();
    FeatureDataset::new(images, matrix.cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "attribex-ds-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

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
    fn l2_basics() {
        assert_eq!(l2_normalize(&[3.0, 4.0]), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let unit = vec![1.0, 0.0];
        assert_eq!(l2_normalize(&unit), unit);
        // idempotent
        let v = l2_normalize(&[1.5, -2.5, 0.25]);
        let w = l2_normalize(&v);
        for (a, b) in v.iter().zip(&w) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn power_basics() {
        let out = power_normalize(&[4.0, -4.0], 0.5).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12);
        assert!((out[1] + 2.0).abs() < 1e-12);
        let v = vec![0.3, -1.2, 7.0];
        assert_eq!(power_normalize(&v, 1.0).unwrap(), v);
        assert_eq!(power_normalize(&[0.0, 1.0], 0.5).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(
            power_normalize(&[1.0], 0.0),
            Err(Error::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            power_normalize(&[1.0], 1.5),
            Err(Error::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn dataset_counts_from_small_corpus() {
        let ds = FeatureDataset::new(
            vec![
                record("a", "i1", vec![1.0, 0.0, 0.0, 0.0]),
                record("b", "i1", vec![0.0, 1.0, 0.0, 0.0]),
                record("c", "i2", vec![0.0, 0.0, 1.0, 0.0]),
            ],
            4,
        )
        .unwrap();
        assert_eq!(ds.n_images(), 3);
        assert_eq!(ds.n_instances(), 2);
        assert_eq!(ds.dim(), 4);
    }

    #[test]
    fn dataset_rejects_nan_and_duplicates() {
        let err = FeatureDataset::new(vec![record("a", "i", vec![f64::NAN])], 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));

        let err = FeatureDataset::new(
            vec![record("a", "i", vec![1.0]), record("a", "j", vec![2.0])],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateImageId(_)));
    }

    #[test]
    fn corpus_round_trip_is_bit_exact() {
        let ds = generate_synthetic(6, 3, 8, 0.4, 17).unwrap();
        let dir = tmpdir("roundtrip");
        save_corpus(&ds, &dir).unwrap();
        let back = load_features(&dir).unwrap();
        assert_eq!(back.n_images(), ds.n_images());
        assert_eq!(back.dim(), ds.dim());
        for (a, b) in ds.images().iter().zip(back.images()) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.split, b.split);
            assert_eq!(a.feature, b.feature, "features must round-trip bit-exactly");
        }
        // And the files themselves are stable: saving again yields identical bytes.
        let dir2 = tmpdir("roundtrip2");
        save_corpus(&back, &dir2).unwrap();
        assert_eq!(
            std::fs::read(dir.join("features.bin")).unwrap(),
            std::fs::read(dir2.join("features.bin")).unwrap()
        );
        assert_eq!(
            std::fs::read(dir.join("meta.jsonl")).unwrap(),
            std::fs::read(dir2.join("meta.jsonl")).unwrap()
        );
        std::fs::remove_dir_all(dir).unwrap();
        std::fs::remove_dir_all(dir2).unwrap();
    }

    #[test]
    fn load_rejects_row_count_mismatch() {
        let ds = generate_synthetic(2, 2, 4, 0.1, 5).unwrap();
        let dir = tmpdir("rowmismatch");
        save_corpus(&ds, &dir).unwrap();
        // Append a bogus metadata line: 5 declared, 4 actual rows.
        let mut meta = std::fs::read_to_string(dir.join("meta.jsonl")).unwrap();
        meta.push_str(
            r#"{"image_id":"x","instance_id":"y","category_id":"c","split":"train","row":4}"#,
        );
        meta.push('\n');
        std::fs::write(dir.join("meta.jsonl"), meta).unwrap();
        let err = load_features(&dir).unwrap_err();
        assert!(matches!(
            err,
            Error::RowCountMismatch {
                meta_rows: 5,
                matrix_rows: 4
            }
        ));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn load_rejects_nan_feature() {
        let dir = tmpdir("nan");
        std::fs::write(
            dir.join("meta.jsonl"),
            r#"{"image_id":"a","instance_id":"i","category_id":"c","split":"train","row":0}"#,
        )
        .unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&atsf::MAGIC);
        bytes.extend_from_slice(&atsf::VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(dir.join("features.bin"), bytes).unwrap();
        let err = load_features(&dir).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn load_missing_dir_is_missing_file() {
        let err = load_features(Path::new("/nonexistent/corpus")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn projector_centering_and_identity() {
        // identity basis, zero mean, no whitening: v passes through
        let p = Projector {
            mean: vec![0.0; 3],
            basis: Mat::identity(3),
            eigenvalues: vec![1.0; 3],
            whiten: false,
        };
        let v = vec![0.3, -0.7, 2.0];
        assert_eq!(apply_projector(&p, &v).unwrap(), v);
    }

    #[test]
    fn projector_sends_mean_to_zero() {
        let mut rng = SplitMix64::new(23);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| rng.gaussian_vec(5)).collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 3, true).unwrap();
        let mean = p.mean().to_vec();
        let out = apply_projector(&p, &mean).unwrap();
        for y in out {
            assert!(y.abs() < 1e-12);
        }
    }

    #[test]
    fn whitened_projection_has_identity_covariance() {
        // Oracle: compute the sample covariance of the projected data directly.
        let mut rng = SplitMix64::new(41);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![rng.next_gaussian() * 3.0, rng.next_gaussian() * 0.5])
            .collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 2, true).unwrap();
        let projected: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| apply_projector(&p, r).unwrap())
            .collect();
        let n = projected.len() as f64;
        let mut mean = [0.0f64; 2];
        for r in &projected {
            mean[0] += r[0];
            mean[1] += r[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut cov = [[0.0f64; 2]; 2];
        for r in &projected {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] /= n - 1.0;
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (cov[a][b] - expect).abs() < 1e-6,
                    "cov[{a}][{b}] = {}",
                    cov[a][b]
                );
            }
        }
    }

    #[test]
    fn full_rank_projection_preserves_distances() {
        // Oracle: brute-force pairwise distances before and after.
        let mut rng = SplitMix64::new(57);
        let rows: Vec<Vec<f64>> = (0..15).map(|_| rng.gaussian_vec(4)).collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 4, false).unwrap();
        let projected: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| apply_projector(&p, r).unwrap())
            .collect();
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                let orig: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let proj: f64 = projected[i]
                    .iter()
                    .zip(&projected[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((orig - proj).abs() < 1e-9, "pair ({i},{j})");
            }
        }
    }

    #[test]
    fn projector_matches_direct_arithmetic() {
        // Oracle: independent matrix product, written out longhand.
        let mut rng = SplitMix64::new(99);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| rng.gaussian_vec(6)).collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 3, true).unwrap();
        let v = rng.gaussian_vec(6);
        let got = apply_projector(&p, &v).unwrap();
        for r in 0..3 {
            let mut acc = 0.0;
            for c in 0..6 {
                acc += p.basis()[(r, c)] * (v[c] - p.mean()[c]);
            }
            acc /= (p.eigenvalues()[r] + EIGENVALUE_FLOOR).sqrt();
            assert!((acc - got[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_rejects_dimension_mismatch_and_bad_target() {
        let mut rng = SplitMix64::new(13);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| rng.gaussian_vec(4)).collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 2, false).unwrap();
        assert!(matches!(
            apply_projector(&p, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit_pca_whitener(&m, 5, false),
            Err(Error::TargetDimTooLarge { .. })
        ));
        let flat = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            fit_pca_whitener(&flat, 1, false),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn projector_json_round_trip() {
        let mut rng = SplitMix64::new(31);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| rng.gaussian_vec(5)).collect();
        let m = Mat::from_rows(&rows).unwrap();
        let p = fit_pca_whitener(&m, 2, true).unwrap();
        let q = Projector::from_json(&p.to_json()).unwrap();
        let v = rng.gaussian_vec(5);
        assert_eq!(
            apply_projector(&p, &v).unwrap(),
            apply_projector(&q, &v).unwrap()
        );
    }

    #[test]
    fn split_half_partitions_instances() {
        let ds = generate_synthetic(9, 2, 8, 0.2, 3).unwrap();
        let (a, b) = split_half(&ds, 42).unwrap();
        assert_eq!(a.n_instances(), 5); // ceil(9/2)
        assert_eq!(b.n_instances(), 4);
        let ia: BTreeSet<_> = a.instance_ids().iter().collect();
        let ib: BTreeSet<_> = b.instance_ids().iter().collect();
        assert!(ia.is_disjoint(&ib));
        assert_eq!(ia.len() + ib.len(), 9);
        // images preserved
        assert_eq!(a.n_images() + b.n_images(), ds.n_images());
    }

    #[test]
    fn split_half_632_gives_316_each() {
        let ds = generate_synthetic(632, 1, 4, 0.0, 1).unwrap();
        let (a, b) = split_half(&ds, 0).unwrap();
        assert_eq!(a.n_instances(), 316);
        assert_eq!(b.n_instances(), 316);
    }

    #[test]
    fn split_half_two_instances_and_determinism() {
        let ds = generate_synthetic(2, 2, 4, 0.1, 8).unwrap();
        let (a, b) = split_half(&ds, 5).unwrap();
        assert_eq!(a.n_instances(), 1);
        assert_eq!(b.n_instances(), 1);
        let (a2, _) = split_half(&ds, 5).unwrap();
        assert_eq!(a.instance_ids(), a2.instance_ids());
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let ds = generate_synthetic(40, 8, 64, 0.5, 1).unwrap();
        assert_eq!(ds.n_images(), 320);
        assert_eq!(ds.n_instances(), 40);

        let again = generate_synthetic(40, 8, 64, 0.5, 1).unwrap();
        for (a, b) in ds.images().iter().zip(again.images()) {
            assert_eq!(a.feature, b.feature);
        }
        let other = generate_synthetic(40, 8, 64, 0.5, 2).unwrap();
        assert_ne!(ds.images()[0].feature, other.images()[0].feature);
    }

    #[test]
    fn synthetic_zero_noise_views_identical() {
        let ds = generate_synthetic(5, 4, 16, 0.0, 7).unwrap();
        for inst in ds.instance_ids() {
            let idxs = ds.images_of(inst).unwrap();
            let first = &ds.images()[idxs[0]].feature;
            for &i in &idxs[1..] {
                assert_eq!(&ds.images()[i].feature, first);
            }
        }
    }
}
