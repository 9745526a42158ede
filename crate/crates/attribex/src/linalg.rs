//! Dense row-major matrices and the handful of linear-algebra routines the
//! pipeline needs. Problem sizes stay in the hundreds, so everything is
//! straightforward O(n^2)/O(n^3) code on `Vec<f64>`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::ShapeMismatch(
                    "rows have inconsistent lengths".into(),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: nrows,
            cols: ncols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// Rank-1 update M -= s * u u^T, keeping exact symmetry for symmetric M.
    pub fn sub_scaled_outer(&mut self, s: f64, u: &[f64]) {
        assert_eq!(self.rows, self.cols);
        assert_eq!(u.len(), self.rows);
        for i in 0..self.rows {
            let ui = s * u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (j, r) in row.iter_mut().enumerate() {
                *r -= ui * u[j];
            }
        }
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix is not square",
                self.rows, self.cols
            )));
        }
        let max_asym = self.max_abs_asymmetry();
        if max_asym > tol {
            return Err(Error::NotSymmetric { max_asym });
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine similarity with the convention cos(0, .) = 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn scale_in_place(v: &mut [f64], s: f64) {
    for x in v {
        *x *= s;
    }
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
/// eigenvector i is column i of the returned matrix, normalized so its first
/// component of largest magnitude is positive.
pub fn sym_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    m.check_symmetric(1e-8)?;
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Mat::identity(n);

    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a[(i, j)].abs());
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (out_col, &in_col) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|k| v[(k, in_col)]).collect();
        // Deterministic sign: component of largest magnitude positive.
        let lead = col
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if col[lead] < 0.0 {
            scale_in_place(&mut col, -1.0);
        }
        for k in 0..n {
            vectors[(k, out_col)] = col[k];
        }
    }
    Ok((eigenvalues, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn matvec_small() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0]);
    }

    #[test]
    fn symmetry_check_rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        assert!(matches!(
            m.check_symmetric(1e-8),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn jacobi_diagonal() {
        let m = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (vals, vecs) = sym_eigen(&m).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = SplitMix64::new(11);
        for n in [2usize, 3, 5, 8, 13] {
            let mut m = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let x = rng.uniform(-1.0, 1.0);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            let (vals, vecs) = sym_eigen(&m).unwrap();
            // M v_i = lambda_i v_i for every pair.
            for c in 0..n {
                let v: Vec<f64> = (0..n).map(|r| vecs[(r, c)]).collect();
                let mv = m.matvec(&v);
                for r in 0..n {
                    assert!(
                        (mv[r] - vals[c] * v[r]).abs() < 1e-9,
                        "residual too large at n={n}, col {c}"
                    );
                }
                assert!((norm(&v) - 1.0).abs() < 1e-9);
            }
            // Eigenvalues descending.
            for c in 1..n {
                assert!(vals[c - 1] >= vals[c] - 1e-12);
            }
        }
    }

    #[test]
    fn sub_scaled_outer_keeps_symmetry() {
        let mut m = Mat::identity(4);
        let u = vec![0.5, -0.5, 0.5, -0.5];
        m.sub_scaled_outer(2.0, &u);
        assert_eq!(m.max_abs_asymmetry(), 0.0);
        assert!((m[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((m[(0, 1)] - 0.5).abs() < 1e-12);
    }
}
