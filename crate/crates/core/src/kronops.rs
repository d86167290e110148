//! Column-wise Kronecker products and compressed quadratic operators.
//!
//! The compressed product `s ⊗' s` keeps one copy of every monomial
//! `s_i s_j` with `i <= j`, ordered lexicographically by `(i, j)`. Every
//! module that stores a quadratic operator uses this ordering.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{check_dim, Error, Result};

/// Number of distinct quadratic monomials in `d` variables.
pub fn compressed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of the monomial `s_i s_j` (`i <= j`) in the compressed product.
#[inline]
pub fn compressed_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * d - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Inverse of [`compressed_index`].
pub fn compressed_pair(col: usize, d: usize) -> (usize, usize) {
    debug_assert!(col < compressed_len(d));
    // rows start at offset(i) = i*d - i*(i-1)/2; solve approximately, then fix up
    let df = d as f64 + 0.5;
    let guess = (df - (df * df - 2.0 * col as f64).max(0.0).sqrt()).floor() as usize;
    let mut i = guess.min(d - 1);
    while i > 0 && compressed_index(i, i, d) > col {
        i -= 1;
    }
    while i + 1 < d && compressed_index(i + 1, i + 1, d) <= col {
        i += 1;
    }
    (i, i + col - compressed_index(i, i, d))
}

/// Full self-Kronecker product; entry `i*d + j` is `s_i s_j`.
pub fn kron_full(s: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.len() * s.len());
    for &si in s {
        out.extend(s.iter().map(|&sj| si * sj));
    }
    out
}

/// Compressed self-Kronecker product of length `d(d+1)/2`.
pub fn kron_compressed(s: &[f64]) -> Vec<f64> {
    let d = s.len();
    let mut out = Vec::with_capacity(compressed_len(d));
    for i in 0..d {
        out.extend(s[i..].iter().map(|&sj| s[i] * sj));
    }
    out
}

/// Applies [`kron_compressed`] to every column.
pub fn kron_compressed_matrix(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let mut out = DMatrix::zeros(compressed_len(d), s.ncols());
    for (col, mut dst) in s.column_iter().zip(out.column_iter_mut()) {
        let mut k = 0;
        for i in 0..d {
            for j in i..d {
                dst[k] = col[i] * col[j];
                k += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum QuadStorage {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix<f64>),
}

/// A quadratic operator acting on `s ⊗' s`.
#[derive(Debug, Clone)]
pub struct CompressedQuadraticOp {
    rows: usize,
    dim: usize,
    entries: QuadStorage,
}

impl CompressedQuadraticOp {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            entries: QuadStorage::Dense(DMatrix::zeros(rows, compressed_len(dim))),
        }
    }

    pub fn from_dense(entries: DMatrix<f64>, dim: usize) -> Result<Self> {
        check_dim("compressed quadratic columns", compressed_len(dim), entries.ncols())?;
        Ok(Self {
            rows: entries.nrows(),
            dim,
            entries: QuadStorage::Dense(entries),
        })
    }

    pub fn from_sparse(entries: CsrMatrix<f64>, dim: usize) -> Result<Self> {
        check_dim("compressed quadratic columns", compressed_len(dim), entries.ncols())?;
        Ok(Self {
            rows: entries.nrows(),
            dim,
            entries: QuadStorage::Sparse(entries),
        })
    }

    /// Folds a full-Kronecker operator `rows × d²` into compressed form.
    ///
    /// Symmetric column pairs are summed, so `H (s ⊗ s) = H̃ (s ⊗' s)` holds
    /// for every `H`, symmetric or not.
    pub fn compress(hfull: &DMatrix<f64>) -> Result<Self> {
        let d = square_root_exact(hfull.ncols()).ok_or_else(|| Error::DimensionMismatch {
            context: "full quadratic operator columns (must be d²)",
            expected: {
                let r = (hfull.ncols() as f64).sqrt().round() as usize;
                r * r
            },
            actual: hfull.ncols(),
        })?;
        let mut out = DMatrix::zeros(hfull.nrows(), compressed_len(d));
        for i in 0..d {
            for j in i..d {
                let k = compressed_index(i, j, d);
                let mut dst = out.column_mut(k);
                dst += hfull.column(i * d + j);
                if i != j {
                    dst += hfull.column(j * d + i);
                }
            }
        }
        Self::from_dense(out, d)
    }

    /// Like [`compress`](Self::compress) with an explicit state dimension,
    /// which turns a wrong column count into a structured error.
    pub fn compress_with_dim(hfull: &DMatrix<f64>, dim: usize) -> Result<Self> {
        check_dim("full quadratic operator columns", dim * dim, hfull.ncols())?;
        Self::compress(hfull)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn storage(&self) -> &QuadStorage {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        match &self.entries {
            QuadStorage::Dense(m) => m.iter().all(|&v| v == 0.0),
            QuadStorage::Sparse(m) => m.values().iter().all(|&v| v == 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.entries {
            QuadStorage::Dense(m) => m.clone(),
            QuadStorage::Sparse(m) => {
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                for (r, c, v) in m.triplet_iter() {
                    out[(r, c)] += *v;
                }
                out
            }
        }
    }

    /// `H (s ⊗' s)` without materializing the compressed product.
    pub fn apply(&self, s: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.rows);
        self.apply_add(s, out.as_mut_slice())?;
        Ok(out)
    }

    /// Accumulates `H (s ⊗' s)` into `out`.
    pub fn apply_add(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim("quadratic operator state", self.dim, s.len())?;
        check_dim("quadratic operator output", self.rows, out.len())?;
        let d = self.dim;
        match &self.entries {
            QuadStorage::Dense(m) => {
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        let w = s[i] * s[j];
                        if w != 0.0 {
                            for (o, h) in out.iter_mut().zip(m.column(k).iter()) {
                                *o += h * w;
                            }
                        }
                        k += 1;
                    }
                }
            }
            QuadStorage::Sparse(m) => {
                for (r, row) in m.row_iter().enumerate() {
                    let mut acc = 0.0;
                    for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                        let (i, j) = compressed_pair(c, d);
                        acc += v * s[i] * s[j];
                    }
                    out[r] += acc;
                }
            }
        }
        Ok(())
    }

    /// Triplets `(row, col, value)` of the Jacobian `∂ H(s ⊗' s) / ∂s`.
    pub(crate) fn jacobian_triplets(&self, s: &[f64], coo: &mut CooMatrix<f64>) {
        let d = self.dim;
        let mut push = |r: usize, i: usize, j: usize, v: f64| {
            coo.push(r, i, v * s[j]);
            coo.push(r, j, v * s[i]);
        };
        match &self.entries {
            QuadStorage::Dense(m) => {
                for c in 0..m.ncols() {
                    let (i, j) = compressed_pair(c, d);
                    for r in 0..m.nrows() {
                        let v = m[(r, c)];
                        if v != 0.0 {
                            push(r, i, j, v);
                        }
                    }
                }
            }
            QuadStorage::Sparse(m) => {
                for (r, c, &v) in m.triplet_iter() {
                    let (i, j) = compressed_pair(c, d);
                    push(r, i, j, v);
                }
            }
        }
    }
}

fn square_root_exact(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n && r > 0).then_some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_product_matches_definition() {
        assert_eq!(kron_full(&[2.0, 3.0]), vec![4.0, 6.0, 6.0, 9.0]);
        assert_eq!(kron_full(&[1.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn compressed_product_order() {
        assert_eq!(kron_compressed(&[2.0, 3.0]), vec![4.0, 6.0, 9.0]);
        assert_eq!(kron_compressed(&[1.0; 3]), vec![1.0; 6]);
    }

    #[test]
    fn compressed_lengths() {
        for d in 1..=50 {
            let s: Vec<f64> = (0..d).map(|i| i as f64).collect();
            assert_eq!(kron_compressed(&s).len(), d * (d + 1) / 2);
        }
    }

    #[test]
    fn index_and_pair_are_inverse() {
        for d in 1..40 {
            let mut k = 0;
            for i in 0..d {
                for j in i..d {
                    assert_eq!(compressed_index(i, j, d), k);
                    assert_eq!(compressed_pair(k, d), (i, j));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn matrix_version_is_columnwise() {
        let s = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = kron_compressed_matrix(&s);
        assert_eq!(k, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));

        let s = DMatrix::from_column_slice(2, 2, &[2.0, 3.0, 2.0, 3.0]);
        let k = kron_compressed_matrix(&s);
        assert_eq!(k.column(0), k.column(1));
        assert_eq!(k.column(0).as_slice(), &[4.0, 6.0, 9.0]);
    }

    #[test]
    fn compress_folds_symmetric_pairs() {
        let h = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 5.0, 7.0]);
        let c = CompressedQuadraticOp::compress(&h).unwrap();
        assert_eq!(c.to_dense().as_slice(), &[1.0, 7.0, 7.0]);
        assert!(CompressedQuadraticOp::compress(&DMatrix::zeros(3, 9))
            .unwrap()
            .is_zero());
    }

    #[test]
    fn compress_rejects_bad_width() {
        let err = CompressedQuadraticOp::compress_with_dim(&DMatrix::zeros(1, 5), 2).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 4,
                actual: 5,
                ..
            }
        ));
        assert!(CompressedQuadraticOp::compress(&DMatrix::zeros(1, 5)).is_err());
    }

    #[test]
    fn apply_hand_expansion() {
        let h = CompressedQuadraticOp::compress(&DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!(h.apply(&[2.0, 3.0]).unwrap().as_slice(), &[13.0]);
        let z = CompressedQuadraticOp::zeros(4, 3);
        assert_eq!(z.apply(&[1.0, 2.0, 3.0]).unwrap(), DVector::zeros(4));
        assert!(h.apply(&[1.0]).is_err());
    }

    #[test]
    fn sparse_and_dense_agree() {
        let dense = DMatrix::from_fn(3, 6, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let coo = CooMatrix::from(&dense);
        let sparse = CompressedQuadraticOp::from_sparse(CsrMatrix::from(&coo), 3).unwrap();
        let dense = CompressedQuadraticOp::from_dense(dense, 3).unwrap();
        let s = [0.3, -1.2, 2.5];
        let a = dense.apply(&s).unwrap();
        let b = sparse.apply(&s).unwrap();
        assert!((a - b).norm() < 1e-14);
    }
}
