//! Banded LU with partial pivoting, used for the Newton systems of the
//! implicit integrator after a bandwidth-reducing reordering.

use std::collections::VecDeque;

use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

/// Reverse Cuthill–McKee ordering of the symmetrized sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(pattern: &CsrMatrix<f64>) -> Vec<usize> {
    let n = pattern.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in pattern.triplet_iter() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    let mut queue = VecDeque::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// LU factors of a banded matrix, stored row-wise in a window of columns
/// `[i - lower, i + lower + upper]` for row `i`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factorizes `matrix` reordered by `perm` (`perm[new] = old`).
    pub fn factor(matrix: &CsrMatrix<f64>, perm: &[usize]) -> Result<Self> {
        let n = matrix.nrows();
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut lower, mut upper) = (0usize, 0usize);
        for (r, c, _) in matrix.triplet_iter() {
            let (r, c) = (inv[r], inv[c]);
            if r > c {
                lower = lower.max(r - c);
            } else {
                upper = upper.max(c - r);
            }
        }
        let width = 2 * lower + upper + 1;
        let mut lu = Self {
            n,
            lower,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for (r, c, &v) in matrix.triplet_iter() {
            let (r, c) = (inv[r], inv[c]);
            let k = lu.slot(r, c);
            lu.data[k] += v;
        }
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.lower, self.width - 2 * self.lower - 1)
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.lower >= r && c + self.lower < r + self.width);
        r * self.width + (c + self.lower - r)
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.lower;
        let reach = self.width - kl; // columns i..i+reach in row i
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let mut p = i;
            let mut best = self.data[self.slot(i, i)].abs();
            for r in i + 1..=last_row {
                let v = self.data[self.slot(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::RankDeficient(format!(
                    "singular Newton matrix at pivot {i}"
                )));
            }
            self.pivots[i] = p;
            let col_end = (i + reach).min(n);
            if p != i {
                for c in i..col_end {
                    let a = self.slot(i, c);
                    let b = self.slot(p, c);
                    self.data.swap(a, b);
                }
            }
            let piv = self.data[self.slot(i, i)];
            for r in i + 1..=last_row {
                let s = self.slot(r, i);
                let m = self.data[s] / piv;
                self.data[s] = m;
                if m != 0.0 {
                    for c in i + 1..col_end {
                        let src = self.data[self.slot(i, c)];
                        let dst = self.slot(r, c);
                        self.data[dst] -= m * src;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves in the original ordering; `perm` must match [`factor`](Self::factor).
    pub fn solve_in_place(&self, perm: &[usize], rhs: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        let kl = self.lower;
        let reach = self.width - kl;
        work.clear();
        work.extend(perm.iter().map(|&old| rhs[old]));
        for i in 0..n {
            let p = self.pivots[i];
            if p != i {
                work.swap(i, p);
            }
            let wi = work[i];
            if wi != 0.0 {
                for r in i + 1..=(i + kl).min(n - 1) {
                    work[r] -= self.data[self.slot(r, i)] * wi;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = work[i];
            for c in i + 1..(i + reach).min(n) {
                acc -= self.data[self.slot(i, c)] * work[c];
            }
            work[i] = acc / self.data[self.slot(i, i)];
        }
        for (new, &old) in perm.iter().enumerate() {
            rhs[old] = work[new];
        }
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use nalgebra_sparse::{CooMatrix, CsrMatrix};

    use super::*;

    fn tridiag_interleaved(n: usize) -> DMatrix<f64> {
        // two coupled fields stacked: bandwidth n in natural order, small after RCM
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for f in 0..2 {
            for i in 0..n {
                let k = f * n + i;
                m[(k, k)] = 4.0 + i as f64 * 0.01;
                if i > 0 {
                    m[(k, k - 1)] = -1.0;
                }
                if i + 1 < n {
                    m[(k, k + 1)] = -1.3;
                }
            }
        }
        for i in 0..n {
            m[(i, n + i)] = 0.7;
            m[(n + i, i)] = -0.2;
        }
        m
    }

    #[test]
    fn solve_matches_dense() {
        let dense = tridiag_interleaved(20);
        let csr = CsrMatrix::from(&CooMatrix::from(&dense));
        let perm = reverse_cuthill_mckee(&csr);
        let lu = BandedLu::factor(&csr, &perm).unwrap();
        assert!(lu.bandwidth().0 <= 3, "{:?}", lu.bandwidth());
        let b = DVector::from_fn(40, |i, _| (i as f64).sin());
        let mut x = b.as_slice().to_vec();
        lu.solve_in_place(&perm, &mut x, &mut Vec::new());
        let x = DVector::from_vec(x);
        assert!((&dense * x - b).norm() < 1e-12);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let dense = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 1.0]);
        let csr = CsrMatrix::from(&CooMatrix::from(&dense));
        let perm: Vec<usize> = (0..3).collect();
        let lu = BandedLu::factor(&csr, &perm).unwrap();
        let mut x = vec![1.0, 2.0, 3.0];
        lu.solve_in_place(&perm, &mut x, &mut Vec::new());
        let r = &dense * DVector::from_vec(x) - DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let dense = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let csr = CsrMatrix::from(&CooMatrix::from(&dense));
        assert!(BandedLu::factor(&csr, &[0, 1]).is_err());
    }
}
