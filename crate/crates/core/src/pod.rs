//! Proper orthogonal decomposition: truncated left singular vectors of a
//! snapshot matrix, singly or per physical field.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodMode {
    Rank(usize),
    /// Smallest `r` with `‖S - V Vᵀ S‖_F / ‖S‖_F <= tol`.
    Energy(f64),
}

#[derive(Debug, Clone)]
pub struct PodBasis {
    pub v: DMatrix<f64>,
    /// All singular values of the snapshot matrix, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Relative Frobenius reconstruction error of the retained modes.
    pub residual: f64,
    pub mode: PodMode,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }
}

/// Singular values and (optionally truncated) left singular vectors of `s`,
/// sorted nonincreasing. Wide matrices are reduced by a QR factorization of
/// the transpose first; tall ones by a QR of the matrix itself.
pub fn thin_svd(s: &DMatrix<f64>, keep: Option<usize>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, k) = s.shape();
    if n == 0 || k == 0 {
        return Err(Error::InvalidInput("empty snapshot matrix".into()));
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("snapshot matrix contains non-finite entries".into()));
    }
    let (u, sv) = if k > n {
        // S = (Q R)ᵀ = Rᵀ Qᵀ, so S and Rᵀ share left singular vectors
        let r = s.transpose().qr().r();
        svd_left(r.transpose())?
    } else if n > 2 * k {
        let qr = s.clone().qr();
        let (ur, sv) = svd_left(qr.r())?;
        (qr.q() * ur, sv)
    } else {
        svd_left(s.clone())?
    };
    let m = keep.unwrap_or(sv.len()).min(sv.len());
    Ok((u.columns(0, m).into_owned(), sv))
}

fn svd_left(m: DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let svd = nalgebra::SVD::try_new(m, true, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::InvalidInput("SVD did not converge".into()))?;
    let u = svd.u.expect("requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut us = DMatrix::zeros(u.nrows(), order.len());
    let mut ss = DVector::zeros(order.len());
    for (j, &o) in order.iter().enumerate() {
        us.set_column(j, &u.column(o));
        ss[j] = sv[o];
    }
    Ok((us, ss))
}

/// Numerical rank: singular values above `σ₁ max(n, k) ε`.
pub fn numerical_rank(sv: &DVector<f64>, shape: (usize, usize)) -> usize {
    if sv.is_empty() || sv[0] == 0.0 {
        return 0;
    }
    let cut = sv[0] * shape.0.max(shape.1) as f64 * f64::EPSILON;
    sv.iter().take_while(|&&x| x > cut).count()
}

/// Flips each column so its largest-magnitude entry (first on ties) is nonnegative.
pub fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Relative Frobenius tail `sqrt(Σ_{i>=r} σ_i²) / sqrt(Σ σ_i²)`.
pub fn tail_energy(sv: &DVector<f64>, r: usize) -> f64 {
    let total: f64 = sv.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = sv.iter().skip(r).map(|x| x * x).sum();
    (tail / total).sqrt()
}

/// Number of modes selected by `mode` from singular values of a `shape` matrix.
pub fn select_rank(sv: &DVector<f64>, shape: (usize, usize), mode: PodMode) -> Result<usize> {
    let rank = numerical_rank(sv, shape);
    if rank == 0 {
        return Err(Error::RankDeficient("snapshot matrix is zero".into()));
    }
    match mode {
        PodMode::Rank(0) => Err(Error::Config("basis size must be positive".into())),
        PodMode::Rank(r) if r > rank => Err(Error::RankDeficient(format!(
            "requested {r} modes but the snapshot matrix has numerical rank {rank}"
        ))),
        PodMode::Rank(r) => Ok(r),
        PodMode::Energy(tol) if !(tol >= 0.0) => Err(Error::Config(format!("invalid POD tolerance {tol}"))),
        PodMode::Energy(tol) => Ok((1..=rank).find(|&r| tail_energy(sv, r) <= tol).unwrap_or(rank)),
    }
}

pub fn pod_basis(s: &DMatrix<f64>, mode: PodMode) -> Result<PodBasis> {
    PodFactors::new(s)?.basis(mode)
}

/// Singular vectors of a snapshot matrix kept up to its numerical rank, so
/// bases of several sizes can be cut without refactoring.
#[derive(Debug, Clone)]
pub struct PodFactors {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub shape: (usize, usize),
}

impl PodFactors {
    pub fn new(s: &DMatrix<f64>) -> Result<Self> {
        let (u, sv) = thin_svd(s, None)?;
        let keep = numerical_rank(&sv, s.shape());
        Ok(Self {
            u: u.columns(0, keep).into_owned(),
            singular_values: sv,
            shape: s.shape(),
        })
    }

    pub fn basis(&self, mode: PodMode) -> Result<PodBasis> {
        let sv = &self.singular_values;
        let r = select_rank(sv, self.shape, mode)?;
        let mut v = self.u.columns(0, r).into_owned();
        fix_signs(&mut v);
        Ok(PodBasis {
            v,
            residual: tail_energy(sv, r),
            singular_values: sv.clone(),
            mode,
        })
    }
}

/// `Vᵀ X`.
pub fn project(v: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("projection rows", v.nrows(), x.nrows())?;
    Ok(v.tr_mul(x))
}

/// Block-diagonal basis with one POD basis per contiguous row block.
#[derive(Debug, Clone)]
pub struct BlockBasis {
    pub blocks: Vec<PodBasis>,
    /// Row offset of each block in the stacked state.
    pub row_offsets: Vec<usize>,
    /// Column offset of each block in the assembled basis.
    pub col_offsets: Vec<usize>,
}

impl BlockBasis {
    pub fn n(&self) -> usize {
        self.blocks.iter().map(PodBasis::n).sum()
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(PodBasis::rank).sum()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.n(), self.width());
        for (k, b) in self.blocks.iter().enumerate() {
            v.view_mut((self.row_offsets[k], self.col_offsets[k]), b.v.shape())
                .copy_from(&b.v);
        }
        v
    }
}

/// Independent POD per field; `snapshots[k]` holds the rows of field `k`.
pub fn block_basis(snapshots: &[DMatrix<f64>], modes: &[PodMode], labels: &[String]) -> Result<BlockBasis> {
    check_dim("per-field POD modes", snapshots.len(), modes.len())?;
    let factors = snapshots
        .iter()
        .enumerate()
        .map(|(k, s)| PodFactors::new(s).map_err(|e| e.labeled(field_label(labels, k))))
        .collect::<Result<Vec<_>>>()?;
    block_basis_from(&factors, modes, labels)
}

fn field_label(labels: &[String], k: usize) -> String {
    labels.get(k).cloned().unwrap_or_else(|| format!("field {k}"))
}

/// Block basis cut from per-field factorizations.
pub fn block_basis_from(factors: &[PodFactors], modes: &[PodMode], labels: &[String]) -> Result<BlockBasis> {
    check_dim("per-field POD modes", factors.len(), modes.len())?;
    let mut blocks = Vec::with_capacity(factors.len());
    let (mut row, mut col) = (Vec::new(), Vec::new());
    let (mut ro, mut co) = (0, 0);
    for (k, (f, &mode)) in factors.iter().zip(modes).enumerate() {
        let b = f.basis(mode).map_err(|e| e.labeled(field_label(labels, k)))?;
        row.push(ro);
        col.push(co);
        ro += b.n();
        co += b.rank();
        blocks.push(b);
    }
    Ok(BlockBasis {
        blocks,
        row_offsets: row,
        col_offsets: col,
    })
}

/// A reduced basis, single or block diagonal, with its assembled matrix.
#[derive(Debug, Clone)]
pub enum Basis {
    Single(PodBasis),
    Block(BlockBasis),
}

impl Basis {
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Basis::Single(b) => b.v.clone(),
            Basis::Block(b) => b.assemble(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Basis::Single(b) => b.n(),
            Basis::Block(b) => b.n(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Basis::Single(b) => b.rank(),
            Basis::Block(b) => b.width(),
        }
    }

    /// Reduced column range of each block (one range for a single basis).
    pub fn column_blocks(&self) -> Vec<std::ops::Range<usize>> {
        match self {
            Basis::Single(b) => vec![0..b.rank()],
            Basis::Block(b) => b
                .col_offsets
                .iter()
                .zip(&b.blocks)
                .map(|(&o, p)| o..o + p.rank())
                .collect(),
        }
    }

    pub fn singular_values(&self) -> Vec<DVector<f64>> {
        match self {
            Basis::Single(b) => vec![b.singular_values.clone()],
            Basis::Block(b) => b.blocks.iter().map(|p| p.singular_values.clone()).collect(),
        }
    }

    /// `Vᵀ X`, exploiting block structure.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Basis::Single(b) => project(&b.v, x),
            Basis::Block(bb) => {
                check_dim("projection rows", bb.n(), x.nrows())?;
                let mut out = DMatrix::zeros(bb.width(), x.ncols());
                for (k, b) in bb.blocks.iter().enumerate() {
                    let rows = x.rows(bb.row_offsets[k], b.n());
                    out.rows_mut(bb.col_offsets[k], b.rank()).copy_from(&b.v.tr_mul(&rows));
                }
                Ok(out)
            }
        }
    }

    /// `V X̂`, exploiting block structure.
    pub fn lift(&self, xhat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("lift rows", self.width(), xhat.nrows())?;
        match self {
            Basis::Single(b) => Ok(&b.v * xhat),
            Basis::Block(bb) => {
                let mut out = DMatrix::zeros(bb.n(), xhat.ncols());
                for (k, b) in bb.blocks.iter().enumerate() {
                    let rows = xhat.rows(bb.col_offsets[k], b.rank());
                    out.rows_mut(bb.row_offsets[k], b.n()).copy_from(&(&b.v * rows));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn repeated_column_is_rank_one() {
        let c = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let s = DMatrix::from_columns(&[c.clone(), c.clone(), c.clone(), c.clone()]);
        let b = pod_basis(&s, PodMode::Energy(1e-12)).unwrap();
        assert_eq!(b.rank(), 1);
        let v = b.v.column(0);
        assert!((v.dot(&c).abs() - 3.0).abs() < 1e-12);
        // sign convention: |−2| and |2| tie, the first (−2) decides
        assert!(v[1] >= 0.0);
    }

    #[test]
    fn energy_criterion() {
        let s = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let b = pod_basis(&s, PodMode::Energy(0.5)).unwrap();
        assert_eq!(b.rank(), 1);
        assert!((b.residual - 0.1f64.sqrt()).abs() < 1e-15);
        let b = pod_basis(&s, PodMode::Energy(0.3)).unwrap();
        assert_eq!(b.rank(), 2);
    }

    #[test]
    fn tail_energy_matches_reconstruction() {
        for (n, k) in [(30, 8), (8, 30), (40, 40), (100, 10)] {
            let s = random(n, k, (n * k) as u64);
            for r in 1..8 {
                let b = pod_basis(&s, PodMode::Rank(r)).unwrap();
                let rec = &s - &b.v * b.v.tr_mul(&s);
                let rel = rec.norm() / s.norm();
                assert!((rel - b.residual).abs() <= 1e-10 * rel.max(1e-300), "{n}x{k} r={r}");
                assert!((b.v.tr_mul(&b.v) - DMatrix::identity(r, r)).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_tolerance_gives_full_rank() {
        let s = random(6, 20, 3);
        let b = pod_basis(&s, PodMode::Energy(0.0)).unwrap();
        assert_eq!(b.rank(), 6);
        assert!(b.residual <= 1e-10);
    }

    #[test]
    fn rank_beyond_numerical_rank_is_reported() {
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = DMatrix::from_columns(&[c.clone(), c * 2.0]);
        let err = pod_basis(&s, PodMode::Rank(2)).unwrap_err();
        assert!(err.to_string().contains("numerical rank 1"), "{err}");
    }

    #[test]
    fn singular_values_sorted() {
        let b = pod_basis(&random(50, 300, 9), PodMode::Rank(3)).unwrap();
        let sv = &b.singular_values;
        assert!(sv.iter().zip(sv.iter().skip(1)).all(|(a, b)| a >= b && *b >= 0.0));
    }

    #[test]
    fn projection_properties() {
        let s = random(12, 40, 4);
        let b = pod_basis(&s, PodMode::Rank(4)).unwrap();
        let x = random(12, 5, 5);
        assert!(project(&b.v, &x).unwrap().norm() <= x.norm());
        let id = project(&b.v, &b.v).unwrap();
        assert!((id - DMatrix::identity(4, 4)).amax() < 1e-12);
        let e = DMatrix::<f64>::identity(5, 2);
        assert_eq!(project(&e, &x.rows(0, 5).into_owned()).unwrap(), x.rows(0, 2));
        assert!(project(&b.v, &random(11, 2, 1)).is_err());
    }

    #[test]
    fn block_basis_is_block_diagonal() {
        let f1 = random(7, 20, 1);
        let f2 = random(5, 20, 2);
        let bb = block_basis(&[f1.clone(), f2.clone()], &[PodMode::Rank(3), PodMode::Rank(2)], &[]).unwrap();
        let v = bb.assemble();
        assert_eq!(v.shape(), (12, 5));
        assert!((v.tr_mul(&v) - DMatrix::identity(5, 5)).amax() <= 1e-12);
        assert!(v.view((0, 3), (7, 2)).iter().all(|&x| x == 0.0));
        assert!(v.view((7, 0), (5, 3)).iter().all(|&x| x == 0.0));
        let basis = Basis::Block(bb.clone());
        let s = DMatrix::from_fn(12, 20, |i, j| if i < 7 { f1[(i, j)] } else { f2[(i - 7, j)] });
        let p = basis.project(&s).unwrap();
        assert!((&p - v.tr_mul(&s)).amax() < 1e-13);
        assert!((basis.lift(&p).unwrap() - &v * &p).amax() < 1e-13);
        // per-field errors are independent
        let r1 = pod_basis(&f1, PodMode::Rank(3)).unwrap().residual;
        assert_eq!(bb.blocks[0].residual, r1);
    }

    #[test]
    fn block_errors_carry_labels() {
        let err = block_basis(&[DMatrix::zeros(3, 4)], &[PodMode::Rank(1)], &["q1".into()]).unwrap_err();
        assert!(err.to_string().contains("q1"), "{err}");
    }
}
