//! Discrete empirical interpolation of the nonlinear term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::LocalNonlinearity;
use crate::pod::{fix_signs, numerical_rank, thin_svd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeimMode {
    Count(usize),
    /// Smallest `m` with `σ_{m+1} / σ_1 <= tol`.
    Tolerance(f64),
}

/// Greedy interpolation indices for the columns of `w`. Ties in the
/// residual maximum go to the lowest index.
pub fn deim_select(w: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = w.shape();
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!("cannot select {m} interpolation points from {n} rows")));
    }
    let mut p = vec![argmax_abs(w.column(0).iter().copied())?];
    for j in 1..m {
        let wj = w.column(j);
        let sw = DMatrix::from_fn(j, j, |a, b| w[(p[a], b)]);
        let rhs = DVector::from_fn(j, |a, _| wj[p[a]]);
        let z = sw
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RankDeficient(format!("interpolation matrix singular at step {j}")))?;
        let r = wj - w.columns(0, j) * z;
        let next = argmax_abs(r.iter().copied())?;
        if r[next].abs() <= f64::EPSILON * wj.amax() {
            return Err(Error::RankDeficient(format!(
                "DEIM basis column {j} lies in the span of the previous ones"
            )));
        }
        p.push(next);
    }
    Ok(p)
}

fn argmax_abs(it: impl Iterator<Item = f64>) -> Result<usize> {
    let mut best = (0, -1.0);
    for (i, v) in it.enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput("non-finite DEIM basis entry".into()));
        }
        if v.abs() > best.1 {
            best = (i, v.abs());
        }
    }
    Ok(best.0)
}

/// DEIM approximation `Vᵀ f ≈ Vᵀ W (Pᵀ W)⁻¹ Pᵀ f` with the state entries
/// needed to evaluate the selected rows of `f`.
#[derive(Debug, Clone)]
pub struct DeimOperator {
    pub w: DMatrix<f64>,
    pub indices: Vec<usize>,
    /// `Vᵀ W (Pᵀ W)⁻¹`, `r × m`.
    pub projection_factor: DMatrix<f64>,
    /// Sorted union of the dependency maps of the selected rows.
    pub required_state_indices: Vec<usize>,
    /// Rows of `V` at `required_state_indices`.
    pub lift_rows: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `‖(Pᵀ W)⁻¹‖₂`, the DEIM error amplification.
    pub inverse_norm: f64,
}

impl DeimOperator {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Interpolant `W (Pᵀ W)⁻¹ Pᵀ g` in the full space.
    pub fn interpolate(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("DEIM interpolation", self.w.nrows(), g.len())?;
        let m = self.m();
        let pw = DMatrix::from_fn(m, m, |a, b| self.w[(self.indices[a], b)]);
        let pg = DVector::from_fn(m, |a, _| g[self.indices[a]]);
        let c = pw
            .lu()
            .solve(&pg)
            .ok_or_else(|| Error::RankDeficient("singular DEIM interpolation matrix".into()))?;
        Ok(&self.w * c)
    }

    /// Reduced nonlinear term at reduced state `shat`. Only the selected
    /// rows of `f` are evaluated, and only the state entries they read are
    /// reconstructed.
    pub fn eval(&self, f: &LocalNonlinearity, t: f64, shat: &[f64], out: &mut [f64]) -> Result<()> {
        let mut lifted = vec![0.0; self.required_state_indices.len()];
        let mut sampled = vec![0.0; self.m()];
        self.eval_with(f, t, shat, &mut lifted, &mut sampled, out)
    }

    pub(crate) fn eval_with(
        &self,
        f: &LocalNonlinearity,
        t: f64,
        shat: &[f64],
        lifted: &mut [f64],
        sampled: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        check_dim("DEIM reduced state", self.lift_rows.ncols(), shat.len())?;
        for (k, l) in lifted.iter_mut().enumerate() {
            let row = self.lift_rows.row(k);
            *l = row.iter().zip(shat).map(|(a, b)| a * b).sum();
        }
        let req = &self.required_state_indices;
        let mut acc = |i: usize| match req.binary_search(&i) {
            Ok(k) => lifted[k],
            Err(_) => f64::NAN,
        };
        f.eval_rows(t, &mut acc, &self.indices, sampled)?;
        for (o, row) in out.iter_mut().zip(self.projection_factor.row_iter()) {
            *o = row.iter().zip(sampled.iter()).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }
}

/// Number of DEIM modes selected by `mode` given singular values of a `shape` matrix.
pub fn select_deim_count(sv: &DVector<f64>, shape: (usize, usize), mode: DeimMode) -> Result<usize> {
    let rank = numerical_rank(sv, shape);
    if rank == 0 {
        return Err(Error::RankDeficient("nonlinear snapshot matrix is zero".into()));
    }
    match mode {
        DeimMode::Count(0) => Err(Error::Config("DEIM needs at least one mode".into())),
        DeimMode::Count(m) if m > rank => Err(Error::RankDeficient(format!(
            "requested {m} DEIM modes but the nonlinear snapshots have numerical rank {rank}"
        ))),
        DeimMode::Count(m) => Ok(m),
        DeimMode::Tolerance(tol) if !(tol >= 0.0) => Err(Error::Config(format!("invalid DEIM tolerance {tol}"))),
        DeimMode::Tolerance(tol) => (1..=rank)
            .find(|&m| sv.get(m).map_or(0.0, |s| s / sv[0]) <= tol)
            .ok_or_else(|| {
                Error::RankDeficient(format!(
                    "DEIM tolerance {tol:e} needs more modes than the numerical rank {rank} of the nonlinear snapshots"
                ))
            }),
    }
}

/// Builds the DEIM operator from nonlinear snapshots `f_snapshots` (`n × K`)
/// for the basis `v` (`n × r`).
pub fn build_deim(
    f_snapshots: &DMatrix<f64>,
    mode: DeimMode,
    v: &DMatrix<f64>,
    nonlinearity: &LocalNonlinearity,
) -> Result<DeimOperator> {
    check_dim("DEIM snapshot rows", v.nrows(), f_snapshots.nrows())?;
    check_dim("DEIM nonlinearity", v.nrows(), nonlinearity.dim())?;
    let (u, sv) = thin_svd(f_snapshots, None)?;
    let m = select_deim_count(&sv, f_snapshots.shape(), mode)?;
    let mut w = u.columns(0, m).into_owned();
    fix_signs(&mut w);
    from_basis(w, sv, v, nonlinearity)
}

/// DEIM operator for a given interpolation basis `w`.
pub fn from_basis(
    w: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: &DMatrix<f64>,
    nonlinearity: &LocalNonlinearity,
) -> Result<DeimOperator> {
    check_dim("DEIM basis rows", v.nrows(), w.nrows())?;
    let indices = deim_select(&w)?;
    let m = indices.len();
    let pw = DMatrix::from_fn(m, m, |a, b| w[(indices[a], b)]);
    let inverse_norm = {
        let sv = pw.clone().singular_values();
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            1.0 / min
        } else {
            f64::INFINITY
        }
    };
    if !inverse_norm.is_finite() {
        return Err(Error::RankDeficient("singular DEIM interpolation matrix".into()));
    }
    // factor = Vᵀ W (Pᵀ W)⁻¹  <=>  (Pᵀ W)ᵀ factorᵀ = (Vᵀ W)ᵀ
    let vtw = v.tr_mul(&w);
    let factor_t = pw
        .transpose()
        .lu()
        .solve(&vtw.transpose())
        .ok_or_else(|| Error::RankDeficient("singular DEIM interpolation matrix".into()))?;
    log::debug!("DEIM: {m} points, ||(P^T W)^-1|| = {inverse_norm:.3e}");

    let mut required: Vec<usize> = indices.iter().flat_map(|&i| nonlinearity.dependency_map(i)).collect();
    required.sort_unstable();
    required.dedup();
    let lift_rows = DMatrix::from_fn(required.len(), v.ncols(), |a, b| v[(required[a], b)]);
    Ok(DeimOperator {
        w,
        indices,
        projection_factor: factor_t.transpose(),
        required_state_indices: required,
        lift_rows,
        singular_values,
        inverse_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormal(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    #[test]
    fn first_index_is_argmax() {
        let w = DMatrix::from_column_slice(3, 1, &[0.1, -0.9, 0.3]);
        assert_eq!(deim_select(&w).unwrap(), vec![1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let w = DMatrix::from_column_slice(4, 1, &[0.5, -0.5, 0.5, 0.5]);
        assert_eq!(deim_select(&w).unwrap(), vec![0]);
    }

    #[test]
    fn identity_columns_select_in_order() {
        let w = DMatrix::<f64>::identity(6, 4);
        assert_eq!(deim_select(&w).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dependent_columns_are_rejected() {
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = DMatrix::from_columns(&[c.clone(), c * 2.0]);
        assert!(deim_select(&w).is_err());
    }

    #[test]
    fn interpolation_and_span_exactness() {
        let n = 20;
        let f = LocalNonlinearity::pointwise(n, |_, s| s.sin());
        let w = orthonormal(n, 5, 7);
        let v = orthonormal(n, 3, 8);
        let op = from_basis(w.clone(), DVector::zeros(0), &v, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let approx = op.interpolate(&g).unwrap();
            for &i in &op.indices {
                assert!((approx[i] - g[i]).abs() <= 1e-10);
            }
            let coeffs = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let inside = &w * coeffs;
            assert!((op.interpolate(&inside).unwrap() - &inside).amax() <= 1e-12);
        }
    }

    #[test]
    fn tolerance_selects_count() {
        let sv = DVector::from_vec(vec![1.0, 1e-3, 1e-9, 1e-12]);
        assert_eq!(select_deim_count(&sv, (10, 10), DeimMode::Tolerance(1e-8)).unwrap(), 2);
        assert_eq!(select_deim_count(&sv, (10, 10), DeimMode::Tolerance(0.5)).unwrap(), 1);
        let tiny = DVector::from_vec(vec![1.0, 1e-3, 1e-17]);
        assert!(select_deim_count(&tiny, (10, 10), DeimMode::Tolerance(1e-20)).is_err());
        assert!(select_deim_count(&sv, (10, 10), DeimMode::Count(5)).is_err());
    }

    #[test]
    fn rank_one_snapshots_give_one_mode() {
        let n = 8;
        let c = DVector::from_fn(n, |i, _| (i as f64 + 1.0).ln());
        let fsnap = DMatrix::from_fn(n, 6, |i, j| c[i] * (j as f64 - 2.5));
        let f = LocalNonlinearity::pointwise(n, |_, s| s);
        let v = orthonormal(n, 2, 3);
        let op = build_deim(&fsnap, DeimMode::Tolerance(0.9), &v, &f).unwrap();
        assert_eq!(op.m(), 1);
    }

    #[test]
    fn eval_matches_projection_on_span() {
        // f(s) = s: DEIM is exact when V's range lies in W's range
        let n = 15;
        let f = LocalNonlinearity::pointwise(n, |_, s| s);
        let w = orthonormal(n, 6, 2);
        let v = w.columns(0, 3).into_owned();
        let op = from_basis(w, DVector::zeros(0), &v, &f).unwrap();
        let shat = [0.3, -1.2, 0.8];
        let mut out = [0.0; 3];
        op.eval(&f, 0.0, &shat, &mut out).unwrap();
        for (a, b) in out.iter().zip(shat) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(op.required_state_indices.len() <= op.m());
    }
}
