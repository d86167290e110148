//! Operator inference: reduced linear, input and quadratic operators fitted
//! by least squares to projected snapshot data, with the known nonlinear
//! term moved to the right-hand side.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{estimate_derivatives, Trajectory};
use crate::kronops::{compressed_len, kron_compressed_matrix, CompressedQuadraticOp};
use crate::models::FullOrderModel;
use crate::pod::Basis;

/// Condition number above which the solve switches to an SVD pseudoinverse.
pub const PINV_CONDITION: f64 = 1e12;

/// Column selection applied to the least-squares data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMask {
    /// Leading samples left out (fast transients).
    pub drop_first: usize,
    /// Keep every `stride`-th remaining sample.
    pub stride: usize,
}

impl Default for SampleMask {
    fn default() -> Self {
        Self {
            drop_first: 0,
            stride: 1,
        }
    }
}

impl SampleMask {
    pub fn columns(&self, k: usize) -> Vec<usize> {
        (self.drop_first..k).step_by(self.stride.max(1)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub shat: DMatrix<f64>,
    pub shat_dot: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub fhat: DMatrix<f64>,
    /// Trajectory columns kept in the regression.
    pub kept: Vec<usize>,
}

impl RegressionData {
    pub fn new(
        shat: DMatrix<f64>,
        shat_dot: DMatrix<f64>,
        u: DMatrix<f64>,
        fhat: DMatrix<f64>,
        kept: Vec<usize>,
    ) -> Result<Self> {
        let k = shat.ncols();
        check_dim("derivative columns", k, shat_dot.ncols())?;
        check_dim("input columns", k, u.ncols())?;
        check_dim("nonlinear columns", k, fhat.ncols())?;
        check_dim("derivative rows", shat.nrows(), shat_dot.nrows())?;
        check_dim("nonlinear rows", shat.nrows(), fhat.nrows())?;
        check_dim("kept columns", k, kept.len())?;
        Ok(Self {
            shat,
            shat_dot,
            u,
            fhat,
            kept,
        })
    }

    pub fn r(&self) -> usize {
        self.shat.nrows()
    }

    pub fn len(&self) -> usize {
        self.shat.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nonlinear snapshots `f(t_j, s_j)` at the listed trajectory columns.
pub fn nonlinear_columns(model: &FullOrderModel, traj: &Trajectory, cols: &[usize]) -> Result<DMatrix<f64>> {
    check_dim("model state", model.n(), traj.states.nrows())?;
    let mut f = DMatrix::zeros(model.n(), cols.len());
    for (k, &j) in cols.iter().enumerate() {
        model
            .nonlinearity
            .eval(traj.times[j], traj.states.column(j).as_slice(), f.column_mut(k).as_mut_slice())?;
    }
    Ok(f)
}

fn projected_derivatives(traj: &Trajectory, shat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dt = traj
        .uniform_step()
        .ok_or_else(|| Error::InvalidInput("derivative estimation needs a uniform time grid".into()))?;
    estimate_derivatives(shat, dt)
}

/// Projects the trajectory, estimates derivatives of the projected states
/// on the full grid, then keeps the masked columns.
pub fn assemble_data(traj: &Trajectory, basis: &Basis, model: &FullOrderModel, mask: SampleMask) -> Result<RegressionData> {
    check_dim("basis rows", model.n(), basis.n())?;
    let shat_full = basis.project(&traj.states)?;
    let dot_full = projected_derivatives(traj, &shat_full)?;
    let kept = mask.columns(traj.len());
    if kept.is_empty() {
        return Err(Error::Config("sample mask leaves no data".into()));
    }
    let f = nonlinear_columns(model, traj, &kept)?;
    RegressionData::new(
        shat_full.select_columns(&kept),
        dot_full.select_columns(&kept),
        traj.inputs.select_columns(&kept),
        basis.project(&f)?,
        kept,
    )
}

#[derive(Debug, Clone)]
pub struct InferredOperators {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: Option<CompressedQuadraticOp>,
    /// Attained least-squares objective (Frobenius, ridge term included).
    pub residual_norm: f64,
    pub condition_number: f64,
    pub regularization: f64,
}

impl InferredOperators {
    pub fn r(&self) -> usize {
        self.a.nrows()
    }
}

/// Solution of `min ‖D X - T‖_F² + λ ‖X‖_F²` with its diagnostics.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DMatrix<f64>,
    pub residual_norm: f64,
    pub condition_number: f64,
}

/// Least squares by column-pivoted QR; ridge rows are appended when
/// `ridge > 0`. Ill-conditioned problems fall back to an SVD pseudoinverse
/// of the triangular factor; numerically rank-deficient ones are rejected
/// unless regularized.
pub fn lstsq(d: &DMatrix<f64>, target: &DMatrix<f64>, ridge: f64) -> Result<LstsqSolution> {
    let (k, q) = d.shape();
    check_dim("least-squares right-hand side", k, target.nrows())?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge parameter must be nonnegative, got {ridge}")));
    }
    if ridge == 0.0 && k < q {
        return Err(Error::RankDeficient(format!(
            "{k} samples for {q} unknowns per row; add data or a ridge parameter"
        )));
    }
    let (dm, tm) = if ridge > 0.0 {
        let mut dm = DMatrix::zeros(k + q, q);
        dm.rows_mut(0, k).copy_from(d);
        dm.view_mut((k, 0), (q, q)).fill_diagonal(ridge.sqrt());
        let mut tm = DMatrix::zeros(k + q, target.ncols());
        tm.rows_mut(0, k).copy_from(target);
        (dm, tm)
    } else {
        (d.clone(), target.clone())
    };
    let qr = nalgebra::linalg::ColPivQR::new(dm.clone());
    let mut qtb = tm.clone();
    qr.q_tr_mul(&mut qtb);
    let (_, r, p) = qr.unpack();
    let r = r.rows(0, q).into_owned();
    let sv = r.clone().singular_values();
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let rank_cut = smax * q as f64 * f64::EPSILON;
    if smin <= rank_cut {
        return Err(Error::RankDeficient(format!(
            "data matrix is numerically rank deficient (condition number {cond:.3e}); add data or a ridge parameter"
        )));
    }
    let top = qtb.rows(0, q).into_owned();
    let mut x = if cond > PINV_CONDITION {
        log::warn!("least-squares condition number {cond:.3e}; using an SVD pseudoinverse");
        let svd = r.svd(true, true);
        svd.solve(&top, rank_cut)
            .map_err(|e| Error::RankDeficient(e.to_string()))?
    } else {
        r.solve_upper_triangular(&top)
            .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?
    };
    p.inv_permute_rows(&mut x);
    let misfit = (&dm * &x - &tm).norm();
    Ok(LstsqSolution {
        x,
        residual_norm: misfit,
        condition_number: cond,
    })
}

/// Data matrix `D̂ᵀ = [Ŝ; U; Ŝ ⊗' Ŝ]ᵀ`.
pub fn data_matrix(shat: &DMatrix<f64>, u: &DMatrix<f64>, quadratic: bool) -> Result<DMatrix<f64>> {
    check_dim("input columns", shat.ncols(), u.ncols())?;
    let (r, k) = shat.shape();
    let m = u.nrows();
    let q = r + m + if quadratic { compressed_len(r) } else { 0 };
    let mut d = DMatrix::zeros(k, q);
    d.columns_mut(0, r).copy_from(&shat.transpose());
    d.columns_mut(r, m).copy_from(&u.transpose());
    if quadratic {
        d.columns_mut(r + m, q - r - m)
            .copy_from(&kron_compressed_matrix(shat).transpose());
    }
    Ok(d)
}

fn split(sol: LstsqSolution, r: usize, m: usize, quadratic: bool, ridge: f64) -> Result<InferredOperators> {
    let o = sol.x.transpose();
    let h = if quadratic {
        Some(CompressedQuadraticOp::from_dense(o.columns(r + m, compressed_len(r)).into_owned(), r)?)
    } else {
        None
    };
    Ok(InferredOperators {
        a: o.columns(0, r).into_owned(),
        b: o.columns(r, m).into_owned(),
        h,
        residual_norm: sol.residual_norm,
        condition_number: sol.condition_number,
        regularization: ridge,
    })
}

fn infer(shat: &DMatrix<f64>, u: &DMatrix<f64>, target: &DMatrix<f64>, quadratic: bool, ridge: f64) -> Result<InferredOperators> {
    let d = data_matrix(shat, u, quadratic)?;
    let sol = lstsq(&d, &target.transpose(), ridge)?;
    log::info!(
        "inferred r = {} operators: residual {:.3e}, condition {:.3e}",
        shat.nrows(),
        sol.residual_norm,
        sol.condition_number
    );
    split(sol, shat.nrows(), u.nrows(), quadratic, ridge)
}

/// Continuous-time inference: `Ŝdot - F̂ ≈ Â Ŝ + B̂ U + Ĥ (Ŝ ⊗' Ŝ)`.
pub fn infer_continuous(data: &RegressionData, infer_quadratic: bool, ridge: f64) -> Result<InferredOperators> {
    infer(&data.shat, &data.u, &(&data.shat_dot - &data.fhat), infer_quadratic, ridge)
}

/// Discrete-time inference: `Ŝ₁ - F̂ ≈ Â Ŝ₀ + B̂ U + Ĥ (Ŝ₀ ⊗' Ŝ₀)`.
pub fn infer_discrete(
    s0: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    u: &DMatrix<f64>,
    fhat: &DMatrix<f64>,
    infer_quadratic: bool,
    ridge: f64,
) -> Result<InferredOperators> {
    check_dim("next-state columns", s0.ncols(), s1.ncols())?;
    check_dim("nonlinear columns", s0.ncols(), fhat.ncols())?;
    infer(s0, u, &(s1 - fhat), infer_quadratic, ridge)
}

/// Regression data of one transported field of a coupled model.
#[derive(Debug, Clone)]
pub struct CoupledFieldData {
    pub chat: DMatrix<f64>,
    pub chat_dot: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// `V_cᵀ g`: the exchange term of the paired field projected on this field's basis.
    pub ghat: DMatrix<f64>,
}

/// Per-field data for every `(c, q)` pair of a coupled model with a block basis.
pub fn assemble_coupled(
    traj: &Trajectory,
    basis: &Basis,
    model: &FullOrderModel,
    mask: SampleMask,
) -> Result<Vec<CoupledFieldData>> {
    let Basis::Block(bb) = basis else {
        return Err(Error::Config("coupled inference needs a block basis".into()));
    };
    let coupling = model
        .coupling
        .as_ref()
        .ok_or_else(|| Error::Config("model has no coupled structure".into()))?;
    check_dim("block count", model.n_fields(), bb.blocks.len())?;
    let dt = traj
        .uniform_step()
        .ok_or_else(|| Error::InvalidInput("derivative estimation needs a uniform time grid".into()))?;
    let kept = mask.columns(traj.len());
    if kept.is_empty() {
        return Err(Error::Config("sample mask leaves no data".into()));
    }
    let f = nonlinear_columns(model, traj, &kept)?;
    let u = traj.inputs.select_columns(&kept);
    let mut out = Vec::new();
    for &(c, q) in &coupling.pairs {
        let vc = &bb.blocks[c].v;
        let rows = model.field_range(c);
        let chat_full = vc.tr_mul(&traj.states.rows(rows.start, rows.len()));
        let dot = estimate_derivatives(&chat_full, dt)?;
        let qrows = model.field_range(q);
        out.push(CoupledFieldData {
            chat: chat_full.select_columns(&kept),
            chat_dot: dot.select_columns(&kept),
            u: u.clone(),
            ghat: vc.tr_mul(&f.rows(qrows.start, qrows.len())),
        });
    }
    Ok(out)
}

/// Separate least-squares fits `min ‖Ċ - ε_c Ĝ - Â Ĉ - B̂ U‖_F` per field.
pub fn infer_coupled(fields: &[CoupledFieldData], eps_c: f64, ridge: f64) -> Result<Vec<InferredOperators>> {
    fields
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let target = &d.chat_dot - &d.ghat * eps_c;
            infer(&d.chat, &d.u, &target, false, ridge).map_err(|e| e.labeled(format!("coupled field {i}")))
        })
        .collect()
}

/// Places per-field operators on the diagonal blocks of the transported
/// fields; blocks of exchange-only fields stay zero.
pub fn assemble_block_operators(
    per_field: &[InferredOperators],
    field_blocks: &[usize],
    column_blocks: &[Range<usize>],
    n_inputs: usize,
) -> Result<InferredOperators> {
    check_dim("per-field operator count", field_blocks.len(), per_field.len())?;
    let r = column_blocks.last().map_or(0, |b| b.end);
    let mut a = DMatrix::zeros(r, r);
    let mut b = DMatrix::zeros(r, n_inputs);
    let mut res2 = 0.0;
    let mut cond = 0.0f64;
    for (ops, &field) in per_field.iter().zip(field_blocks) {
        let blk = column_blocks
            .get(field)
            .ok_or_else(|| Error::InvalidInput(format!("no basis block for field {field}")))?;
        check_dim("block operator size", blk.len(), ops.r())?;
        check_dim("block input columns", n_inputs, ops.b.ncols())?;
        a.view_mut((blk.start, blk.start), (blk.len(), blk.len())).copy_from(&ops.a);
        b.rows_mut(blk.start, blk.len()).copy_from(&ops.b);
        res2 += ops.residual_norm * ops.residual_norm;
        cond = cond.max(ops.condition_number);
    }
    Ok(InferredOperators {
        a,
        b,
        h: None,
        residual_norm: res2.sqrt(),
        condition_number: cond,
        regularization: per_field.first().map_or(0.0, |o| o.regularization),
    })
}

/// Objective `‖D̂ᵀ Ôᵀ - R̂ᵀ‖_F` of given operators on given data.
pub fn objective(data: &RegressionData, ops: &InferredOperators) -> Result<f64> {
    let quadratic = ops.h.is_some();
    let d = data_matrix(&data.shat, &data.u, quadratic)?;
    let r = data.r();
    let mut o = DMatrix::zeros(r, d.ncols());
    o.columns_mut(0, r).copy_from(&ops.a);
    o.columns_mut(r, ops.b.ncols()).copy_from(&ops.b);
    if let Some(h) = &ops.h {
        o.columns_mut(r + ops.b.ncols(), compressed_len(r)).copy_from(&h.to_dense());
    }
    let target = &data.shat_dot - &data.fhat;
    Ok((d * o.transpose() - target.transpose()).norm())
}

/// Reduced initial condition `Vᵀ s0`.
pub fn project_initial(basis: &Basis, s0: &DVector<f64>) -> Result<DVector<f64>> {
    let m = DMatrix::from_column_slice(s0.len(), 1, s0.as_slice());
    Ok(basis.project(&m)?.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Samples of a reduced model with analytic derivatives.
    fn synthetic(a: &DMatrix<f64>, b: &DMatrix<f64>, h: Option<&CompressedQuadraticOp>, k: usize, seed: u64) -> RegressionData {
        let r = a.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shat = DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(b.ncols(), k, |_, _| rng.random_range(-1.0..1.0));
        let mut dot = a * &shat + b * &u;
        if let Some(h) = h {
            for j in 0..k {
                let q = h.apply(shat.column(j).as_slice()).unwrap();
                dot.column_mut(j).add_assign(&q);
            }
        }
        let fhat = DMatrix::zeros(r, k);
        RegressionData::new(shat, dot, u, fhat, (0..k).collect()).unwrap()
    }

    use std::ops::AddAssign;

    #[test]
    fn recovers_linear_operators() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let data = synthetic(&a, &b, None, 40, 1);
        let ops = infer_continuous(&data, true, 0.0).unwrap();
        assert!((&ops.a - &a).norm() <= 1e-10);
        assert!((&ops.b - &b).norm() <= 1e-10);
        assert!(ops.h.unwrap().to_dense().norm() <= 1e-10);
    }

    #[test]
    fn recovers_quadratic_operator() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.5, 1.0]);
        let hd = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let h = CompressedQuadraticOp::from_dense(hd.clone(), 2).unwrap();
        let data = synthetic(&a, &b, Some(&h), 60, 2);
        let ops = infer_continuous(&data, true, 0.0).unwrap();
        assert!((ops.h.unwrap().to_dense() - hd).norm() <= 1e-8);
        assert!(ops.residual_norm < 1e-10);
    }

    #[test]
    fn zero_target_gives_zero_operators() {
        let mut data = synthetic(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 1), None, 30, 3);
        data.shat_dot.fill(0.0);
        let ops = infer_continuous(&data, true, 0.0).unwrap();
        assert_eq!(ops.a.amax(), 0.0);
        assert_eq!(ops.b.amax(), 0.0);
        assert_eq!(ops.h.unwrap().to_dense().amax(), 0.0);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // constant input duplicates a constant state row
        let k = 20;
        let shat = DMatrix::from_fn(2, k, |i, j| if i == 0 { 1.0 } else { j as f64 });
        let u = DMatrix::from_element(1, k, 1.0);
        let data = RegressionData::new(shat.clone(), shat.clone(), u, DMatrix::zeros(2, k), (0..k).collect()).unwrap();
        let err = infer_continuous(&data, false, 0.0).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
        assert!(infer_continuous(&data, false, 1e-6).is_ok());
        assert!(infer_continuous(&data, false, -1.0).is_err());
    }

    #[test]
    fn normal_equations_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = 3;
        let k = 50;
        let shat = DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(1, k, |_, _| rng.random_range(-1.0..1.0));
        let dot = DMatrix::from_fn(r, k, |_, _| rng.random_range(-1.0..1.0));
        let data = RegressionData::new(shat, dot, u, DMatrix::zeros(r, k), (0..k).collect()).unwrap();
        let ops = infer_continuous(&data, true, 0.0).unwrap();
        let d = data_matrix(&data.shat, &data.u, true).unwrap();
        let o = {
            let mut o = DMatrix::zeros(r, d.ncols());
            o.columns_mut(0, r).copy_from(&ops.a);
            o.columns_mut(r, 1).copy_from(&ops.b);
            o.columns_mut(r + 1, 6).copy_from(&ops.h.as_ref().unwrap().to_dense());
            o
        };
        let resid = &d * o.transpose() - data.shat_dot.transpose();
        let normal = d.transpose() * &resid;
        assert!(normal.amax() <= 1e-8 * data.shat_dot.norm());
        assert!((objective(&data, &ops).unwrap() - ops.residual_norm).abs() < 1e-10);
        // perturbing any entry does not lower the objective
        let base = ops.residual_norm;
        for (i, j) in [(0, 0), (2, 1), (1, 2)] {
            for delta in [1e-6, -1e-6] {
                let mut p = ops.clone();
                p.a[(i, j)] += delta;
                assert!(objective(&data, &p).unwrap() >= base);
            }
        }
    }

    #[test]
    fn discrete_identity_and_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s0 = DMatrix::from_fn(3, 20, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(1, 20, |_, _| rng.random_range(-1.0..1.0));
        let zero = DMatrix::zeros(3, 20);
        let ops = infer_discrete(&s0, &s0, &u, &zero, false, 0.0).unwrap();
        assert!((ops.a - DMatrix::identity(3, 3)).amax() < 1e-12);
        let ops = infer_discrete(&s0, &(&s0 * 0.5), &u, &zero, false, 0.0).unwrap();
        assert!((ops.a - DMatrix::identity(3, 3) * 0.5).amax() < 1e-12);
    }

    #[test]
    fn coupled_blocks_are_independent() {
        let a1 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.5, -1.0]);
        let a2 = DMatrix::from_row_slice(1, 1, &[-3.0]);
        let b1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b2 = DMatrix::from_column_slice(1, 1, &[2.0]);
        let d1 = synthetic(&a1, &b1, None, 30, 7);
        let d2 = synthetic(&a2, &b2, None, 30, 8);
        let fields: Vec<CoupledFieldData> = [d1, d2]
            .into_iter()
            .map(|d| CoupledFieldData {
                chat: d.shat,
                chat_dot: d.shat_dot,
                u: d.u,
                ghat: d.fhat,
            })
            .collect();
        let ops = infer_coupled(&fields, 0.0, 0.0).unwrap();
        assert!((&ops[0].a - &a1).norm() < 1e-8);
        assert!((&ops[1].a - &a2).norm() < 1e-8);
        let full = assemble_block_operators(&ops, &[0, 2], &[0..2, 2..3, 3..4, 4..5], 1).unwrap();
        assert_eq!(full.a.shape(), (5, 5));
        assert!(full.a.row(2).iter().all(|&v| v == 0.0));
        assert!(full.a.row(4).iter().all(|&v| v == 0.0));
        assert!((full.a[(3, 3)] + 3.0).abs() < 1e-8);
        assert!((full.b[(3, 0)] - 2.0).abs() < 1e-8);
    }
}
