//! Galerkin projection of known full-order operators.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::kronops::{compressed_index, compressed_len, CompressedQuadraticOp};
use crate::models::FullOrderModel;
use crate::opinf::project_initial;
use crate::pod::Basis;
use crate::romsim::{NonlinearTerm, ReducedModel, RomKind, Structure};

#[derive(Debug, Clone)]
pub struct ProjectedOperators {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: Option<CompressedQuadraticOp>,
}

/// `Ã = Vᵀ A V`, `B̃ = Vᵀ B`, and `H̃` with `H̃ (ŝ ⊗' ŝ) = Vᵀ H ((V ŝ) ⊗' (V ŝ))`.
pub fn project_operators(model: &FullOrderModel, basis: &Basis) -> Result<ProjectedOperators> {
    check_dim("basis rows", model.n(), basis.n())?;
    let v = basis.matrix();
    let av = &model.a * &v;
    let a = basis.project(&av)?;
    let b = basis.project(&model.b)?;
    let h = match &model.h {
        Some(h) if !h.is_zero() => Some(project_quadratic(h, &v, basis)?),
        Some(_) => Some(CompressedQuadraticOp::zeros(v.ncols(), v.ncols())),
        None => None,
    };
    Ok(ProjectedOperators { a, b, h })
}

/// Column `(i, j)` of `H̃` is the projected symmetric bilinear form of the
/// full quadratic term at basis vectors `v_i`, `v_j` (doubled off the diagonal).
fn project_quadratic(h: &CompressedQuadraticOp, v: &DMatrix<f64>, basis: &Basis) -> Result<CompressedQuadraticOp> {
    let (n, r) = v.shape();
    let q: Vec<DVector<f64>> = (0..r).map(|i| h.apply(v.column(i).as_slice())).collect::<Result<_>>()?;
    let mut full = DMatrix::zeros(n, compressed_len(r));
    let mut sum = vec![0.0; n];
    for i in 0..r {
        full.set_column(compressed_index(i, i, r), &q[i]);
        for j in i + 1..r {
            for (k, s) in sum.iter_mut().enumerate() {
                *s = v[(k, i)] + v[(k, j)];
            }
            let qij = h.apply(&sum)? - &q[i] - &q[j];
            full.set_column(compressed_index(i, j, r), &qij);
        }
    }
    CompressedQuadraticOp::from_dense(basis.project(&full)?, r)
}

/// Intrusive reduced model with the given nonlinear-term handler.
pub fn intrusive_rom(model: &FullOrderModel, basis: &Basis, nonlinear: NonlinearTerm) -> Result<ReducedModel> {
    let ops = project_operators(model, basis)?;
    let structure = match (&model.coupling, basis) {
        (Some(c), Basis::Block(_)) => Structure::Coupled(c.clone()),
        _ => Structure::Monolithic,
    };
    let nonlinear = if model.nonlinearity.is_zero() {
        NonlinearTerm::None
    } else {
        nonlinear
    };
    ReducedModel::new(
        RomKind::Intrusive,
        ops.a,
        ops.b,
        ops.h,
        nonlinear,
        basis.clone(),
        project_initial(basis, &model.s0)?,
        structure,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kronops::kron_compressed;
    use crate::models::{InputSignal, LocalNonlinearity};
    use crate::pod::{PodBasis, PodMode};
    use nalgebra_sparse::{CooMatrix, CsrMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, seed: u64) -> FullOrderModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let hfull = DMatrix::from_fn(n, n * n, |_, _| rng.random_range(-1.0..1.0));
        FullOrderModel {
            name: "rand".into(),
            field_names: vec!["s".into()],
            a: CsrMatrix::from(&CooMatrix::from(&a)),
            h: Some(CompressedQuadraticOp::compress(&hfull).unwrap()),
            nonlinearity: LocalNonlinearity::pointwise(n, |_, s| s.tanh()),
            b: DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0)),
            c: DMatrix::from_element(1, n, 1.0),
            s0: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            input: InputSignal::new(2, |t, u| {
                u[0] = t.cos();
                u[1] = 1.0;
            }),
            coupling: None,
            infer_quadratic: true,
        }
    }

    fn basis(n: usize, r: usize, seed: u64) -> Basis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        Basis::Single(PodBasis {
            v: m.qr().q(),
            singular_values: DVector::from_element(r, 1.0),
            residual: 0.0,
            mode: PodMode::Rank(r),
        })
    }

    #[test]
    fn quadratic_projection_matches_lifted_evaluation() {
        let model = random_model(6, 1);
        let b = basis(6, 3, 2);
        let v = b.matrix();
        let ops = project_operators(&model, &b).unwrap();
        let h = ops.h.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let shat = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let lifted = &v * &shat;
            let full = model.h.as_ref().unwrap().apply(lifted.as_slice()).unwrap();
            let want = v.tr_mul(&full);
            let got = h.to_dense() * DVector::from_vec(kron_compressed(shat.as_slice()));
            assert!((got - &want).norm() <= 1e-12 * want.norm().max(1.0));
        }
    }

    #[test]
    fn identity_basis_keeps_operators() {
        let model = random_model(4, 5);
        let b = Basis::Single(PodBasis {
            v: DMatrix::identity(4, 4),
            singular_values: DVector::from_element(4, 1.0),
            residual: 0.0,
            mode: PodMode::Rank(4),
        });
        let ops = project_operators(&model, &b).unwrap();
        let mut dense = DMatrix::zeros(4, 4);
        for (r, c, &x) in model.a.triplet_iter() {
            dense[(r, c)] = x;
        }
        assert!((ops.a - dense).amax() < 1e-15);
        assert!((ops.h.unwrap().to_dense() - model.h.unwrap().to_dense()).amax() < 1e-14);
    }

    #[test]
    fn galerkin_consistency() {
        let model = random_model(8, 7);
        let b = basis(8, 4, 8);
        let rom = intrusive_rom(&model, &b, NonlinearTerm::ExactLift).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let shat = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let lifted = &rom.v * &shat;
            let want = rom.v.tr_mul(&model.rhs(0.4, lifted.as_slice()).unwrap());
            let got = rom.rhs(&model, 0.4, shat.as_slice()).unwrap();
            assert!((got - &want).norm() <= 1e-12 * want.norm());
        }
    }

    #[test]
    fn zero_quadratic_projects_to_zero() {
        let mut model = random_model(5, 3);
        model.h = Some(CompressedQuadraticOp::zeros(5, 5));
        let ops = project_operators(&model, &basis(5, 2, 1)).unwrap();
        assert!(ops.h.unwrap().is_zero());
    }
}
