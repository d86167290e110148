//! Synthetic models shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use opinf_core::kronops::CompressedQuadraticOp;
use opinf_core::models::{FullOrderModel, InputSignal, LocalNonlinearity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Quadratic model of size `n` whose trajectories from the initial state stay
/// in a `k`-dimensional invariant subspace. Dynamics off the subspace are
/// present in `A` and `H` but never excited.
pub fn invariant_quadratic(n: usize, k: usize, seed: u64) -> FullOrderModel {
    let mut rng = rng(seed);
    let q = random_matrix(n, n, &mut rng).qr().q();
    let inside = q.columns(0, k).into_owned();
    let outside = q.columns(k, n - k).into_owned();

    let skew = random_matrix(k, k, &mut rng);
    let a1 = DMatrix::<f64>::identity(k, k) * -1.0 + (&skew - skew.transpose()) * 1.5;
    let a2 = random_matrix(n - k, n - k, &mut rng) - DMatrix::identity(n - k, n - k) * 3.0;
    let a = &inside * a1 * inside.transpose() + &outside * a2 * outside.transpose();

    let h1 = random_matrix(k, k * k, &mut rng) * 0.2;
    let h2 = random_matrix(n - k, (n - k) * (n - k), &mut rng) * 0.2;
    let hfull = &inside * h1 * inside.kronecker(&inside).transpose()
        + &outside * h2 * outside.kronecker(&outside).transpose();

    let b = &inside * random_matrix(k, 3, &mut rng) * 2.0;
    let s0 = &inside * random_vector(k, &mut rng);
    FullOrderModel {
        name: "invariant-quadratic".into(),
        field_names: vec!["s".into()],
        a: CsrMatrix::from(&CooMatrix::from(&a)),
        h: Some(CompressedQuadraticOp::compress(&hfull).unwrap()),
        nonlinearity: LocalNonlinearity::zero(n),
        b,
        c: DMatrix::from_element(1, n, 1.0 / n as f64),
        s0,
        input: InputSignal::new(3, |t, u| {
            u[0] = (2.0 * t).sin();
            u[1] = (5.3 * t).cos();
            u[2] = (0.7 * t).sin() + 0.5;
        }),
        coupling: None,
        infer_quadratic: true,
    }
}
