mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use opinf_core::deim::{deim_select, from_basis};
use opinf_core::kronops::{
    compressed_index, compressed_len, compressed_pair, kron_compressed, kron_compressed_matrix, kron_full,
    CompressedQuadraticOp,
};
use opinf_core::models::LocalNonlinearity;
use opinf_core::opinf::lstsq;
use opinf_core::pod::{pod_basis, tail_energy, PodMode};

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    common::random_matrix(rows, cols, &mut common::rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn compressed_index_round_trips(d in 1usize..40) {
        let mut expect = 0;
        for i in 0..d {
            for j in i..d {
                prop_assert_eq!(compressed_index(i, j, d), expect);
                prop_assert_eq!(compressed_pair(expect, d), (i, j));
                expect += 1;
            }
        }
        prop_assert_eq!(expect, compressed_len(d));
    }

    #[test]
    fn compressed_product_holds_each_monomial_once(s in prop::collection::vec(-3.0f64..3.0, 1..12)) {
        let d = s.len();
        let full = kron_full(&s);
        let comp = kron_compressed(&s);
        for i in 0..d {
            for j in i..d {
                prop_assert_eq!(comp[compressed_index(i, j, d)], full[i * d + j]);
                prop_assert_eq!(full[i * d + j], full[j * d + i]);
            }
        }
        let col = kron_compressed_matrix(&DMatrix::from_column_slice(d, 1, &s));
        prop_assert_eq!(col.as_slice(), comp.as_slice());
    }

    #[test]
    fn sparse_and_dense_storage_agree(d in 1usize..8, rows in 1usize..5, seed in any::<u64>()) {
        let mut dense = matrix(rows, compressed_len(d), seed);
        dense.iter_mut().enumerate().for_each(|(k, x)| if k % 3 == 0 { *x = 0.0 });
        let s = common::random_vector(d, &mut common::rng(seed ^ 1));
        let a = CompressedQuadraticOp::from_dense(dense.clone(), d).unwrap();
        let coo = nalgebra_sparse::CooMatrix::from(&dense);
        let b = CompressedQuadraticOp::from_sparse(nalgebra_sparse::CsrMatrix::from(&coo), d).unwrap();
        let (ya, yb) = (a.apply(s.as_slice()).unwrap(), b.apply(s.as_slice()).unwrap());
        prop_assert!((ya - yb).amax() <= 1e-13);
        prop_assert_eq!(b.to_dense(), dense);
    }

    #[test]
    fn pod_basis_is_orthonormal_with_consistent_residual(
        n in 8usize..40, k in 3usize..20, seed in any::<u64>(), r_frac in 0.1f64..1.0,
    ) {
        let s = matrix(n, k, seed);
        let r = ((n.min(k) as f64 * r_frac).ceil() as usize).max(1);
        let pod = pod_basis(&s, PodMode::Rank(r)).unwrap();
        let gram = pod.v.tr_mul(&pod.v);
        prop_assert!((gram - DMatrix::identity(r, r)).amax() <= 1e-12);
        // the projection error of S equals the discarded singular value energy
        let proj = &pod.v * pod.v.tr_mul(&s);
        let err = (&s - proj).norm() / s.norm();
        prop_assert!((err - pod.residual).abs() <= 1e-10);
        prop_assert!((tail_energy(&pod.singular_values, r) - pod.residual).abs() <= 1e-14);
        prop_assert!(pod.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn deim_interpolates_at_selected_rows(n in 10usize..60, m in 1usize..8, seed in any::<u64>()) {
        prop_assume!(m <= n);
        let w = matrix(n, m, seed).qr().q();
        let p = deim_select(&w).unwrap();
        let mut sorted = p.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
        let v = w.columns(0, 1).into_owned();
        let op = from_basis(w.clone(), DVector::from_element(m, 1.0), &v, &LocalNonlinearity::zero(n)).unwrap();
        let g = common::random_vector(n, &mut common::rng(seed ^ 7));
        let approx = op.interpolate(&g).unwrap();
        for &i in &p {
            prop_assert!((approx[i] - g[i]).abs() <= 1e-9 * g.amax().max(1.0));
        }
    }

    #[test]
    fn least_squares_residual_is_orthogonal(k in 10usize..50, q in 1usize..8, seed in any::<u64>()) {
        let d = matrix(k, q, seed);
        let t = matrix(k, 2, seed ^ 3);
        let sol = lstsq(&d, &t, 0.0).unwrap();
        let res = &d * &sol.x - &t;
        prop_assert!((d.tr_mul(&res)).amax() <= 1e-10);
        prop_assert!((res.norm() - sol.residual_norm).abs() <= 1e-10 * t.norm().max(1.0));
    }

    #[test]
    fn ridge_matches_normal_equations(k in 5usize..30, q in 1usize..6, lambda in 1e-6f64..1.0, seed in any::<u64>()) {
        let d = matrix(k, q, seed);
        let t = matrix(k, 1, seed ^ 5);
        let sol = lstsq(&d, &t, lambda).unwrap();
        let lhs = d.tr_mul(&d) + DMatrix::identity(q, q) * lambda;
        let want = lhs.lu().solve(&d.tr_mul(&t)).unwrap();
        prop_assert!((sol.x - want).amax() <= 1e-9);
    }
}
