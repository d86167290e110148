//! Binary batch chromatography column, `x` scaled to `(0, 1)`. Liquid
//! concentrations are transported by first-order upwind finite volumes with
//! Danckwerts inlet and zero-gradient outlet; solid concentrations relax
//! towards a bi-Langmuir equilibrium.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::ChromatographyConfig;
use super::{csr_from_triplets, CoupledStructure, FullOrderModel, InputSignal, LocalNonlinearity};
use crate::error::{Error, Result};
use crate::models::BenchmarkConfig;

/// Sigmoid inlet profile `1 / (1 + exp(-5 (t - t_inj)))`.
pub fn sigmoid_injection(t: f64, t_inj: f64) -> f64 {
    1.0 / (1.0 + (-5.0 * (t - t_inj)).exp())
}

/// Equilibrium solid concentrations for liquid concentrations `c`.
pub fn isotherm_equilibrium(cfg: &ChromatographyConfig, c: [f64; 2]) -> std::result::Result<[f64; 2], String> {
    let mut den = [1.0; 2];
    for (l, d) in den.iter_mut().enumerate() {
        for j in 0..2 {
            *d += cfg.k[j][l] * cfg.feed[j] * c[j];
        }
        if !(*d > 0.0) {
            return Err(format!("isotherm denominator {d} is not positive"));
        }
    }
    let mut q = [0.0; 2];
    for i in 0..2 {
        q[i] = cfg.henry[i][0] * c[i] / den[0] + cfg.henry[i][1] * c[i] / den[1];
    }
    Ok(q)
}

pub fn build_chromatography(cfg: &ChromatographyConfig) -> Result<FullOrderModel> {
    BenchmarkConfig::Chromatography(cfg.clone()).validate()?;
    let n = cfg.n;
    let h = 1.0 / n as f64;
    let d = 1.0 / (cfg.pe * h);
    let mut trip = Vec::with_capacity(6 * n);
    let mut b = DMatrix::zeros(4 * n, 1);
    // fields: 0 = c1, 1 = q1, 2 = c2, 3 = q2
    for field in [0, 2] {
        let o = field * n;
        for j in 0..n {
            let (lower, upper) = (j > 0, j + 1 < n);
            let mut diag = 0.0;
            if lower {
                trip.push((o + j, o + j - 1, (1.0 + d) / h));
                diag -= d / h;
            } else {
                b[(o, 0)] = 1.0 / h;
            }
            if upper {
                trip.push((o + j, o + j + 1, d / h));
                diag -= d / h;
            }
            diag -= 1.0 / h;
            trip.push((o + j, o + j, diag));
        }
    }
    let a = csr_from_triplets(4 * n, 4 * n, &trip);

    let eps_c = cfg.eps_c();
    let rate = [cfg.kappa[0] * cfg.rate_scale(), cfg.kappa[1] * cfg.rate_scale()];
    let iso = cfg.clone();
    let eval = move |_t: f64, cell: usize, v: &[f64], out: &mut [f64]| {
        let q = isotherm_equilibrium(&iso, [v[0], v[2]]).map_err(|reason| Error::Nonlinearity { cell, reason })?;
        let g1 = rate[0] * (q[0] - v[1]);
        let g2 = rate[1] * (q[1] - v[3]);
        out[0] = eps_c * g1;
        out[1] = g1;
        out[2] = eps_c * g2;
        out[3] = g2;
        Ok(())
    };
    let all = vec![0, 1, 2, 3];
    let nonlinearity = LocalNonlinearity::new(4, n, vec![all.clone(), all.clone(), all.clone(), all], Arc::new(eval))?;

    let mut c = DMatrix::zeros(2, 4 * n);
    c[(0, n - 1)] = 1.0;
    c[(1, 3 * n - 1)] = 1.0;
    let t_inj = cfg.t_inj;
    Ok(FullOrderModel {
        name: "chromatography".into(),
        field_names: ["c1", "q1", "c2", "q2"].map(String::from).to_vec(),
        a,
        h: None,
        nonlinearity,
        b,
        c,
        s0: DVector::zeros(4 * n),
        input: InputSignal::scalar(move |t| sigmoid_injection(t, t_inj)),
        coupling: Some(CoupledStructure {
            pairs: vec![(0, 1), (2, 3)],
            eps_c,
        }),
        infer_quadratic: cfg.infer_quadratic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> FullOrderModel {
        build_chromatography(&ChromatographyConfig::default()).unwrap()
    }

    #[test]
    fn injection_midpoint() {
        assert_eq!(sigmoid_injection(1.3, 1.3), 0.5);
    }

    #[test]
    fn isotherm_vanishes_at_zero() {
        let q = isotherm_equilibrium(&ChromatographyConfig::default(), [0.0, 0.0]).unwrap();
        assert_eq!(q, [0.0, 0.0]);
    }

    #[test]
    fn solid_rows_have_no_linear_part() {
        let m = model();
        let n = 400;
        for (r, _, &v) in m.a.triplet_iter() {
            let field = r / n;
            assert!(field == 0 || field == 2 || v == 0.0);
        }
        assert!(m.b.rows(n, n).iter().all(|&v| v == 0.0));
        assert!(m.b.rows(3 * n, n).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transport_conserves_mass() {
        // with zero inflow the only loss is the outlet flux
        let m = model();
        let n = 400;
        let mut s = vec![0.0; 4 * n];
        for j in 0..n {
            s[j] = ((j as f64) * 0.05).sin().powi(2);
        }
        let mut total = 0.0;
        for (r, c, &v) in m.a.triplet_iter() {
            if r < n {
                total += v * s[c];
            }
        }
        let h = 1.0 / n as f64;
        assert!((total * h + s[n - 1]).abs() < 1e-10);
    }

    #[test]
    fn c_row_reads_whole_cell() {
        let m = model();
        let n = 400;
        let s: Vec<f64> = (0..4 * n).map(|i| 1e-3 * (i % 7) as f64).collect();
        let mut count = 0;
        let mut acc = |i: usize| {
            count += 1;
            s[i]
        };
        let v = m.eval_nonlinear_rows(0.0, &mut acc, &[5]).unwrap();
        assert_eq!(count, 4);
        let full = m.eval_nonlinear(0.0, &s).unwrap();
        assert_eq!(v[0], full[5]);
        assert!((full[5] - m.coupling.as_ref().unwrap().eps_c * full[n + 5]).abs() < 1e-15);
    }

    #[test]
    fn negative_denominator_is_reported() {
        let m = model();
        let mut s = vec![0.0; 1600];
        s[2 * 400 + 9] = -10.0;
        match m.rhs(0.0, &s).unwrap_err() {
            Error::Nonlinearity { cell, .. } => assert_eq!(cell, 9),
            e => panic!("unexpected {e}"),
        }
    }
}
