//! Non-adiabatic tubular reactor with one Arrhenius reaction. Fields are the
//! concentration `psi` and temperature `theta` on the nodes `x_k = k h`,
//! `k = 1..=n`, `h = 1/n`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::TubularConfig;
use super::{csr_from_triplets, FullOrderModel, InputSignal, LocalNonlinearity};
use crate::error::{Error, Result};
use crate::models::BenchmarkConfig;

/// Arrhenius term `psi * exp(gamma - gamma / theta)`.
pub fn arrhenius(psi: f64, theta: f64, gamma: f64) -> f64 {
    psi * (gamma - gamma / theta).exp()
}

pub fn build_tubular(cfg: &TubularConfig) -> Result<FullOrderModel> {
    BenchmarkConfig::Tubular(cfg.clone()).validate()?;
    let n = cfg.n;
    let h = 1.0 / n as f64;
    let diff = 1.0 / (cfg.pe * h * h);
    let adv = 1.0 / (2.0 * h);
    // boundary value from the one-sided Robin condition:
    // v_0 = (v_1 + h Pe) / (1 + h Pe)
    let w_left = diff + adv;
    let g = 1.0 / (1.0 + h * cfg.pe);
    let load = w_left * h * cfg.pe * g;

    let mut trip = Vec::with_capacity(6 * n + 2);
    let mut b = DMatrix::zeros(2 * n, 1);
    for field in 0..2 {
        let o = field * n;
        let sink = if field == 1 { cfg.beta } else { 0.0 };
        for k in 0..n {
            trip.push((o + k, o + k, -2.0 * diff - sink));
            if k > 0 {
                trip.push((o + k, o + k - 1, diff + adv));
            }
            if k + 1 < n {
                trip.push((o + k, o + k + 1, diff - adv));
            }
        }
        trip.push((o, o, w_left * g));
        // mirrored ghost at x = 1 + h: advection cancels, diffusion doubles
        trip.push((o + n - 1, o + n - 2, diff - adv));
        b[(o, 0)] = load;
        if field == 1 {
            for k in 0..n {
                b[(o + k, 0)] += cfg.beta * cfg.theta_ref;
            }
        }
    }
    let a = csr_from_triplets(2 * n, 2 * n, &trip);

    let (d, ba, gamma) = (cfg.d, cfg.b_adiabatic, cfg.gamma);
    let eval = move |_t: f64, cell: usize, v: &[f64], out: &mut [f64]| {
        let theta = v[1];
        if !(theta > 0.0) {
            return Err(Error::Nonlinearity {
                cell,
                reason: format!("temperature {theta} is not positive"),
            });
        }
        let f = arrhenius(v[0], theta, gamma);
        out[0] = -d * f;
        out[1] = ba * d * f;
        Ok(())
    };
    let nonlinearity = LocalNonlinearity::new(2, n, vec![vec![0, 1], vec![0, 1]], Arc::new(eval))?;

    let mut c = DMatrix::zeros(1, 2 * n);
    c[(0, 2 * n - 1)] = 1.0;
    let mut s0 = DVector::from_element(2 * n, cfg.psi0);
    s0.rows_mut(n, n).fill(cfg.theta0);

    Ok(FullOrderModel {
        name: "tubular".into(),
        field_names: vec!["psi".into(), "theta".into()],
        a,
        h: None,
        nonlinearity,
        b,
        c,
        s0,
        input: InputSignal::constant(vec![1.0]),
        coupling: None,
        infer_quadratic: cfg.infer_quadratic,
    })
}
