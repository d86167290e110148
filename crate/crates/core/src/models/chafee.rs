//! Chafee–Infante equation `v_t = v_xx - v^3` on `(0, L)` with the inflow
//! value `v(0, t) = u(t)` and a homogeneous Neumann condition at `x = L`.

use nalgebra::{DMatrix, DVector};

use super::config::ChafeeConfig;
use super::{csr_from_triplets, FullOrderModel, InputSignal, LocalNonlinearity};
use crate::error::Result;
use crate::models::BenchmarkConfig;

pub fn build_chafee(cfg: &ChafeeConfig) -> Result<FullOrderModel> {
    BenchmarkConfig::Chafee(cfg.clone()).validate()?;
    let n = cfg.n_grid;
    // nodes x_k = (k + 1) h, the last one sits on the Neumann boundary
    let h = cfg.length / n as f64;
    let c = 1.0 / (h * h);
    let mut trip = Vec::with_capacity(3 * n);
    for k in 0..n {
        trip.push((k, k, -2.0 * c));
        if k > 0 {
            trip.push((k, k - 1, c));
        }
        if k + 1 < n {
            trip.push((k, k + 1, c));
        }
    }
    // ghost node mirrors x_{n-2} across the right boundary
    trip.push((n - 1, n - 2, c));
    let a = csr_from_triplets(n, n, &trip);

    let mut b = DMatrix::zeros(n, 1);
    b[(0, 0)] = c;
    let mut out = DMatrix::zeros(1, n);
    out[(0, n - 1)] = 1.0;

    let amp = cfg.amplitude;
    Ok(FullOrderModel {
        name: "chafee".into(),
        field_names: vec!["v".into()],
        a,
        h: None,
        nonlinearity: LocalNonlinearity::pointwise(n, |_, s| -s * s * s),
        b,
        c: out,
        s0: DVector::zeros(n),
        input: InputSignal::scalar(move |t| amp * ((std::f64::consts::PI * t).sin() + 1.0)),
        coupling: None,
        infer_quadratic: cfg.infer_quadratic,
    })
}
