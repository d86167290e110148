//! Dormand–Prince 5(4) with PI step control and the classic fourth-order
//! continuous extension for output between steps.

use super::{IntegratorSpec, OdeSystem, Sampler};
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

pub(super) fn run<S: OdeSystem + ?Sized>(
    sys: &S,
    s0: &[f64],
    times: &[f64],
    spec: &IntegratorSpec,
    out: &mut Sampler,
) -> Result<()> {
    let n = sys.dim();
    let t_end = *times.last().unwrap();
    let mut t = times[0];
    let mut y = s0.to_vec();
    let mut st = Stages {
        k: std::array::from_fn(|_| vec![0.0; n]),
        tmp: vec![0.0; n],
        y_new: vec![0.0; n],
        err: vec![0.0; n],
    };
    let mut next_out = 1;
    if next_out == times.len() {
        return Ok(());
    }
    let wrap = |t: f64, e: Error| match e {
        e @ Error::Diverged { .. } => e,
        e => Error::Integration {
            last_good_time: t,
            reason: e.to_string(),
        },
    };

    sys.rhs(t, &y, &mut st.k[0]).map_err(|e| wrap(t, e))?;
    let mut h = initial_step(sys, t, &y, &st.k[0], spec, t_end - t).map_err(|e| wrap(t, e))?;
    let mut fac_old = 1e-4_f64;
    let mut steps = 0usize;
    let mut dense = vec![vec![0.0; n]; 5];
    let mut last_rhs_error: Option<Error> = None;

    while next_out < times.len() {
        steps += 1;
        if steps > spec.max_steps {
            return Err(Error::Integration {
                last_good_time: t,
                reason: format!("exceeded {} steps", spec.max_steps),
            });
        }
        if t_end - t <= 16.0 * f64::EPSILON * t_end.abs() {
            while next_out < times.len() {
                out.push(&y);
                next_out += 1;
            }
            break;
        }
        h = h.min(spec.max_step).min(t_end - t);
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1e-300);
        if h < h_min {
            return Err(match last_rhs_error {
                Some(e) => wrap(t, e),
                None => Error::Integration {
                    last_good_time: t,
                    reason: format!("step size underflow (h = {h:.3e})"),
                },
            });
        }

        match attempt(sys, t, h, &y, &mut st) {
            Ok(()) => {}
            Err(e) => {
                // stage failures (e.g. nonlinearity domain) count as rejections
                last_rhs_error = Some(e);
                h *= 0.25;
                continue;
            }
        }

        let mut acc = 0.0;
        for i in 0..n {
            let sc = spec.atol + spec.rtol * y[i].abs().max(st.y_new[i].abs());
            let r = st.err[i] / sc;
            acc += r * r;
        }
        let err = (acc / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }

        let fac11 = err.powf(EXPO);
        if err <= 1.0 {
            last_rhs_error = None;
            let mut fac = fac11 / fac_old.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);
            let t_new = if t + h >= t_end { t_end } else { t + h };

            // dense output coefficients
            for i in 0..n {
                let ydiff = st.y_new[i] - y[i];
                let bspl = h * st.k[0][i] - ydiff;
                dense[0][i] = y[i];
                dense[1][i] = ydiff;
                dense[2][i] = bspl;
                dense[3][i] = ydiff - h * st.k[6][i] - bspl;
                dense[4][i] = h
                    * (D1 * st.k[0][i]
                        + D3 * st.k[2][i]
                        + D4 * st.k[3][i]
                        + D5 * st.k[4][i]
                        + D6 * st.k[5][i]
                        + D7 * st.k[6][i]);
            }
            while next_out < times.len() && times[next_out] <= t_new {
                if times[next_out] == t_new {
                    out.push(&st.y_new);
                } else {
                    let th = (times[next_out] - t) / h;
                    let th1 = 1.0 - th;
                    for i in 0..n {
                        st.tmp[i] = dense[0][i]
                            + th * (dense[1][i]
                                + th1 * (dense[2][i] + th * (dense[3][i] + th1 * dense[4][i])));
                    }
                    out.push(&st.tmp);
                }
                next_out += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut st.y_new);
            // FSAL
            let (first, rest) = st.k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            h /= fac;
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }
    Ok(())
}

fn attempt<S: OdeSystem + ?Sized>(sys: &S, t: f64, h: f64, y: &[f64], st: &mut Stages) -> Result<()> {
    let n = y.len();
    let Stages { k, tmp, y_new, err } = st;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    sys.rhs(t + C2 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    sys.rhs(t + C3 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    sys.rhs(t + C4 * h, tmp, k4)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    sys.rhs(t + C5 * h, tmp, k5)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    sys.rhs(t + h, tmp, k6)?;
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    sys.rhs(t + h, y_new, k7)?;
    for i in 0..n {
        err[i] = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    Ok(())
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    spec: &IntegratorSpec,
    span: f64,
) -> Result<f64> {
    let n = y.len();
    let wnorm = |v: &[f64]| {
        let acc: f64 = v
            .iter()
            .zip(y)
            .map(|(vi, yi)| {
                let r = vi / (spec.atol + spec.rtol * yi.abs());
                r * r
            })
            .sum();
        (acc / n.max(1) as f64).sqrt()
    };
    let d0 = wnorm(y);
    let d1 = wnorm(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(spec.max_step).min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(yi, fi)| yi + h0 * fi).collect();
    let mut f1 = vec![0.0; n];
    if sys.rhs(t + h0, &y1, &mut f1).is_err() {
        return Ok(h0 * 1e-3);
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = wnorm(&diff) / h0;
    let big = d1.max(d2);
    let h1 = if big <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / big).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(spec.max_step).min(span))
}
