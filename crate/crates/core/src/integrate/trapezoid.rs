//! Fixed-step implicit trapezoidal rule with Newton iteration.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::banded::{reverse_cuthill_mckee, BandedLu};
use super::{max_abs, IntegratorSpec, Jacobian, OdeSystem, Sampler};
use crate::error::{Error, Result};

const MAX_HALVINGS: u32 = 12;

enum Factored {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Banded(BandedLu),
}

struct NewtonSolver {
    perm: Option<Vec<usize>>,
    work: Vec<f64>,
}

impl NewtonSolver {
    /// Factors `I - gamma * J`.
    fn factor(&mut self, jac: Jacobian, gamma: f64) -> Result<Factored> {
        match jac {
            Jacobian::Dense(j) => {
                let n = j.nrows();
                let m = DMatrix::identity(n, n) - j * gamma;
                let lu = m.lu();
                if !lu.is_invertible() {
                    return Err(Error::RankDeficient("singular Newton matrix".into()));
                }
                Ok(Factored::Dense(lu))
            }
            Jacobian::Sparse(j) => {
                let n = j.nrows();
                let mut coo = CooMatrix::new(n, n);
                for (r, c, &v) in j.triplet_iter() {
                    coo.push(r, c, -gamma * v);
                }
                for i in 0..n {
                    coo.push(i, i, 1.0);
                }
                let m = CsrMatrix::from(&coo);
                let perm = self.perm.get_or_insert_with(|| reverse_cuthill_mckee(&m));
                let lu = BandedLu::factor(&m, perm)?;
                // fall back to a dense solve if reordering did not produce a band
                let (kl, ku) = lu.bandwidth();
                if 3 * (2 * kl + ku) > 2 * n && n > 64 {
                    let mut dense = DMatrix::zeros(n, n);
                    for (r, c, &v) in m.triplet_iter() {
                        dense[(r, c)] += v;
                    }
                    return Ok(Factored::Dense(dense.lu()));
                }
                Ok(Factored::Banded(lu))
            }
        }
    }

    fn solve(&mut self, f: &Factored, rhs: &mut [f64]) -> Result<()> {
        match f {
            Factored::Dense(lu) => {
                let mut b = DVector::from_column_slice(rhs);
                if !lu.solve_mut(&mut b) {
                    return Err(Error::RankDeficient("singular Newton matrix".into()));
                }
                rhs.copy_from_slice(b.as_slice());
            }
            Factored::Banded(lu) => {
                lu.solve_in_place(self.perm.as_ref().unwrap(), rhs, &mut self.work);
            }
        }
        Ok(())
    }
}

pub(super) fn run<S: OdeSystem + ?Sized>(
    sys: &S,
    s0: &[f64],
    times: &[f64],
    spec: &IntegratorSpec,
    out: &mut Sampler,
) -> Result<()> {
    let n = sys.dim();
    let mut solver = NewtonSolver {
        perm: None,
        work: Vec::with_capacity(n),
    };
    let mut y = s0.to_vec();
    let mut fy = vec![0.0; n];
    let mut t = times[0];
    sys.rhs(t, &y, &mut fy).map_err(|e| wrap(t, e))?;
    let mut steps = 0usize;
    let mut first = true;

    for &t_out in &times[1..] {
        let t0 = t;
        let span = t_out - t;
        let sub = (span / spec.max_step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for k in 0..sub {
            let t_next = if k + 1 == sub {
                t_out
            } else {
                t0 + span * (k + 1) as f64 / sub as f64
            };
            let h = t_next - t;
            steps += 1;
            if steps > spec.max_steps {
                return Err(Error::Integration {
                    last_good_time: t,
                    reason: format!("exceeded {} steps", spec.max_steps),
                });
            }
            if first && spec.startup_euler_steps > 0 {
                let m = spec.startup_euler_steps;
                for j in 0..m {
                    let ta = t + h * j as f64 / m as f64;
                    let tb = if j + 1 == m { t_next } else { t + h * (j + 1) as f64 / m as f64 };
                    advance(sys, &mut solver, spec, ta, tb, 1.0, &mut y, &mut fy, 0)?;
                }
            } else {
                advance(sys, &mut solver, spec, t, t_next, 0.5, &mut y, &mut fy, 0)?;
            }
            first = false;
            t = t_next;
        }
        out.push(&y);
    }
    Ok(())
}

fn wrap(t: f64, e: Error) -> Error {
    match e {
        e @ (Error::Diverged { .. } | Error::Integration { .. }) => e,
        e => Error::Integration {
            last_good_time: t,
            reason: e.to_string(),
        },
    }
}

/// One theta-method step from `ta` to `tb` (theta = 1/2 trapezoidal,
/// theta = 1 implicit Euler). Halves the step on Newton failure.
#[allow(clippy::too_many_arguments)]
fn advance<S: OdeSystem + ?Sized>(
    sys: &S,
    solver: &mut NewtonSolver,
    spec: &IntegratorSpec,
    ta: f64,
    tb: f64,
    theta: f64,
    y: &mut Vec<f64>,
    fy: &mut Vec<f64>,
    depth: u32,
) -> Result<()> {
    match newton_step(sys, solver, spec, ta, tb, theta, y, fy) {
        Ok((z, fz)) => {
            *y = z;
            *fy = fz;
            Ok(())
        }
        Err(e) if depth < MAX_HALVINGS && !matches!(e, Error::Diverged { .. }) => {
            let tm = 0.5 * (ta + tb);
            advance(sys, solver, spec, ta, tm, theta, y, fy, depth + 1)?;
            advance(sys, solver, spec, tm, tb, theta, y, fy, depth + 1)
        }
        Err(e) => Err(wrap(ta, e)),
    }
}

#[allow(clippy::too_many_arguments)]
fn newton_step<S: OdeSystem + ?Sized>(
    sys: &S,
    solver: &mut NewtonSolver,
    spec: &IntegratorSpec,
    ta: f64,
    tb: f64,
    theta: f64,
    y: &[f64],
    fy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let h = tb - ta;
    let gamma = theta * h;
    // explicit part of the theta method
    let base: Vec<f64> = y
        .iter()
        .zip(fy)
        .map(|(yi, fi)| yi + (1.0 - theta) * h * fi)
        .collect();
    let mut z = y.to_vec();
    let mut fz = vec![0.0; n];
    let mut g = vec![0.0; n];

    for refresh in 0..2 {
        let fac = solver.factor(sys.jacobian(tb, &z)?, gamma)?;
        let mut prev = f64::INFINITY;
        for _ in 0..spec.newton_max_iters {
            sys.rhs(tb, &z, &mut fz)?;
            for i in 0..n {
                g[i] = base[i] + gamma * fz[i] - z[i];
            }
            solver.solve(&fac, &mut g)?;
            for i in 0..n {
                z[i] += g[i];
            }
            let dn = max_abs(&g);
            if !dn.is_finite() {
                return Err(Error::Integration {
                    last_good_time: ta,
                    reason: "Newton iterate is not finite".into(),
                });
            }
            if dn <= spec.newton_tol * (1.0 + max_abs(&z)) {
                sys.rhs(tb, &z, &mut fz)?;
                return Ok((z, fz));
            }
            // diverging modified Newton: refresh the Jacobian
            if dn > 2.0 * prev && refresh == 0 {
                break;
            }
            prev = dn;
        }
    }
    Err(Error::Integration {
        last_good_time: ta,
        reason: format!("Newton iteration did not converge on [{ta}, {tb}]"),
    })
}
