//! Time integration of full and reduced models, and derivative estimation
//! from sampled trajectories.

mod banded;
mod derivative;
mod rk45;
mod trapezoid;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use banded::{reverse_cuthill_mckee, BandedLu};
pub use derivative::estimate_derivatives;

/// A first-order ODE system `ds/dt = g(t, s)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()>;

    /// Jacobian `∂g/∂s`. The default is a dense forward difference.
    fn jacobian(&self, t: f64, s: &[f64]) -> Result<Jacobian> {
        dense_fd_jacobian(self, t, s).map(Jacobian::Dense)
    }
}

pub enum Jacobian {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix<f64>),
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, s, out)
    }
}

pub(crate) fn dense_fd_jacobian<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    s: &[f64],
) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let mut base = vec![0.0; n];
    sys.rhs(t, s, &mut base)?;
    let mut pert = s.to_vec();
    let mut out = vec![0.0; n];
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * s[j].abs().max(1.0);
        pert[j] = s[j] + h;
        sys.rhs(t, &pert, &mut out)?;
        pert[j] = s[j];
        for i in 0..n {
            jac[(i, j)] = (out[i] - base[i]) / h;
        }
    }
    Ok(jac)
}

/// Sampled trajectory of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        check_dim("trajectory state columns", times.len(), states.ncols())?;
        check_dim("trajectory input columns", times.len(), inputs.ncols())?;
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("trajectory times must be strictly increasing".into()));
        }
        if states.iter().chain(inputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("trajectory contains non-finite entries".into()));
        }
        Ok(Self {
            times,
            states,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Uniform spacing of the time grid, if it has one.
    pub fn uniform_step(&self) -> Option<f64> {
        uniform_step(&self.times)
    }

    /// Keeps every `stride`-th sample, starting with the first.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let idx: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        Trajectory {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            states: self.states.select_columns(&idx),
            inputs: self.inputs.select_columns(&idx),
        }
    }
}

pub fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-9 * dt.abs().max(f64::MIN_POSITIVE) + 1e-12 * times[0].abs();
    times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= tol.max(1e-10 * dt))
        .then_some(dt)
}

/// Uniform grid `t0, t0 + dt, ..., t_end` with the endpoint included.
pub fn uniform_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let steps = ((t_end - t0) / dt).round() as usize;
    (0..=steps).map(|k| t0 + k as f64 * dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Embedded Dormand–Prince 5(4) with dense output.
    RungeKutta45,
    /// Fixed-step implicit trapezoidal rule solved by Newton iteration.
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the internal step; for the trapezoidal rule this is the step.
    #[serde(with = "unbounded")]
    pub max_step: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Implicit Euler substeps replacing the first trapezoidal step, to damp
    /// stiff transients from inconsistent initial data.
    pub startup_euler_steps: usize,
    /// Hard cap on accepted plus rejected steps.
    pub max_steps: usize,
}

/// Serializes an infinite bound as `null`, which JSON can represent.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self::rk45(1e-10, 1e-10)
    }
}

impl IntegratorSpec {
    pub fn rk45(rtol: f64, atol: f64) -> Self {
        Self {
            method: Method::RungeKutta45,
            rtol,
            atol,
            max_step: f64::INFINITY,
            newton_tol: 1e-12,
            newton_max_iters: 12,
            startup_euler_steps: 0,
            max_steps: 50_000_000,
        }
    }

    pub fn trapezoidal(step: f64) -> Self {
        Self {
            method: Method::Trapezoidal,
            rtol: 1e-10,
            atol: 1e-10,
            max_step: step,
            newton_tol: 1e-12,
            newton_max_iters: 12,
            startup_euler_steps: 2,
            max_steps: 50_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.newton_tol > 0.0) {
            return Err(Error::Config("integrator tolerances must be positive".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        if self.method == Method::Trapezoidal && !self.max_step.is_finite() {
            return Err(Error::Config("trapezoidal integration needs a finite step".into()));
        }
        Ok(())
    }
}

/// Result of an integration that may have stopped early.
#[derive(Debug)]
pub struct PartialSolution {
    /// One column per requested time that was reached.
    pub states: DMatrix<f64>,
    pub failure: Option<Error>,
}

/// Integrates `sys` from `s0` and samples the solution at `times`.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    s0: &DVector<f64>,
    times: &[f64],
    spec: &IntegratorSpec,
) -> Result<DMatrix<f64>> {
    let sol = integrate_partial(sys, s0, times, spec)?;
    match sol.failure {
        None => Ok(sol.states),
        Some(e) => Err(e),
    }
}

/// Like [`integrate`] but returns the columns computed before a failure.
/// Precondition violations are still reported as `Err`.
pub fn integrate_partial<S: OdeSystem + ?Sized>(
    sys: &S,
    s0: &DVector<f64>,
    times: &[f64],
    spec: &IntegratorSpec,
) -> Result<PartialSolution> {
    spec.validate()?;
    check_dim("initial state", sys.dim(), s0.len())?;
    if times.is_empty() {
        return Err(Error::InvalidInput("no output times requested".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("output times must be strictly increasing".into()));
    }
    if s0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    let mut out = Sampler::new(sys.dim(), times.len());
    out.push(s0.as_slice());
    let failure = match spec.method {
        Method::RungeKutta45 => rk45::run(sys, s0.as_slice(), times, spec, &mut out),
        Method::Trapezoidal => trapezoid::run(sys, s0.as_slice(), times, spec, &mut out),
    }
    .err();
    Ok(PartialSolution {
        states: out.finish(),
        failure,
    })
}

pub(crate) struct Sampler {
    dim: usize,
    data: Vec<f64>,
}

impl Sampler {
    fn new(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * cap),
        }
    }

    pub(crate) fn push(&mut self, s: &[f64]) {
        self.data.extend_from_slice(s);
    }

    pub(crate) fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    fn finish(self) -> DMatrix<f64> {
        let cols = self.count();
        DMatrix::from_vec(self.dim, cols, self.data)
    }
}

#[inline]
pub(crate) fn max_abs(s: &[f64]) -> f64 {
    s.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) -> Result<()>> {
        FnSystem::new(1, |_t, s: &[f64], out: &mut [f64]| {
            out[0] = -s[0];
            Ok(())
        })
    }

    #[test]
    fn scalar_decay_both_methods() {
        let s0 = DVector::from_element(1, 1.0);
        let rk = integrate(&decay(), &s0, &[0.0, 1.0], &IntegratorSpec::rk45(1e-10, 1e-10)).unwrap();
        assert!((rk[(0, 1)] - (-1.0f64).exp()).abs() < 1e-8);
        let tr = integrate(&decay(), &s0, &[0.0, 0.5, 1.0], &IntegratorSpec::trapezoidal(1e-4)).unwrap();
        assert!((tr[(0, 2)] - (-1.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn diagonal_linear_system() {
        let sys = FnSystem::new(2, |_t, s: &[f64], out: &mut [f64]| {
            out[0] = -s[0];
            out[1] = -2.0 * s[1];
            Ok(())
        });
        let s0 = DVector::from_vec(vec![1.0, 1.0]);
        let x = integrate(&sys, &s0, &[0.0, 0.5], &IntegratorSpec::default()).unwrap();
        assert!((x[(0, 1)] - (-0.5f64).exp()).abs() < 1e-8);
        assert!((x[(1, 1)] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_grids() {
        let s0 = DVector::from_element(1, 1.0);
        let spec = IntegratorSpec::default();
        assert!(integrate(&decay(), &s0, &[0.0, 0.0], &spec).is_err());
        assert!(integrate(&decay(), &s0, &[], &spec).is_err());
        let mut bad = spec.clone();
        bad.rtol = 0.0;
        assert!(matches!(
            integrate(&decay(), &s0, &[0.0, 1.0], &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn failing_rhs_reports_last_good_time() {
        let sys = FnSystem::new(1, |t, s: &[f64], out: &mut [f64]| {
            if t > 0.55 {
                return Err(Error::Diverged { time: t, norm: s[0] });
            }
            out[0] = 1.0;
            Ok(())
        });
        let s0 = DVector::from_element(1, 0.0);
        let times = uniform_grid(0.0, 1.0, 0.1);
        let sol = integrate_partial(&sys, &s0, &times, &IntegratorSpec::default()).unwrap();
        assert!(sol.failure.is_some());
        assert!(sol.states.ncols() >= 5 && sol.states.ncols() <= 7);
    }

    #[test]
    fn uniform_grid_detection() {
        let g = uniform_grid(0.0, 10.0, 1e-3);
        assert_eq!(g.len(), 10001);
        assert!(uniform_step(&g).is_some());
        assert!(uniform_step(&[0.0, 1.0, 3.0]).is_none());
    }
}
