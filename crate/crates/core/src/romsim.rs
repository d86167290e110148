//! Reduced models, their simulation, and error metrics against full-order
//! trajectories. Learned and intrusive models share every code path here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::deim::DeimOperator;
use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate_partial, IntegratorSpec, OdeSystem, Trajectory};
use crate::kronops::CompressedQuadraticOp;
use crate::models::{CoupledStructure, FullOrderModel};
use crate::pod::Basis;

/// Default state-norm bound beyond which a reduced simulation is declared divergent.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RomKind {
    Intrusive,
    Learned,
}

impl std::fmt::Display for RomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RomKind::Intrusive => "intrusive",
            RomKind::Learned => "learned",
        })
    }
}

impl std::str::FromStr for RomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrusive" => Ok(RomKind::Intrusive),
            "learned" => Ok(RomKind::Learned),
            _ => Err(Error::Config(format!("unknown ROM method '{s}'"))),
        }
    }
}

/// How the reduced model evaluates `Vᵀ f(t, V ŝ)`.
#[derive(Debug, Clone)]
pub enum NonlinearTerm {
    None,
    /// Lift to the full space, evaluate all of `f`, project back.
    ExactLift,
    Deim(DeimOperator),
}

#[derive(Debug, Clone)]
pub enum Structure {
    Monolithic,
    /// Block basis with transported and exchange-only fields.
    Coupled(CoupledStructure),
}

/// Reduced operators plus fit diagnostics when they were learned.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub kind: RomKind,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: Option<CompressedQuadraticOp>,
    pub nonlinear: NonlinearTerm,
    pub basis: Basis,
    /// Assembled basis matrix.
    pub v: DMatrix<f64>,
    pub shat0: DVector<f64>,
    pub structure: Structure,
    pub residual_norm: Option<f64>,
    pub condition_number: Option<f64>,
}

impl ReducedModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: RomKind,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        h: Option<CompressedQuadraticOp>,
        nonlinear: NonlinearTerm,
        basis: Basis,
        shat0: DVector<f64>,
        structure: Structure,
    ) -> Result<Self> {
        let r = basis.width();
        check_dim("reduced A rows", r, a.nrows())?;
        check_dim("reduced A columns", r, a.ncols())?;
        check_dim("reduced B rows", r, b.nrows())?;
        check_dim("reduced initial state", r, shat0.len())?;
        if let Some(h) = &h {
            check_dim("reduced H rows", r, h.rows())?;
            check_dim("reduced H dimension", r, h.dim())?;
        }
        if let NonlinearTerm::Deim(op) = &nonlinear {
            check_dim("DEIM projection rows", r, op.projection_factor.nrows())?;
            check_dim("DEIM lift columns", r, op.lift_rows.ncols())?;
        }
        let v = basis.matrix();
        Ok(Self {
            kind,
            a,
            b,
            h,
            nonlinear,
            basis,
            v,
            shat0,
            structure,
            residual_norm: None,
            condition_number: None,
        })
    }

    pub fn r(&self) -> usize {
        self.a.nrows()
    }

    pub fn label(&self) -> String {
        let nl = match self.nonlinear {
            NonlinearTerm::None => "",
            NonlinearTerm::ExactLift => "+lift",
            NonlinearTerm::Deim(_) => "+deim",
        };
        format!("{} r={}{nl}", self.kind, self.r())
    }

    /// Reduced right-hand side `Â ŝ + Ĥ (ŝ ⊗' ŝ) + B̂ u + f̂(t, ŝ)`.
    pub fn rhs_into(&self, model: &FullOrderModel, t: f64, shat: &[f64], out: &mut [f64]) -> Result<()> {
        let r = self.r();
        check_dim("reduced state", r, shat.len())?;
        match &self.nonlinear {
            NonlinearTerm::None => out.fill(0.0),
            NonlinearTerm::ExactLift => {
                let s = &self.v * DVector::from_column_slice(shat);
                let f = model.eval_nonlinear(t, s.as_slice())?;
                let p = self.v.tr_mul(&f);
                out.copy_from_slice(p.as_slice());
            }
            NonlinearTerm::Deim(op) => op.eval(&model.nonlinearity, t, shat, out)?,
        }
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.a.row(i);
            *o += row.iter().zip(shat).map(|(a, s)| a * s).sum::<f64>();
        }
        if let Some(h) = &self.h {
            h.apply_add(shat, out)?;
        }
        let u = model.input.eval(t);
        for (j, &uj) in u.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.b.column(j).iter()) {
                *o += b * uj;
            }
        }
        Ok(())
    }

    pub fn rhs(&self, model: &FullOrderModel, t: f64, shat: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.r());
        self.rhs_into(model, t, shat, out.as_mut_slice())?;
        Ok(out)
    }

    /// Full states `V Ŝ`.
    pub fn lift(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.basis.lift(states)
    }
}

struct RomSystem<'a> {
    rom: &'a ReducedModel,
    model: &'a FullOrderModel,
    bound: f64,
}

impl OdeSystem for RomSystem<'_> {
    fn dim(&self) -> usize {
        self.rom.r()
    }

    fn rhs(&self, t: f64, s: &[f64], out: &mut [f64]) -> Result<()> {
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm <= self.bound) {
            return Err(Error::Diverged { time: t, norm });
        }
        self.rom.rhs_into(self.model, t, s, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { time: f64, norm: f64 },
    Failed { reason: String },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::Failed { .. } => "failed",
        }
    }
}

/// Reduced trajectory; `states` holds only the columns reached before a
/// divergence or failure.
#[derive(Debug, Clone)]
pub struct RomRun {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub status: RunStatus,
}

impl RomRun {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Number of requested times that were reached.
    pub fn reached(&self) -> usize {
        self.states.ncols()
    }
}

/// Integrates the reduced model on `times`. Divergence beyond `bound` and
/// integration failures are reported in the returned status.
pub fn simulate_rom(
    rom: &ReducedModel,
    model: &FullOrderModel,
    times: &[f64],
    spec: &IntegratorSpec,
    bound: f64,
) -> Result<RomRun> {
    let sys = RomSystem { rom, model, bound };
    let part = integrate_partial(&sys, &rom.shat0, times, spec).map_err(|e| e.labeled(rom.label()))?;
    let status = match part.failure {
        None => RunStatus::Completed,
        Some(e) => match e.root() {
            Error::Diverged { time, norm } => RunStatus::Diverged {
                time: *time,
                norm: *norm,
            },
            _ => {
                log::warn!("{}: {e}", rom.label());
                RunStatus::Failed { reason: e.to_string() }
            }
        },
    };
    Ok(RomRun {
        times: times.to_vec(),
        states: part.states,
        status,
    })
}

/// Reduced-model accuracy against a full-order trajectory on the same grid.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub times: Vec<f64>,
    /// `C S`, `p × K`.
    pub y: DMatrix<f64>,
    /// `C V Ŝ` on the reached columns, `p × reached`.
    pub yhat: DMatrix<f64>,
    /// `|y - ŷ|` on the reached columns.
    pub abs_output_error: DMatrix<f64>,
    /// `‖S - V Ŝ‖_F / ‖S‖_F` over the reached columns.
    pub relative_state_error: f64,
    /// Per output: time mean of `|y - ŷ| / max_t |y|`.
    pub mean_relative_output_error: Vec<f64>,
    pub max_abs_output_error: f64,
    pub status: RunStatus,
}

impl ErrorReport {
    pub fn reached(&self) -> usize {
        self.yhat.ncols()
    }

    /// Time from which the report treats the reduced model as unstable.
    pub fn unstable_from(&self) -> Option<f64> {
        match self.status {
            RunStatus::Completed => None,
            _ => self.times.get(self.reached()).copied(),
        }
    }
}

pub fn compare(fom: &Trajectory, rom: &ReducedModel, run: &RomRun, c: &DMatrix<f64>) -> Result<ErrorReport> {
    check_dim("compared time grids", fom.len(), run.times.len())?;
    if fom.times.iter().zip(&run.times).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
        return Err(Error::InvalidInput("full and reduced trajectories use different time grids".into()));
    }
    check_dim("output map columns", fom.states.nrows(), c.ncols())?;
    let k = run.reached();
    let lifted = rom.lift(&run.states)?;
    let s = fom.states.columns(0, k);
    let denom = s.norm();
    let relative_state_error = if denom > 0.0 { (s - &lifted).norm() / denom } else { lifted.norm() };
    let y = c * &fom.states;
    let yhat = c * &lifted;
    let abs = (y.columns(0, k) - &yhat).abs();
    let mean_rel = (0..y.nrows())
        .map(|i| {
            let scale = y.row(i).amax();
            if k == 0 || scale == 0.0 {
                0.0
            } else {
                abs.row(i).sum() / (k as f64 * scale)
            }
        })
        .collect();
    Ok(ErrorReport {
        times: fom.times.clone(),
        max_abs_output_error: if k == 0 { 0.0 } else { abs.max() },
        y,
        yhat,
        abs_output_error: abs,
        relative_state_error,
        mean_relative_output_error: mean_rel,
        status: run.status.clone(),
    })
}

impl ErrorReport {
    /// Per-time CSV: one row per requested time, outputs and errors;
    /// times after an instability carry the `unstable` flag and empty fields.
    pub fn to_csv(&self, label: &str) -> String {
        let p = self.y.nrows();
        let mut out = String::from("# schema=1 rom=");
        out.push_str(label);
        out.push('\n');
        out.push_str("time_s");
        for i in 0..p {
            out.push_str(&format!(",y{i}_fom,y{i}_rom,abs_err{i}"));
        }
        out.push_str(",stable\n");
        for (j, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:?}"));
            for i in 0..p {
                if j < self.reached() {
                    out.push_str(&format!(
                        ",{:?},{:?},{:?}",
                        self.y[(i, j)],
                        self.yhat[(i, j)],
                        self.abs_output_error[(i, j)]
                    ));
                } else {
                    out.push_str(&format!(",{:?},,", self.y[(i, j)]));
                }
            }
            out.push_str(if j < self.reached() { ",1\n" } else { ",0\n" });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{InputSignal, LocalNonlinearity};
    use crate::pod::{PodBasis, PodMode};
    use nalgebra_sparse::CsrMatrix;

    fn linear_model(n: usize) -> FullOrderModel {
        let mut coo = nalgebra_sparse::CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, -1.0 - i as f64 * 0.1);
        }
        FullOrderModel {
            name: "lin".into(),
            field_names: vec!["s".into()],
            a: CsrMatrix::from(&coo),
            h: None,
            nonlinearity: LocalNonlinearity::zero(n),
            b: DMatrix::from_element(n, 1, 1.0),
            c: DMatrix::from_element(1, n, 1.0 / n as f64),
            s0: DVector::zeros(n),
            input: InputSignal::scalar(|t| t.sin()),
            coupling: None,
            infer_quadratic: false,
        }
    }

    fn identity_basis(n: usize) -> Basis {
        Basis::Single(PodBasis {
            v: DMatrix::identity(n, n),
            singular_values: DVector::from_element(n, 1.0),
            residual: 0.0,
            mode: PodMode::Rank(n),
        })
    }

    #[test]
    fn zero_rom_stays_at_zero() {
        let mut model = linear_model(3);
        model.input = InputSignal::constant(vec![0.0]);
        let rom = ReducedModel::new(
            RomKind::Learned,
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 1),
            None,
            NonlinearTerm::None,
            identity_basis(3),
            DVector::zeros(3),
            Structure::Monolithic,
        )
        .unwrap();
        let run = simulate_rom(&rom, &model, &[0.0, 0.5, 1.0], &IntegratorSpec::default(), 1e6).unwrap();
        assert!(run.completed());
        assert_eq!(run.states.amax(), 0.0);
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let model = linear_model(2);
        let rom = ReducedModel::new(
            RomKind::Learned,
            DMatrix::identity(2, 2) * 5.0,
            DMatrix::zeros(2, 1),
            None,
            NonlinearTerm::None,
            identity_basis(2),
            DVector::from_element(2, 1.0),
            Structure::Monolithic,
        )
        .unwrap();
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let run = simulate_rom(&rom, &model, &times, &IntegratorSpec::default(), 1e3).unwrap();
        let RunStatus::Diverged { time, .. } = run.status else {
            panic!("expected divergence, got {:?}", run.status)
        };
        // ‖ŝ‖ = √2 e^{5t} crosses 1e3 near t = 1.31
        assert!((time - (1e3f64 / 2f64.sqrt()).ln() / 5.0).abs() < 0.05);
        assert!(run.reached() < times.len());
        let fom = Trajectory::new(times.clone(), DMatrix::zeros(2, times.len()), DMatrix::zeros(1, times.len())).unwrap();
        let rep = compare(&fom, &rom, &run, &model.c).unwrap();
        assert_eq!(rep.unstable_from(), Some(times[run.reached()]));
        let csv = rep.to_csv("x");
        assert!(csv.lines().last().unwrap().ends_with(",0"));
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let model = linear_model(4);
        let rom = ReducedModel::new(
            RomKind::Intrusive,
            DMatrix::zeros(4, 4),
            DMatrix::zeros(4, 1),
            None,
            NonlinearTerm::None,
            identity_basis(4),
            DVector::zeros(4),
            Structure::Monolithic,
        )
        .unwrap();
        let times = vec![0.0, 1.0, 2.0];
        let s = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let fom = Trajectory::new(times.clone(), s.clone(), DMatrix::zeros(1, 3)).unwrap();
        let run = RomRun {
            times,
            states: s,
            status: RunStatus::Completed,
        };
        let rep = compare(&fom, &rom, &run, &model.c).unwrap();
        assert_eq!(rep.relative_state_error, 0.0);
        assert_eq!(rep.max_abs_output_error, 0.0);
        assert_eq!(rep.mean_relative_output_error, vec![0.0]);
    }
}
