//! In-memory experiment steps shared by the commands and the test suites.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{uniform_grid, Trajectory};
use crate::models::{self, FullOrderModel};
use crate::pod::PodMode;
use crate::romsim::{compare, simulate_rom, ErrorReport, NonlinearTerm, ReducedModel, RomKind, RomRun, RunStatus};

use super::build::{assemble_rom, factorize, nonlinear_term, Factorizations};
use super::recipe::{ExperimentConfig, RomRecipe};

/// Full-order runs of one experiment: the training window and the reference
/// over the comparison horizon. The training window is a prefix of the reference.
#[derive(Debug, Clone)]
pub struct FomRun {
    pub model: FullOrderModel,
    pub train: Trajectory,
    pub reference: Trajectory,
}

/// Leading columns of `traj` with `t <= t_end`.
pub fn prefix(traj: &Trajectory, t_end: f64) -> Result<Trajectory> {
    let k = traj.times.iter().take_while(|&&t| t <= t_end * (1.0 + 1e-12) + 1e-12).count();
    Trajectory::new(
        traj.times[..k].to_vec(),
        traj.states.columns(0, k).into_owned(),
        traj.inputs.columns(0, k).into_owned(),
    )
}

/// Simulates the full-order model on `0, dt, ..., max(T_train, horizon)`.
pub fn run_fom(cfg: &ExperimentConfig, horizon: f64) -> Result<FomRun> {
    let model = models::build(&cfg.benchmark)?;
    let t_end = horizon.max(cfg.benchmark.t_train());
    let times = uniform_grid(0.0, t_end, cfg.benchmark.dt());
    let reference = model.simulate(&times, &cfg.fom_integrator)?;
    let train = prefix(&reference, cfg.benchmark.t_train())?;
    Ok(FomRun { model, train, reference })
}

/// Simulates a reduced model on the reference grid and scores it.
pub fn evaluate(
    rom: &ReducedModel,
    model: &FullOrderModel,
    reference: &Trajectory,
    recipe: &RomRecipe,
) -> Result<(RomRun, ErrorReport)> {
    let run = simulate_rom(rom, model, &reference.times, &recipe.integrator, recipe.divergence_bound)?;
    let report = compare(reference, rom, &run, &model.c)?;
    Ok((run, report))
}

/// One (method, r) entry of a sweep. Build or simulation failures are
/// recorded in `status` and `message`; metrics are `NaN` when unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: RomKind,
    pub r: usize,
    pub r_total: usize,
    pub deim_points: usize,
    pub status: String,
    pub relative_state_error: f64,
    pub mean_relative_output_error: Vec<f64>,
    pub max_abs_output_error: f64,
    pub unstable_from: Option<f64>,
    pub residual_norm: Option<f64>,
    pub condition_number: Option<f64>,
    pub message: String,
}

impl SweepRow {
    fn failed(method: RomKind, r: usize, outputs: usize, e: &Error) -> Self {
        Self {
            method,
            r,
            r_total: 0,
            deim_points: 0,
            status: "error".into(),
            relative_state_error: f64::NAN,
            mean_relative_output_error: vec![f64::NAN; outputs],
            max_abs_output_error: f64::NAN,
            unstable_from: None,
            residual_norm: None,
            condition_number: None,
            message: e.to_string(),
        }
    }
}

fn sweep_one(
    fom: &FomRun,
    f: &Factorizations,
    deim: Option<&(DMatrix<f64>, nalgebra::DVector<f64>)>,
    recipe: &RomRecipe,
    method: RomKind,
    r: usize,
) -> Result<SweepRow> {
    let model = &fom.model;
    let basis = f.basis(model, PodMode::Rank(r))?;
    let nl = nonlinear_term(model, &basis, deim)?;
    let rom = assemble_rom(method, model, &fom.train, &basis, nl, recipe)?;
    let (_, report) = evaluate(&rom, model, &fom.reference, recipe)?;
    let message = match &report.status {
        RunStatus::Failed { reason } => reason.clone(),
        _ => String::new(),
    };
    Ok(SweepRow {
        method,
        r,
        r_total: rom.r(),
        deim_points: match &rom.nonlinear {
            NonlinearTerm::Deim(op) => op.m(),
            _ => 0,
        },
        status: report.status.name().into(),
        relative_state_error: report.relative_state_error,
        mean_relative_output_error: report.mean_relative_output_error.clone(),
        max_abs_output_error: report.max_abs_output_error,
        unstable_from: report.unstable_from(),
        residual_norm: rom.residual_norm,
        condition_number: rom.condition_number,
        message,
    })
}

/// Builds and scores a reduced model for every `(method, r)`, reusing one
/// factorization of the snapshots. `r` is per field for block bases.
/// `jobs > 1` runs entries on a thread pool; results keep input order.
pub fn sweep(
    fom: &FomRun,
    nonlinear: Option<&DMatrix<f64>>,
    recipe: &RomRecipe,
    methods: &[RomKind],
    ranks: &[usize],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    recipe.validate()?;
    let f = factorize(&fom.model, &fom.train, nonlinear, recipe)?;
    let deim = match recipe.deim {
        Some(mode) => f.deim_basis(mode)?,
        None => None,
    };
    let tasks: Vec<(RomKind, usize)> = methods
        .iter()
        .flat_map(|&m| ranks.iter().map(move |&r| (m, r)))
        .collect();
    let p = fom.model.n_outputs();
    let run = |&(m, r): &(RomKind, usize)| {
        sweep_one(fom, &f, deim.as_ref(), recipe, m, r).unwrap_or_else(|e| {
            log::warn!("{m} r={r}: {e}");
            SweepRow::failed(m, r, p, &e)
        })
    };
    if jobs <= 1 {
        return Ok(tasks.iter().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(|| tasks.par_iter().map(run).collect()))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Sweep table, one row per `(method, r)`.
pub fn sweep_csv(rows: &[SweepRow], outputs: usize) -> String {
    let mut out = String::from(
        "# schema=1 relative_state_error=||S - V S_rom||_F/||S||_F mean_rel_err=time mean of |y - y_rom| / max_t |y|\n",
    );
    out.push_str("method,r,r_total,deim_points,status,relative_state_error");
    for i in 0..outputs {
        out.push_str(&format!(",mean_rel_err_y{i}"));
    }
    out.push_str(",max_abs_output_error,unstable_from_s,residual_norm,condition_number,message\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            row.method,
            row.r,
            row.r_total,
            row.deim_points,
            row.status,
            num(row.relative_state_error)
        ));
        for i in 0..outputs {
            out.push(',');
            out.push_str(&row.mean_relative_output_error.get(i).copied().map(num).unwrap_or_default());
        }
        let msg: String = row.message.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
        out.push_str(&format!(
            ",{},{},{},{},{msg}\n",
            num(row.max_abs_output_error),
            opt(row.unstable_from),
            opt(row.residual_norm),
            opt(row.condition_number)
        ));
    }
    out
}

/// Single-run summary table.
pub fn summary_csv(rom: &ReducedModel, report: &ErrorReport, horizon: f64) -> String {
    let p = report.y.nrows();
    let mut out = String::from("# schema=1 mean_rel_err=time mean of |y - y_rom| / max_t |y|\n");
    out.push_str("method,r,deim_points,status,horizon_s,reached_s,relative_state_error,max_abs_output_error");
    for i in 0..p {
        out.push_str(&format!(",mean_rel_err_y{i}"));
    }
    out.push_str(",unstable_from_s\n");
    let deim_points = match &rom.nonlinear {
        NonlinearTerm::Deim(op) => op.m(),
        _ => 0,
    };
    let reached = report.reached().checked_sub(1).map_or(f64::NAN, |k| report.times[k]);
    out.push_str(&format!(
        "{},{},{deim_points},{},{},{},{},{}",
        rom.kind,
        rom.r(),
        report.status.name(),
        num(horizon),
        num(reached),
        num(report.relative_state_error),
        num(report.max_abs_output_error)
    ));
    for e in &report.mean_relative_output_error {
        out.push_str(&format!(",{}", num(*e)));
    }
    out.push_str(&format!(",{}\n", opt(report.unstable_from())));
    out
}
