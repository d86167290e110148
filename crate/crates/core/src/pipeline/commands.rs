//! The command surface: each command reads its inputs, writes artifacts into
//! a fresh directory and records a manifest that can repeat the run.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{uniform_grid, Trajectory};
use crate::kronops::CompressedQuadraticOp;
use crate::models::{self, FullOrderModel};
use crate::pod::{Basis, BlockBasis, PodBasis, PodMode};
use crate::romsim::{NonlinearTerm, ReducedModel, RomKind, Structure};

use super::build::{build_rom, deim_operator};
use super::experiment::{evaluate, prefix, run_fom, summary_csv, sweep, sweep_csv, FomRun};
use super::io::{matrix_path, read_header, read_matrix, write_matrix, MatrixFormat};
use super::manifest::{artifact, sha256_hex, unix_now, RunManifest, MANIFEST_SCHEMA};
use super::recipe::{ExperimentConfig, RecipeOverrides, RomRecipe};

pub const CONFIG_FILE: &str = "config.ini";

/// Collects artifacts as they are written into one run directory.
struct RunDir {
    dir: PathBuf,
    format: MatrixFormat,
    files: Vec<String>,
    started: f64,
}

impl RunDir {
    fn create(dir: &Path, format: MatrixFormat) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
            started: unix_now(),
        })
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let path = matrix_path(&self.dir, name, self.format);
        write_matrix(&path, m, self.format)?;
        self.files.push(format!("{name}.{}", self.format.extension()));
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        cfg: &ExperimentConfig,
        arguments: serde_json::Value,
        details: serde_json::Value,
    ) -> Result<RunManifest> {
        let artifacts = self
            .files
            .iter()
            .map(|f| artifact(&self.dir, f))
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            schema: MANIFEST_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            benchmark: cfg.benchmark.name().to_string(),
            config_sha256: sha256_hex(cfg.text.as_bytes()),
            config_file: CONFIG_FILE.to_string(),
            integrator: serde_json::to_value(&cfg.fom_integrator).expect("integrator serializes"),
            arguments,
            details,
            artifacts,
            started_unix_s: self.started,
            finished_unix_s: unix_now(),
        };
        m.write(&self.dir)?;
        Ok(m)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| Error::io(p, e))
}

fn row(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Locates the matrix artifact `stem.*` listed in a manifest.
fn manifest_matrix(dir: &Path, m: &RunManifest, stem: &str) -> Result<PathBuf> {
    m.artifacts
        .iter()
        .find(|a| Path::new(&a.path).file_stem().and_then(|s| s.to_str()) == Some(stem) && a.path != CONFIG_FILE)
        .map(|a| dir.join(&a.path))
        .ok_or_else(|| Error::Format {
            path: RunManifest::path_in(dir),
            reason: format!("manifest lists no '{stem}' matrix"),
        })
}

fn expect_command(dir: &Path, m: &RunManifest, command: &str) -> Result<()> {
    if m.command == command {
        Ok(())
    } else {
        Err(Error::Format {
            path: RunManifest::path_in(dir),
            reason: format!("expected a {command} run, found {}", m.command),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FomArgs {
    config: PathBuf,
    format: MatrixFormat,
}

/// Simulates the full-order model over the training window and stores
/// times, states, inputs, nonlinear evaluations and outputs.
pub fn fom_simulate(config: &Path, out: &Path, format: MatrixFormat) -> Result<RunManifest> {
    let cfg = ExperimentConfig::load(config)?;
    let args = FomArgs {
        config: absolute(config)?,
        format,
    };
    fom_simulate_with(&cfg, args, out)
}

fn fom_simulate_with(cfg: &ExperimentConfig, args: FomArgs, out: &Path) -> Result<RunManifest> {
    let model = models::build(&cfg.benchmark)?;
    let times = cfg.benchmark.training_times();
    log::info!("{}: simulating {} states over {} samples", model.name, model.n(), times.len());
    let traj = model.simulate(&times, &cfg.fom_integrator)?;
    let f = model.nonlinear_snapshots(&traj.times, &traj.states)?;
    let mut run = RunDir::create(out, args.format)?;
    run.text(CONFIG_FILE, &cfg.text)?;
    run.matrix("times", &row(&traj.times))?;
    run.matrix("states", &traj.states)?;
    run.matrix("inputs", &traj.inputs)?;
    run.matrix("nonlinear", &f)?;
    run.matrix("outputs", &model.outputs(&traj.states))?;
    let details = serde_json::json!({
        "n": model.n(),
        "fields": model.field_names,
        "samples": traj.len(),
        "dt": cfg.benchmark.dt(),
        "t_end": traj.times.last(),
    });
    run.finish("fom-simulate", cfg, serde_json::to_value(&args).unwrap(), details)
}

/// Snapshot data loaded back from a `fom-simulate` directory.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub model: FullOrderModel,
    pub traj: Trajectory,
    pub nonlinear: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let m = RunManifest::read(dir)?;
        expect_command(dir, &m, "fom-simulate")?;
        let config = ExperimentConfig::load(&dir.join(&m.config_file))?;
        if sha256_hex(config.text.as_bytes()) != m.config_sha256 {
            return Err(Error::Format {
                path: dir.join(&m.config_file),
                reason: "configuration differs from the manifest hash".into(),
            });
        }
        let model = models::build(&config.benchmark)?;
        let times = read_matrix(&manifest_matrix(dir, &m, "times")?)?;
        let traj = Trajectory::new(
            times.iter().copied().collect(),
            read_matrix(&manifest_matrix(dir, &m, "states")?)?,
            read_matrix(&manifest_matrix(dir, &m, "inputs")?)?,
        )?;
        if traj.states.nrows() != model.n() {
            return Err(Error::Format {
                path: dir.to_path_buf(),
                reason: format!("states have {} rows, model has {}", traj.states.nrows(), model.n()),
            });
        }
        let nonlinear = read_matrix(&manifest_matrix(dir, &m, "nonlinear")?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            model,
            traj,
            nonlinear,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BuildArgs {
    snapshots: PathBuf,
    overrides: RecipeOverrides,
    format: MatrixFormat,
}

/// Layout of the stored basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisLayout {
    pub block: bool,
    pub ranks: Vec<usize>,
    pub row_offsets: Vec<usize>,
    pub col_offsets: Vec<usize>,
    pub residuals: Vec<f64>,
    pub modes: Vec<PodMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeimDetails {
    pub m: usize,
    pub indices: Vec<usize>,
    pub required_state_indices: usize,
    pub inverse_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomDetails {
    pub method: RomKind,
    pub recipe: RomRecipe,
    pub r: usize,
    pub coupled: bool,
    pub quadratic: bool,
    pub nonlinear: String,
    pub basis: BasisLayout,
    pub deim: Option<DeimDetails>,
    pub residual_norm: Option<f64>,
    pub condition_number: Option<f64>,
}

fn pod_blocks(basis: &Basis) -> (Vec<&PodBasis>, Vec<usize>, Vec<usize>) {
    match basis {
        Basis::Single(b) => (vec![b], vec![0], vec![0]),
        Basis::Block(bb) => (bb.blocks.iter().collect(), bb.row_offsets.clone(), bb.col_offsets.clone()),
    }
}

/// Builds a reduced model from a snapshot directory and stores its basis,
/// operators and DEIM data.
pub fn build_rom_cmd(
    snapshots: &Path,
    out: &Path,
    overrides: &RecipeOverrides,
    format: MatrixFormat,
) -> Result<RunManifest> {
    let snap = SnapshotSet::load(snapshots)?;
    let mut recipe = snap.config.recipe.clone();
    overrides.apply(&mut recipe)?;
    let rom = build_rom(&snap.model, &snap.traj, Some(&snap.nonlinear), &recipe)?;
    log::info!("built {}", rom.label());

    let mut run = RunDir::create(out, format)?;
    run.text(CONFIG_FILE, &snap.config.text)?;
    run.matrix("basis", &rom.v)?;
    let (blocks, row_offsets, col_offsets) = pod_blocks(&rom.basis);
    for (k, b) in blocks.iter().enumerate() {
        run.matrix(&format!("pod_singular_values_{k}"), &column(&b.singular_values))?;
    }
    run.matrix("A", &rom.a)?;
    run.matrix("B", &rom.b)?;
    if let Some(h) = &rom.h {
        run.matrix("H", &h.to_dense())?;
    }
    run.matrix("shat0", &column(&rom.shat0))?;
    let deim = match &rom.nonlinear {
        NonlinearTerm::Deim(op) => {
            run.matrix("deim_basis", &op.w)?;
            run.matrix("deim_singular_values", &column(&op.singular_values))?;
            run.matrix("deim_projection", &op.projection_factor)?;
            Some(DeimDetails {
                m: op.m(),
                indices: op.indices.clone(),
                required_state_indices: op.required_state_indices.len(),
                inverse_norm: op.inverse_norm,
            })
        }
        _ => None,
    };
    let details = RomDetails {
        method: rom.kind,
        recipe,
        r: rom.r(),
        coupled: matches!(rom.structure, Structure::Coupled(_)),
        quadratic: rom.h.is_some(),
        nonlinear: match rom.nonlinear {
            NonlinearTerm::None => "none",
            NonlinearTerm::ExactLift => "exact-lift",
            NonlinearTerm::Deim(_) => "deim",
        }
        .into(),
        basis: BasisLayout {
            block: matches!(rom.basis, Basis::Block(_)),
            ranks: blocks.iter().map(|b| b.rank()).collect(),
            row_offsets,
            col_offsets,
            residuals: blocks.iter().map(|b| b.residual).collect(),
            modes: blocks.iter().map(|b| b.mode).collect(),
        },
        deim,
        residual_norm: rom.residual_norm,
        condition_number: rom.condition_number,
    };
    let args = BuildArgs {
        snapshots: absolute(snapshots)?,
        overrides: overrides.clone(),
        format,
    };
    run.finish(
        "build-rom",
        &snap.config,
        serde_json::to_value(&args).unwrap(),
        serde_json::to_value(&details).unwrap(),
    )
}

/// A reduced model loaded back from a `build-rom` directory.
#[derive(Debug, Clone)]
pub struct StoredRom {
    pub config: ExperimentConfig,
    pub model: FullOrderModel,
    pub rom: ReducedModel,
    pub details: RomDetails,
}

impl StoredRom {
    pub fn load(dir: &Path) -> Result<Self> {
        let m = RunManifest::read(dir)?;
        expect_command(dir, &m, "build-rom")?;
        let bad = |reason: String| Error::Format {
            path: RunManifest::path_in(dir),
            reason,
        };
        let details: RomDetails =
            serde_json::from_value(m.details.clone()).map_err(|e| bad(format!("ROM details: {e}")))?;
        let config = ExperimentConfig::load(&dir.join(&m.config_file))?;
        let model = models::build(&config.benchmark)?;
        let mat = |stem: &str| read_matrix(&manifest_matrix(dir, &m, stem)?);
        let v = mat("basis")?;
        let layout = &details.basis;
        let mut blocks = Vec::new();
        for k in 0..layout.ranks.len() {
            let n_rows = if layout.block {
                layout.row_offsets.get(k + 1).copied().unwrap_or(v.nrows()) - layout.row_offsets[k]
            } else {
                v.nrows()
            };
            blocks.push(PodBasis {
                v: v
                    .view((layout.row_offsets[k], layout.col_offsets[k]), (n_rows, layout.ranks[k]))
                    .into_owned(),
                singular_values: mat(&format!("pod_singular_values_{k}"))?.column(0).into_owned(),
                residual: layout.residuals[k],
                mode: layout.modes[k],
            });
        }
        let basis = if layout.block {
            Basis::Block(BlockBasis {
                blocks,
                row_offsets: layout.row_offsets.clone(),
                col_offsets: layout.col_offsets.clone(),
            })
        } else {
            Basis::Single(blocks.pop().ok_or_else(|| bad("empty basis layout".into()))?)
        };
        let h = if details.quadratic {
            Some(CompressedQuadraticOp::from_dense(mat("H")?, details.r)?)
        } else {
            None
        };
        let nonlinear = match details.nonlinear.as_str() {
            "none" => NonlinearTerm::None,
            "exact-lift" => NonlinearTerm::ExactLift,
            "deim" => {
                let w = mat("deim_basis")?;
                let sv = mat("deim_singular_values")?.column(0).into_owned();
                let op = deim_operator(&model, &basis, &w, &sv)?;
                if Some(&op.indices) != details.deim.as_ref().map(|d| &d.indices) {
                    return Err(bad("stored DEIM indices do not match the stored DEIM basis".into()));
                }
                NonlinearTerm::Deim(op)
            }
            other => return Err(bad(format!("unknown nonlinear handler '{other}'"))),
        };
        let structure = match (&model.coupling, details.coupled) {
            (Some(c), true) => Structure::Coupled(c.clone()),
            (None, true) => return Err(bad("coupled ROM for an uncoupled model".into())),
            _ => Structure::Monolithic,
        };
        let mut rom = ReducedModel::new(
            details.method,
            mat("A")?,
            mat("B")?,
            h,
            nonlinear,
            basis,
            mat("shat0")?.column(0).into_owned(),
            structure,
        )?;
        rom.residual_norm = details.residual_norm;
        rom.condition_number = details.condition_number;
        Ok(Self {
            config,
            model,
            rom,
            details,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CompareArgs {
    rom: PathBuf,
    snapshots: PathBuf,
    horizon: Option<f64>,
}

/// Simulates a stored ROM to the horizon and compares it with the full model.
/// The reference is re-simulated when the horizon exceeds the snapshot window.
pub fn compare_cmd(rom_dir: &Path, snapshots: &Path, out: &Path, horizon: Option<f64>) -> Result<RunManifest> {
    let stored = StoredRom::load(rom_dir)?;
    let snap = SnapshotSet::load(snapshots)?;
    if snap.config.benchmark != stored.config.benchmark {
        return Err(Error::Config("ROM and snapshots come from different benchmark configurations".into()));
    }
    let recipe = &stored.details.recipe;
    let horizon = horizon.unwrap_or(recipe.horizon);
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let dt = snap.config.benchmark.dt();
    let t_last = snap.traj.times.last().copied().unwrap_or(0.0);
    let reference = if horizon <= t_last + 0.5 * dt {
        prefix(&snap.traj, horizon)?
    } else {
        log::info!("re-simulating the full model to t = {horizon}");
        snap.model.simulate(&uniform_grid(0.0, horizon, dt), &snap.config.fom_integrator)?
    };
    let (_, report) = evaluate(&stored.rom, &snap.model, &reference, recipe)?;
    let label = stored.rom.label();
    let mut run = RunDir::create(out, MatrixFormat::Bin)?;
    run.text(CONFIG_FILE, &snap.config.text)?;
    run.text("outputs.csv", &report.to_csv(&label))?;
    run.text("summary.csv", &summary_csv(&stored.rom, &report, horizon))?;
    let args = CompareArgs {
        rom: absolute(rom_dir)?,
        snapshots: absolute(snapshots)?,
        horizon: Some(horizon),
    };
    let details = serde_json::json!({
        "rom": label,
        "status": report.status,
        "relative_state_error": report.relative_state_error,
        "mean_relative_output_error": report.mean_relative_output_error,
        "max_abs_output_error": report.max_abs_output_error,
    });
    run.finish("compare", &snap.config, serde_json::to_value(&args).unwrap(), details)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SweepArgs {
    config: PathBuf,
    methods: Vec<RomKind>,
    ranks: Vec<usize>,
    overrides: RecipeOverrides,
}

/// Simulates the full model once, then builds and scores a ROM for every
/// `(method, r)`. Runs that fail are recorded with their status.
pub fn sweep_cmd(
    config: &Path,
    out: &Path,
    methods: &[RomKind],
    ranks: &[usize],
    overrides: &RecipeOverrides,
    jobs: usize,
) -> Result<RunManifest> {
    let cfg = ExperimentConfig::load(config)?;
    let args = SweepArgs {
        config: absolute(config)?,
        methods: methods.to_vec(),
        ranks: ranks.to_vec(),
        overrides: overrides.clone(),
    };
    sweep_with(&cfg, args, out, jobs)
}

fn sweep_with(cfg: &ExperimentConfig, args: SweepArgs, out: &Path, jobs: usize) -> Result<RunManifest> {
    if args.methods.is_empty() || args.ranks.is_empty() {
        return Err(Error::Config("sweep needs at least one method and one basis size".into()));
    }
    let mut recipe = cfg.recipe.clone();
    args.overrides.apply(&mut recipe)?;
    let fom: FomRun = run_fom(cfg, recipe.horizon)?;
    let rows = sweep(&fom, None, &recipe, &args.methods, &args.ranks, jobs)?;
    let mut run = RunDir::create(out, MatrixFormat::Bin)?;
    run.text(CONFIG_FILE, &cfg.text)?;
    run.text("sweep.csv", &sweep_csv(&rows, fom.model.n_outputs()))?;
    let details = serde_json::json!({
        "recipe": recipe,
        "samples_train": fom.train.len(),
        "samples_reference": fom.reference.len(),
        "rows": rows.len(),
    });
    run.finish("sweep", cfg, serde_json::to_value(&args).unwrap(), details)
}

/// Human-readable description of a manifest, run directory or matrix file.
pub fn inspect(path: &Path) -> Result<String> {
    if path.is_dir() || path.extension().and_then(|e| e.to_str()) == Some("json") {
        let m = RunManifest::read(path)?;
        return Ok(serde_json::to_string_pretty(&m).expect("manifest serializes"));
    }
    match MatrixFormat::from_path(path) {
        MatrixFormat::Bin => {
            let h = read_header(path)?;
            Ok(format!("OIMX v{} {} x {} f64", h.version, h.rows, h.cols))
        }
        MatrixFormat::Csv => {
            let m = read_matrix(path)?;
            Ok(format!("CSV {} x {}", m.nrows(), m.ncols()))
        }
    }
}

fn parse_args<T: serde::de::DeserializeOwned>(dir: &Path, m: &RunManifest) -> Result<T> {
    serde_json::from_value(m.arguments.clone()).map_err(|e| Error::Format {
        path: RunManifest::path_in(dir),
        reason: format!("arguments: {e}"),
    })
}

/// Repeats the run recorded in `manifest` (a file or run directory) into
/// `out`, sequentially. The configuration is taken from the recorded copy.
pub fn rerun(manifest: &Path, out: &Path) -> Result<RunManifest> {
    let dir = if manifest.is_dir() {
        manifest.to_path_buf()
    } else {
        manifest.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let m = RunManifest::read(manifest)?;
    let cfg = ExperimentConfig::load(&dir.join(&m.config_file))?;
    if sha256_hex(cfg.text.as_bytes()) != m.config_sha256 {
        return Err(Error::Format {
            path: dir.join(&m.config_file),
            reason: "configuration differs from the manifest hash".into(),
        });
    }
    match m.command.as_str() {
        "fom-simulate" => fom_simulate_with(&cfg, parse_args(&dir, &m)?, out),
        "build-rom" => {
            let a: BuildArgs = parse_args(&dir, &m)?;
            build_rom_cmd(&a.snapshots, out, &a.overrides, a.format)
        }
        "compare" => {
            let a: CompareArgs = parse_args(&dir, &m)?;
            compare_cmd(&a.rom, &a.snapshots, out, a.horizon)
        }
        "sweep" => sweep_with(&cfg, parse_args(&dir, &m)?, out, 1),
        other => Err(Error::Format {
            path: RunManifest::path_in(&dir),
            reason: format!("unknown command '{other}'"),
        }),
    }
}

/// Parses `a..b` (inclusive), `a..b..step` or a comma list such as `2,4,8`.
pub fn parse_ranks(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid basis-size list '{spec}'"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split("..").collect();
    let out: Vec<usize> = match parts.as_slice() {
        [single] => single.split(',').map(num).collect::<Result<_>>()?,
        [a, b] => (num(a)?..=num(b)?).collect(),
        [a, b, s] => {
            let s = num(s)?;
            if s == 0 {
                return Err(bad());
            }
            (num(a)?..=num(b)?).step_by(s).collect()
        }
        _ => return Err(bad()),
    };
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deim::DeimMode;

    #[test]
    fn rank_lists() {
        assert_eq!(parse_ranks("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_ranks("5..40..5").unwrap(), vec![5, 10, 15, 20, 25, 30, 35, 40]);
        assert_eq!(parse_ranks("3, 7,9").unwrap(), vec![3, 7, 9]);
        for bad in ["", "0..3", "4..2", "a", "1..2..0", "1..2..3..4"] {
            assert!(parse_ranks(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn deim_mode_in_details_round_trips() {
        let mut recipe = RomRecipe::default_for(&crate::models::BenchmarkConfig::default_for("tubular").unwrap());
        recipe.deim = Some(DeimMode::Count(4));
        let v = serde_json::to_value(&recipe).unwrap();
        assert_eq!(serde_json::from_value::<RomRecipe>(v).unwrap(), recipe);
    }
}
