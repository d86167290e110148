use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opinf_core::pipeline::{self, MatrixFormat, RecipeOverrides};
use opinf_core::{Error, RomKind};

/// Learned and intrusive reduced models for the Chafee-Infante, tubular
/// reactor and batch chromatography benchmarks.
#[derive(Parser)]
#[command(name = "opinf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the full-order model over the training window and store snapshots.
    FomSimulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bin")]
        format: MatrixFormat,
    },
    /// Build a reduced model from a snapshot directory.
    BuildRom {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<RomKind>,
        /// Basis size (per field for block bases); wins over --pod-tol.
        #[arg(long)]
        r: Option<usize>,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value = "bin")]
        format: MatrixFormat,
    },
    /// Simulate a stored reduced model and compare it with the full model.
    Compare {
        #[arg(long)]
        rom: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// End time; the full model is re-simulated past the snapshot window.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Build and compare reduced models over a range of basis sizes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// intrusive, learned or both.
        #[arg(long, default_value = "both")]
        method: String,
        /// Basis sizes: `2..20`, `5..40..5` or `4,8,12`.
        #[arg(long, default_value = "2..20")]
        r: String,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a manifest or the header of a matrix file.
    Inspect { path: PathBuf },
    /// Repeat a recorded run into a new directory.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    pod_tol: Option<f64>,
    #[arg(long)]
    deim_tol: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

impl Tuning {
    fn overrides(self, method: Option<RomKind>, r: Option<usize>) -> RecipeOverrides {
        RecipeOverrides {
            method,
            r,
            pod_tol: self.pod_tol,
            deim_tol: self.deim_tol,
            ridge: self.ridge,
            horizon: self.horizon,
        }
    }
}

fn methods(s: &str) -> Result<Vec<RomKind>, Error> {
    match s {
        "both" => Ok(vec![RomKind::Intrusive, RomKind::Learned]),
        other => Ok(vec![other.parse()?]),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::FomSimulate { config, out, format } => {
            pipeline::fom_simulate(&config, &out, format)?;
        }
        Command::BuildRom {
            snapshots,
            out,
            method,
            r,
            tuning,
            format,
        } => {
            let m = pipeline::build_rom_cmd(&snapshots, &out, &tuning.overrides(method, r), format)?;
            println!("{}", m.details["basis"]["ranks"]);
        }
        Command::Compare {
            rom,
            snapshots,
            out,
            horizon,
        } => {
            let m = pipeline::compare_cmd(&rom, &snapshots, &out, horizon)?;
            println!("{}", std::fs::read_to_string(out.join("summary.csv")).map_err(|e| Error::io(&out, e))?);
            log::info!("{}", m.details);
        }
        Command::Sweep {
            config,
            out,
            method,
            r,
            tuning,
            jobs,
        } => {
            let ranks = pipeline::parse_ranks(&r)?;
            pipeline::sweep_cmd(&config, &out, &methods(&method)?, &ranks, &tuning.overrides(None, None), jobs)?;
            let csv = out.join("sweep.csv");
            println!("{}", std::fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?);
        }
        Command::Inspect { path } => println!("{}", pipeline::inspect(&path)?),
        Command::Rerun { manifest, out } => {
            pipeline::rerun(&manifest, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
