//! Experiment orchestration: configuration, snapshot and ROM persistence,
//! comparisons and sweeps.

pub mod build;
pub mod commands;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod recipe;

pub use build::{build_rom, factorize, Factorizations};
pub use commands::{
    build_rom_cmd, compare_cmd, fom_simulate, inspect, parse_ranks, rerun, sweep_cmd, SnapshotSet, StoredRom,
};
pub use experiment::{evaluate, run_fom, sweep, FomRun, SweepRow};
pub use io::{read_matrix, write_matrix, MatrixFormat};
pub use manifest::RunManifest;
pub use recipe::{ExperimentConfig, RecipeOverrides, RomRecipe};
