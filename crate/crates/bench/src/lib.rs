//! Fixtures shared by the kernel benchmarks.

use nalgebra::DMatrix;
use opinf_core::models::{self, BenchmarkConfig, ChafeeConfig, FullOrderModel};
use opinf_core::pipeline::{build_rom, RomRecipe};
use opinf_core::{PodMode, ReducedModel, Result, RomKind};

/// Deterministic pseudo-random matrix with entries in `[-1, 1)`.
pub fn pseudo_random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    DMatrix::from_fn(rows, cols, |_, _| {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// A coarse Chafee-Infante model and a learned DEIM ROM of order `r`
/// trained on one second of data.
pub fn chafee_rom(r: usize, kind: RomKind) -> Result<(FullOrderModel, ReducedModel)> {
    let cfg = BenchmarkConfig::Chafee(ChafeeConfig {
        n_grid: 100,
        t_train: 1.0,
        ..Default::default()
    });
    let model = models::build(&cfg)?;
    let traj = model.simulate(&cfg.training_times(), &cfg.default_integrator())?;
    let mut recipe = RomRecipe::default_for(&cfg);
    recipe.pod = PodMode::Rank(r);
    recipe.method = kind;
    let rom = build_rom(&model, &traj, None, &recipe)?;
    Ok((model, rom))
}
