//! Experiment configuration: a benchmark section plus optional `[fom]` and
//! `[rom]` sections, with per-benchmark defaults.
//!
//! ```ini
//! [chafee]
//! n_grid = 500
//!
//! [fom]
//! method = trapezoidal   ; or rk45
//! step = 2.5e-4          ; trapezoidal step / rk45 max step
//! rtol = 1e-10
//! atol = 1e-10
//!
//! [rom]
//! method = learned       ; or intrusive
//! r = 12                 ; per field when block = true; wins over pod_tol
//! pod_tol = 1e-6
//! block = false
//! deim = true            ; false evaluates the nonlinearity on the lifted state
//! deim_tol = 1e-8
//! deim_m = 20            ; wins over deim_tol
//! svd_stride = 1         ; every k-th snapshot enters the POD and DEIM SVDs
//! drop_first = 10
//! stride = 1
//! ridge = 0
//! infer_quadratic = false
//! horizon = 20
//! divergence_bound = 1e6
//! integrator = rk45      ; or trapezoidal (same step as the full model)
//! step = 2.5e-4
//! rtol = 1e-10
//! atol = 1e-10
//! ```

use std::path::Path;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::deim::DeimMode;
use crate::error::{Error, Result};
use crate::integrate::{IntegratorSpec, Method};
use crate::models::config::Reader;
use crate::models::BenchmarkConfig;
use crate::opinf::SampleMask;
use crate::pod::PodMode;
use crate::romsim::{RomKind, DEFAULT_DIVERGENCE_BOUND};

/// Everything needed to turn snapshots into a reduced model and simulate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomRecipe {
    pub method: RomKind,
    /// Basis size; per field when `block` is set.
    pub pod: PodMode,
    pub block: bool,
    /// `None` evaluates the nonlinearity on the lifted state.
    pub deim: Option<DeimMode>,
    pub svd_stride: usize,
    pub mask: SampleMask,
    pub ridge: f64,
    pub infer_quadratic: bool,
    pub horizon: f64,
    pub divergence_bound: f64,
    pub integrator: IntegratorSpec,
}

impl RomRecipe {
    pub fn default_for(cfg: &BenchmarkConfig) -> Self {
        let mut r = Self {
            method: RomKind::Learned,
            pod: PodMode::Rank(12),
            block: false,
            deim: Some(DeimMode::Tolerance(1e-8)),
            svd_stride: 1,
            mask: SampleMask::default(),
            ridge: 0.0,
            infer_quadratic: cfg.infer_quadratic(),
            horizon: cfg.t_predict(),
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            integrator: IntegratorSpec::rk45(1e-10, 1e-10),
        };
        match cfg {
            BenchmarkConfig::Chafee(_) => {
                r.mask.drop_first = 10;
                // the reduced models inherit the stiff diffusion spectrum
                r.integrator = cfg.default_integrator();
            }
            BenchmarkConfig::Tubular(_) => {
                r.pod = PodMode::Rank(10);
                r.mask.drop_first = 10;
            }
            BenchmarkConfig::Chromatography(c) => {
                r.pod = PodMode::Rank(22);
                r.block = true;
                r.deim = Some(DeimMode::Tolerance(1e-10));
                r.svd_stride = ((5e-3 / c.dt).round() as usize).max(1);
            }
        }
        r
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        match self.pod {
            PodMode::Rank(0) => return bad("r must be positive"),
            PodMode::Energy(t) if !(0.0..1.0).contains(&t) => return bad("pod_tol must lie in [0, 1)"),
            _ => {}
        }
        match self.deim {
            Some(DeimMode::Count(0)) => return bad("deim_m must be positive"),
            Some(DeimMode::Tolerance(t)) if !(t >= 0.0) => return bad("deim_tol must be nonnegative"),
            _ => {}
        }
        if self.svd_stride == 0 || self.mask.stride == 0 {
            return bad("strides must be positive");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be finite and nonnegative");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive");
        }
        self.integrator.validate()
    }
}

/// Command-line adjustments applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecipeOverrides {
    pub method: Option<RomKind>,
    pub r: Option<usize>,
    pub pod_tol: Option<f64>,
    pub deim_tol: Option<f64>,
    pub ridge: Option<f64>,
    pub horizon: Option<f64>,
}

impl RecipeOverrides {
    pub fn apply(&self, recipe: &mut RomRecipe) -> Result<()> {
        if let Some(m) = self.method {
            recipe.method = m;
        }
        match (self.r, self.pod_tol) {
            (Some(r), _) => recipe.pod = PodMode::Rank(r),
            (None, Some(t)) => recipe.pod = PodMode::Energy(t),
            _ => {}
        }
        if let Some(t) = self.deim_tol {
            recipe.deim = Some(DeimMode::Tolerance(t));
        }
        if let Some(l) = self.ridge {
            recipe.ridge = l;
        }
        if let Some(h) = self.horizon {
            recipe.horizon = h;
        }
        recipe.validate()
    }
}

/// A parsed experiment file. `text` is kept verbatim for hashing and copying.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub text: String,
    pub benchmark: BenchmarkConfig,
    pub fom_integrator: IntegratorSpec,
    pub recipe: RomRecipe,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, _) in ini.iter() {
            match name {
                None | Some("fom") | Some("rom") => {}
                Some(n) if BenchmarkConfig::NAMES.contains(&n) => {}
                Some(n) => return Err(Error::Config(format!("unknown section [{n}]"))),
            }
        }
        let benchmark = BenchmarkConfig::from_ini(&ini, None)?;
        let fom_integrator = read_fom(&ini, &benchmark)?;
        let recipe = read_rom(&ini, &benchmark, &fom_integrator)?;
        Ok(Self {
            text: text.to_string(),
            benchmark,
            fom_integrator,
            recipe,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.labeled(path.display().to_string()))
    }

    /// Benchmark defaults with no file behind them.
    pub fn defaults(benchmark: BenchmarkConfig) -> Self {
        let text = benchmark.to_ini_string();
        Self {
            fom_integrator: benchmark.default_integrator(),
            recipe: RomRecipe::default_for(&benchmark),
            benchmark,
            text,
        }
    }
}

fn read_fom(ini: &Ini, cfg: &BenchmarkConfig) -> Result<IntegratorSpec> {
    let mut spec = cfg.default_integrator();
    let Some(props) = ini.section(Some("fom")) else {
        return Ok(spec);
    };
    let mut r = Reader::new("fom", props);
    read_integrator(&mut r, cfg, &mut spec, "method")?;
    r.finish()?;
    Ok(spec)
}

/// Integrator keys shared by `[fom]` and `[rom]`; `method_key` names the scheme.
fn read_integrator(r: &mut Reader, cfg: &BenchmarkConfig, spec: &mut IntegratorSpec, method_key: &str) -> Result<()> {
    if let Some(m) = r.raw(method_key) {
        let (rtol, atol) = (spec.rtol, spec.atol);
        *spec = match m {
            "rk45" => IntegratorSpec::rk45(rtol, atol),
            "trapezoidal" => {
                let mut s = IntegratorSpec::trapezoidal(cfg.dt().min(2.5e-4));
                s.newton_tol = 1e-12;
                s
            }
            _ => return Err(r.bad(method_key, m, "rk45 or trapezoidal")),
        };
    }
    r.f64("step", &mut spec.max_step)?;
    r.f64("rtol", &mut spec.rtol)?;
    r.f64("atol", &mut spec.atol)?;
    r.f64("newton_tol", &mut spec.newton_tol)?;
    r.usize("startup_euler_steps", &mut spec.startup_euler_steps)?;
    if spec.method == Method::Trapezoidal && !(spec.max_step > 0.0 && spec.max_step.is_finite()) {
        return Err(Error::Config("trapezoidal step must be positive".into()));
    }
    spec.validate()
}

fn read_rom(ini: &Ini, cfg: &BenchmarkConfig, fom: &IntegratorSpec) -> Result<RomRecipe> {
    let mut recipe = RomRecipe::default_for(cfg);
    if fom.method == Method::Trapezoidal && recipe.integrator.method == Method::Trapezoidal {
        recipe.integrator = fom.clone();
    }
    let Some(props) = ini.section(Some("rom")) else {
        return Ok(recipe);
    };
    let mut r = Reader::new("rom", props);
    if let Some(m) = r.raw("method") {
        recipe.method = m.parse()?;
    }
    let mut rank = 0usize;
    let mut tol = f64::NAN;
    let has_rank = r.usize("r", &mut rank)?;
    if r.f64("pod_tol", &mut tol)? {
        recipe.pod = PodMode::Energy(tol);
    }
    if has_rank {
        recipe.pod = PodMode::Rank(rank);
    }
    r.bool("block", &mut recipe.block)?;
    let mut use_deim = true;
    r.bool("deim", &mut use_deim)?;
    let mut m = 0usize;
    if r.f64("deim_tol", &mut tol)? {
        recipe.deim = Some(DeimMode::Tolerance(tol));
    }
    if r.usize("deim_m", &mut m)? {
        recipe.deim = Some(DeimMode::Count(m));
    }
    if !use_deim {
        recipe.deim = None;
    }
    r.usize("svd_stride", &mut recipe.svd_stride)?;
    r.usize("drop_first", &mut recipe.mask.drop_first)?;
    r.usize("stride", &mut recipe.mask.stride)?;
    r.f64("ridge", &mut recipe.ridge)?;
    r.bool("infer_quadratic", &mut recipe.infer_quadratic)?;
    r.f64("horizon", &mut recipe.horizon)?;
    r.f64("divergence_bound", &mut recipe.divergence_bound)?;
    read_integrator(&mut r, cfg, &mut recipe.integrator, "integrator")?;
    r.finish()?;
    recipe.validate()?;
    Ok(recipe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_benchmark() {
        let c = ExperimentConfig::parse("[chafee]\n").unwrap();
        assert_eq!(c.recipe.pod, PodMode::Rank(12));
        assert_eq!(c.recipe.mask.drop_first, 10);
        assert_eq!(c.recipe.horizon, 20.0);
        assert_eq!(c.fom_integrator.method, Method::Trapezoidal);
        let c = ExperimentConfig::parse("[chromatography]\ndt = 5e-4\n").unwrap();
        assert!(c.recipe.block);
        assert_eq!(c.recipe.svd_stride, 10);
        assert_eq!(c.recipe.deim, Some(DeimMode::Tolerance(1e-10)));
    }

    #[test]
    fn rank_wins_over_tolerance() {
        let c = ExperimentConfig::parse("[tubular]\n[rom]\npod_tol = 1e-3\nr = 7\n").unwrap();
        assert_eq!(c.recipe.pod, PodMode::Rank(7));
        let mut recipe = c.recipe.clone();
        RecipeOverrides {
            pod_tol: Some(1e-4),
            ..Default::default()
        }
        .apply(&mut recipe)
        .unwrap();
        assert_eq!(recipe.pod, PodMode::Energy(1e-4));
        RecipeOverrides {
            r: Some(3),
            pod_tol: Some(1e-4),
            ..Default::default()
        }
        .apply(&mut recipe)
        .unwrap();
        assert_eq!(recipe.pod, PodMode::Rank(3));
    }

    #[test]
    fn sections_are_checked() {
        for bad in [
            "[chafee]\n[rom]\nbogus = 1\n",
            "[chafee]\n[roms]\n",
            "[chafee]\n[rom]\nmethod = magic\n",
            "[chafee]\n[rom]\nr = 0\n",
            "[chafee]\n[fom]\nmethod = euler\n",
        ] {
            assert_eq!(ExperimentConfig::parse(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
        let c = ExperimentConfig::parse("[chafee]\n[rom]\ndeim = false\nmethod = intrusive\n").unwrap();
        assert_eq!(c.recipe.deim, None);
        assert_eq!(c.recipe.method, RomKind::Intrusive);
        let c = ExperimentConfig::parse("[tubular]\n[fom]\nmethod = trapezoidal\nstep = 1e-3\n").unwrap();
        assert_eq!(c.fom_integrator.max_step, 1e-3);
        let c = ExperimentConfig::parse("[tubular]\n[rom]\nintegrator = trapezoidal\n").unwrap();
        assert_eq!(c.recipe.integrator.method, Method::Trapezoidal);
        let back: RomRecipe = serde_json::from_value(serde_json::to_value(&c.recipe).unwrap()).unwrap();
        assert_eq!(back, c.recipe);
        let rk = RomRecipe::default_for(&c.benchmark);
        assert!(rk.integrator.max_step.is_infinite());
        let back: RomRecipe = serde_json::from_value(serde_json::to_value(&rk).unwrap()).unwrap();
        assert_eq!(back, rk);
    }
}
