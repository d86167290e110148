//! Benchmark parameters and their INI representation. Each benchmark lives in
//! its own section (`[chafee]`, `[tubular]`, `[chromatography]`); keys that
//! are omitted take the documented defaults.

use ini::{Ini, Properties};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{uniform_grid, IntegratorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChafeeConfig {
    pub n_grid: usize,
    /// Right end of the domain `(0, L)`.
    pub length: f64,
    pub t_train: f64,
    pub dt: f64,
    pub t_predict: f64,
    /// `u(t) = amplitude * (sin(pi t) + 1)`.
    pub amplitude: f64,
    pub infer_quadratic: bool,
}

impl Default for ChafeeConfig {
    fn default() -> Self {
        Self {
            n_grid: 500,
            length: 1.0,
            t_train: 10.0,
            dt: 1e-3,
            t_predict: 20.0,
            amplitude: 10.0,
            infer_quadratic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubularConfig {
    /// Grid points per field.
    pub n: usize,
    /// Damköhler number.
    pub d: f64,
    pub pe: f64,
    pub gamma: f64,
    pub b_adiabatic: f64,
    pub beta: f64,
    pub theta_ref: f64,
    pub t_train: f64,
    pub dt: f64,
    pub t_predict: f64,
    pub psi0: f64,
    pub theta0: f64,
    pub infer_quadratic: bool,
}

impl Default for TubularConfig {
    fn default() -> Self {
        Self {
            n: 99,
            d: 0.167,
            pe: 5.0,
            gamma: 25.0,
            b_adiabatic: 0.5,
            beta: 2.5,
            theta_ref: 1.0,
            t_train: 30.0,
            dt: 1e-3,
            t_predict: 60.0,
            psi0: 1.0,
            theta0: 1.0,
            infer_quadratic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChromatographyConfig {
    /// Cells per field.
    pub n: usize,
    pub eps: f64,
    pub length: f64,
    pub pe: f64,
    pub d_tube: f64,
    pub kappa: [f64; 2],
    /// Henry constants `H[i][l]`.
    pub henry: [[f64; 2]; 2],
    /// Thermodynamic coefficients `K[j][l]`.
    pub k: [[f64; 2]; 2],
    pub flow_rate: f64,
    pub feed: [f64; 2],
    pub t_inj: f64,
    pub t_train: f64,
    pub dt: f64,
    pub t_predict: f64,
    /// Multiplies `kappa` in the exchange rate. `None` uses the column
    /// residence factor `L eps A_c / Q`; `Some(1.0)` uses `kappa` as is.
    pub mass_transfer_scale: Option<f64>,
    pub infer_quadratic: bool,
}

impl Default for ChromatographyConfig {
    fn default() -> Self {
        Self {
            n: 400,
            eps: 0.4,
            length: 10.5,
            pe: 2000.0,
            d_tube: 2.6,
            kappa: [0.1, 0.1],
            henry: [[3.728, 0.3], [2.688, 0.1]],
            k: [[46.6, 33.6], [3000.0, 1000.0]],
            flow_rate: 0.1018,
            feed: [2.9e-3, 2.9e-3],
            t_inj: 1.3,
            t_train: 10.0,
            dt: 5e-5,
            t_predict: 10.0,
            mass_transfer_scale: None,
            infer_quadratic: false,
        }
    }
}

impl ChromatographyConfig {
    pub fn eps_c(&self) -> f64 {
        1.0 - 1.0 / self.eps
    }

    pub fn rate_scale(&self) -> f64 {
        self.mass_transfer_scale.unwrap_or_else(|| {
            let area = std::f64::consts::PI * self.d_tube * self.d_tube / 4.0;
            self.length * self.eps * area / self.flow_rate
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "benchmark", rename_all = "lowercase")]
pub enum BenchmarkConfig {
    Chafee(ChafeeConfig),
    Tubular(TubularConfig),
    Chromatography(ChromatographyConfig),
}

impl BenchmarkConfig {
    pub const NAMES: [&'static str; 3] = ["chafee", "tubular", "chromatography"];

    pub fn default_for(name: &str) -> Result<Self> {
        match name {
            "chafee" => Ok(Self::Chafee(ChafeeConfig::default())),
            "tubular" => Ok(Self::Tubular(TubularConfig::default())),
            "chromatography" => Ok(Self::Chromatography(ChromatographyConfig::default())),
            other => Err(Error::Config(format!("unknown benchmark '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Chafee(_) => "chafee",
            Self::Tubular(_) => "tubular",
            Self::Chromatography(_) => "chromatography",
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Self::Chafee(c) => c.dt,
            Self::Tubular(c) => c.dt,
            Self::Chromatography(c) => c.dt,
        }
    }

    pub fn t_train(&self) -> f64 {
        match self {
            Self::Chafee(c) => c.t_train,
            Self::Tubular(c) => c.t_train,
            Self::Chromatography(c) => c.t_train,
        }
    }

    pub fn t_predict(&self) -> f64 {
        match self {
            Self::Chafee(c) => c.t_predict,
            Self::Tubular(c) => c.t_predict,
            Self::Chromatography(c) => c.t_predict,
        }
    }

    pub fn infer_quadratic(&self) -> bool {
        match self {
            Self::Chafee(c) => c.infer_quadratic,
            Self::Tubular(c) => c.infer_quadratic,
            Self::Chromatography(c) => c.infer_quadratic,
        }
    }

    /// Uniform snapshot grid `0, dt, ..., T_train`.
    pub fn training_times(&self) -> Vec<f64> {
        uniform_grid(0.0, self.t_train(), self.dt())
    }

    /// Full-order integrator suited to the benchmark's stiffness.
    pub fn default_integrator(&self) -> IntegratorSpec {
        match self {
            Self::Chafee(c) => {
                let mut spec = IntegratorSpec::trapezoidal(c.dt.min(2.5e-4));
                spec.newton_tol = 1e-12;
                spec
            }
            Self::Tubular(_) | Self::Chromatography(_) => IntegratorSpec::rk45(1e-10, 1e-10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("dt", self.dt())?;
        pos("T", self.t_train())?;
        if self.t_train() < 4.0 * self.dt() {
            return Err(Error::Config("training horizon must span at least 5 samples".into()));
        }
        pos("T_predict", self.t_predict())?;
        match self {
            Self::Chafee(c) => {
                if c.n_grid < 3 {
                    return Err(Error::Config(format!("n_grid must be at least 3, got {}", c.n_grid)));
                }
                pos("L", c.length)?;
            }
            Self::Tubular(c) => {
                if c.n < 3 {
                    return Err(Error::Config(format!("n must be at least 3, got {}", c.n)));
                }
                pos("D", c.d)?;
                pos("Pe", c.pe)?;
                pos("gamma", c.gamma)?;
                pos("theta0", c.theta0)?;
                if !(c.beta >= 0.0 && c.b_adiabatic.is_finite() && c.psi0.is_finite()) {
                    return Err(Error::Config("beta, B_adiabatic and psi0 must be finite, beta nonnegative".into()));
                }
            }
            Self::Chromatography(c) => {
                if c.n < 2 {
                    return Err(Error::Config(format!("n must be at least 2, got {}", c.n)));
                }
                pos("Pe", c.pe)?;
                pos("L", c.length)?;
                pos("D_tube", c.d_tube)?;
                pos("Q", c.flow_rate)?;
                pos("kappa1", c.kappa[0])?;
                pos("kappa2", c.kappa[1])?;
                if !(c.eps > 0.0 && c.eps < 1.0) {
                    return Err(Error::Config(format!("eps must lie in (0, 1), got {}", c.eps)));
                }
                if let Some(s) = c.mass_transfer_scale {
                    pos("mass_transfer_scale", s)?;
                }
            }
        }
        Ok(())
    }

    /// Reads the benchmark section of an INI document. With `name = None`
    /// the document must contain exactly one benchmark section.
    pub fn from_ini(ini: &Ini, name: Option<&str>) -> Result<Self> {
        let present: Vec<&str> = Self::NAMES
            .into_iter()
            .filter(|n| ini.section(Some(*n)).is_some())
            .collect();
        let name = match (name, present.as_slice()) {
            (Some(n), _) => n,
            (None, [one]) => one,
            (None, []) => return Err(Error::Config("no benchmark section found".into())),
            (None, _) => {
                return Err(Error::Config(format!(
                    "several benchmark sections present ({}); select one",
                    present.join(", ")
                )))
            }
        };
        let mut cfg = Self::default_for(name)?;
        let empty = Properties::new();
        let props = ini.section(Some(name)).unwrap_or(&empty);
        let mut r = Reader::new(name, props);
        match &mut cfg {
            Self::Chafee(c) => {
                r.usize("n_grid", &mut c.n_grid)?;
                r.f64("L", &mut c.length)?;
                r.f64("T", &mut c.t_train)?;
                r.f64("dt", &mut c.dt)?;
                r.f64("T_predict", &mut c.t_predict)?;
                r.f64("amplitude", &mut c.amplitude)?;
                r.bool("infer_quadratic", &mut c.infer_quadratic)?;
            }
            Self::Tubular(c) => {
                r.usize("n", &mut c.n)?;
                r.f64("D", &mut c.d)?;
                r.f64("Pe", &mut c.pe)?;
                r.f64("gamma", &mut c.gamma)?;
                r.f64("B_adiabatic", &mut c.b_adiabatic)?;
                r.f64("beta", &mut c.beta)?;
                r.f64("theta_ref", &mut c.theta_ref)?;
                r.f64("T_train", &mut c.t_train)?;
                r.f64("dt", &mut c.dt)?;
                r.f64("T_predict", &mut c.t_predict)?;
                r.f64("psi0", &mut c.psi0)?;
                r.f64("theta0", &mut c.theta0)?;
                r.bool("infer_quadratic", &mut c.infer_quadratic)?;
            }
            Self::Chromatography(c) => {
                r.usize("n", &mut c.n)?;
                r.f64("eps", &mut c.eps)?;
                r.f64("L", &mut c.length)?;
                r.f64("Pe", &mut c.pe)?;
                r.f64("D_tube", &mut c.d_tube)?;
                r.f64("kappa1", &mut c.kappa[0])?;
                r.f64("kappa2", &mut c.kappa[1])?;
                r.f64("H11", &mut c.henry[0][0])?;
                r.f64("H12", &mut c.henry[0][1])?;
                r.f64("H21", &mut c.henry[1][0])?;
                r.f64("H22", &mut c.henry[1][1])?;
                r.f64("K11", &mut c.k[0][0])?;
                r.f64("K12", &mut c.k[0][1])?;
                r.f64("K21", &mut c.k[1][0])?;
                r.f64("K22", &mut c.k[1][1])?;
                r.f64("Q", &mut c.flow_rate)?;
                r.f64("c1f", &mut c.feed[0])?;
                r.f64("c2f", &mut c.feed[1])?;
                r.f64("t_inj", &mut c.t_inj)?;
                r.f64("T", &mut c.t_train)?;
                r.f64("dt", &mut c.dt)?;
                r.f64("T_predict", &mut c.t_predict)?;
                let mut scale = f64::NAN;
                if r.f64("mass_transfer_scale", &mut scale)? {
                    c.mass_transfer_scale = Some(scale);
                }
                r.bool("infer_quadratic", &mut c.infer_quadratic)?;
            }
        }
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_str(text: &str, name: Option<&str>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_ini(&ini, name)
    }

    /// Writes the configuration as an INI section that [`from_ini_str`](Self::from_ini_str) reads back.
    pub fn to_ini_string(&self) -> String {
        let mut out = format!("[{}]\n", self.name());
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        match self {
            Self::Chafee(c) => {
                kv("n_grid", c.n_grid.to_string());
                kv("L", fmt(c.length));
                kv("T", fmt(c.t_train));
                kv("dt", fmt(c.dt));
                kv("T_predict", fmt(c.t_predict));
                kv("amplitude", fmt(c.amplitude));
                kv("infer_quadratic", c.infer_quadratic.to_string());
            }
            Self::Tubular(c) => {
                kv("n", c.n.to_string());
                kv("D", fmt(c.d));
                kv("Pe", fmt(c.pe));
                kv("gamma", fmt(c.gamma));
                kv("B_adiabatic", fmt(c.b_adiabatic));
                kv("beta", fmt(c.beta));
                kv("theta_ref", fmt(c.theta_ref));
                kv("T_train", fmt(c.t_train));
                kv("dt", fmt(c.dt));
                kv("T_predict", fmt(c.t_predict));
                kv("psi0", fmt(c.psi0));
                kv("theta0", fmt(c.theta0));
                kv("infer_quadratic", c.infer_quadratic.to_string());
            }
            Self::Chromatography(c) => {
                kv("n", c.n.to_string());
                kv("eps", fmt(c.eps));
                kv("L", fmt(c.length));
                kv("Pe", fmt(c.pe));
                kv("D_tube", fmt(c.d_tube));
                kv("kappa1", fmt(c.kappa[0]));
                kv("kappa2", fmt(c.kappa[1]));
                kv("H11", fmt(c.henry[0][0]));
                kv("H12", fmt(c.henry[0][1]));
                kv("H21", fmt(c.henry[1][0]));
                kv("H22", fmt(c.henry[1][1]));
                kv("K11", fmt(c.k[0][0]));
                kv("K12", fmt(c.k[0][1]));
                kv("K21", fmt(c.k[1][0]));
                kv("K22", fmt(c.k[1][1]));
                kv("Q", fmt(c.flow_rate));
                kv("c1f", fmt(c.feed[0]));
                kv("c2f", fmt(c.feed[1]));
                kv("t_inj", fmt(c.t_inj));
                kv("T", fmt(c.t_train));
                kv("dt", fmt(c.dt));
                kv("T_predict", fmt(c.t_predict));
                if let Some(s) = c.mass_transfer_scale {
                    kv("mass_transfer_scale", fmt(s));
                }
                kv("infer_quadratic", c.infer_quadratic.to_string());
            }
        }
        out
    }
}

/// Shortest representation that parses back to the same value.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Typed key lookup that rejects keys it was never asked about.
pub(crate) struct Reader<'a> {
    section: &'a str,
    props: &'a Properties,
    seen: Vec<String>,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(section: &'a str, props: &'a Properties) -> Self {
        Self {
            section,
            props,
            seen: Vec::new(),
        }
    }

    pub(crate) fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.seen.push(key.to_string());
        self.props.get(key).map(str::trim)
    }

    pub(crate) fn bad(&self, key: &str, v: &str, what: &str) -> Error {
        Error::Config(format!("[{}] {key} = '{v}' is not {what}", self.section))
    }

    pub(crate) fn f64(&mut self, key: &str, dst: &mut f64) -> Result<bool> {
        match self.raw(key) {
            Some(v) => {
                *dst = v.parse().map_err(|_| self.bad(key, v, "a number"))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub(crate) fn usize(&mut self, key: &str, dst: &mut usize) -> Result<bool> {
        match self.raw(key) {
            Some(v) => {
                *dst = v.parse().map_err(|_| self.bad(key, v, "a nonnegative integer"))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub(crate) fn bool(&mut self, key: &str, dst: &mut bool) -> Result<bool> {
        match self.raw(key) {
            Some(v) => {
                *dst = match v {
                    "true" | "yes" | "on" | "1" => true,
                    "false" | "no" | "off" | "0" => false,
                    _ => return Err(self.bad(key, v, "a boolean")),
                };
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub(crate) fn finish(self) -> Result<()> {
        for (k, _) in self.props.iter() {
            if !self.seen.iter().any(|s| s == k) {
                return Err(Error::Config(format!("[{}] unknown key '{k}'", self.section)));
            }
        }
        Ok(())
    }
}
