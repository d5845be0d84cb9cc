//! Run configuration as flat `section.key = value` text.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! `#` at the start of a line or after whitespace starts a comment. Unknown
//! and repeated keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dbfe_core::dbfe::DbfeOptions;
use dbfe_core::gegenbauer::GegenbauerConfig;
use dbfe_core::kernels::{InitialCondition, KernelKind, KernelSpec, ScalingMode};
use dbfe_core::numerics::Grid1D;

/// A rejected configuration value, naming the key at fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
    /// 1-based line in the parsed text, when known.
    pub line: Option<usize>,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
            line: None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// How the DBFE integration ensemble is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntSampling {
    /// Owen-scrambled Sobol points through the inverse normal CDF.
    Sobol,
    /// i.i.d. normal draws.
    Random,
}

impl IntSampling {
    pub fn name(self) -> &'static str {
        match self {
            IntSampling::Sobol => "sobol",
            IntSampling::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mc,
    Dbfe,
    Gpc,
    Compare,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Dbfe => "dbfe",
            Method::Gpc => "gpc",
            Method::Compare => "compare",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [Method::Mc, Method::Dbfe, Method::Gpc, Method::Compare]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcConfig {
    pub u_b: f64,
    pub x0: f64,
    pub s: f64,
    pub kernel: KernelKind,
    pub sigma2: f64,
    /// `None` picks the kernel's default: 1 for the exponential kernel,
    /// `1 / (x_max − x_min)` for the triangular one.
    pub corr_len: Option<f64>,
    pub scaling: ScalingMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// KL modes kept (`N`).
    pub n_modes: usize,
    /// Total chaos order.
    pub order: usize,
    /// Germ samples behind every stochastic inner product of the DBFE solver.
    pub s_int: usize,
    /// Monte Carlo samples; DBFE and gPC are sampled on the same germ.
    pub s_mc: usize,
    pub seed: u64,
    /// Seed of the DBFE integration ensemble.
    pub int_seed: u64,
    pub int_sampling: IntSampling,
    pub reorthonormalize: bool,
    /// Record the DBFE variance history every this many steps (0: never).
    pub history_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostConfig {
    pub enabled: bool,
    pub lambda_g: f64,
    pub m_terms: usize,
    pub n_quad: usize,
    pub margin: usize,
    pub chaos_projection: bool,
    pub extend_to_shock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsConfig {
    pub level: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub ic: IcConfig,
    pub solver: SolverConfig,
    pub post: PostConfig,
    pub stats: StatsConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GegenbauerConfig::default();
        Self {
            domain: DomainConfig {
                x_min: -1.0,
                x_max: 1.0,
                nx: 201,
            },
            time: TimeConfig { t_end: 1.1, dt: 1e-4 },
            ic: IcConfig {
                u_b: 0.0,
                x0: 0.0,
                s: 0.1,
                kernel: KernelKind::Exponential,
                sigma2: 0.25,
                corr_len: None,
                scaling: ScalingMode::Fluctuation,
            },
            solver: SolverConfig {
                method: Method::Dbfe,
                n_modes: 3,
                order: 3,
                s_int: 2048,
                s_mc: 1000,
                seed: 1,
                int_seed: 77,
                int_sampling: IntSampling::Sobol,
                reorthonormalize: false,
                history_every: 100,
            },
            post: PostConfig {
                enabled: true,
                lambda_g: g.lambda_g,
                m_terms: g.m_terms,
                n_quad: g.n_quad,
                margin: g.margin,
                chaos_projection: g.chaos_projection,
                extend_to_shock: g.extend_to_shock,
            },
            stats: StatsConfig { level: 0.9, window: 1 },
            output: OutputConfig {
                directory: PathBuf::from("out"),
                prefix: String::new(),
            },
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected true or false, got {value:?}"))),
    }
}

fn strip_comment(line: &str) -> &str {
    let mut prev_space = true;
    for (i, c) in line.char_indices() {
        if c == '#' && prev_space {
            return &line[..i];
        }
        prev_space = c.is_whitespace();
    }
    line
}

/// Short names accepted by `sweep` for the swept parameter.
pub fn sweep_key(parameter: &str) -> Option<&'static str> {
    match parameter {
        "lambda_g" => Some("post.lambda_g"),
        "M" => Some("post.M"),
        "sigma2" => Some("ic.sigma2"),
        "N" => Some("solver.N"),
        "kernel" => Some("ic.kernel"),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |mut e: ConfigError| {
                e.line = Some(ln + 1);
                e
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(ConfigError::new(line, "expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(ConfigError::new(key, "given more than once")));
            }
            cfg.set(key, value).map_err(at)?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "domain.x_min" => self.domain.x_min = num(key, value)?,
            "domain.x_max" => self.domain.x_max = num(key, value)?,
            "domain.nx" => self.domain.nx = num(key, value)?,
            "time.t_end" => self.time.t_end = num(key, value)?,
            "time.dt" => self.time.dt = num(key, value)?,
            "ic.u_b" => self.ic.u_b = num(key, value)?,
            "ic.x0" => self.ic.x0 = num(key, value)?,
            "ic.s" => self.ic.s = num(key, value)?,
            "ic.kernel" => {
                self.ic.kernel = KernelKind::from_name(value).ok_or_else(|| {
                    let names: Vec<_> = KernelKind::ALL.iter().map(|k| k.name()).collect();
                    ConfigError::new(key, format!("unknown kernel {value:?}; expected one of {}", names.join(", ")))
                })?
            }
            "ic.sigma2" => self.ic.sigma2 = num(key, value)?,
            "ic.corr_len" => {
                self.ic.corr_len = if value == "auto" { None } else { Some(num(key, value)?) }
            }
            "ic.scaling" => {
                self.ic.scaling = ScalingMode::from_name(value)
                    .ok_or_else(|| ConfigError::new(key, format!("expected fluctuation or full, got {value:?}")))?
            }
            "solver.method" => {
                self.solver.method = Method::from_name(value)
                    .ok_or_else(|| ConfigError::new(key, format!("expected mc, dbfe, gpc or compare, got {value:?}")))?
            }
            "solver.N" => self.solver.n_modes = num(key, value)?,
            "solver.order" => self.solver.order = num(key, value)?,
            "solver.S_int" => self.solver.s_int = num(key, value)?,
            "solver.S_mc" => self.solver.s_mc = num(key, value)?,
            "solver.seed" => self.solver.seed = num(key, value)?,
            "solver.int_seed" => self.solver.int_seed = num(key, value)?,
            "solver.int_sampling" => {
                self.solver.int_sampling = match value {
                    "sobol" => IntSampling::Sobol,
                    "random" => IntSampling::Random,
                    _ => return Err(ConfigError::new(key, format!("expected sobol or random, got {value:?}"))),
                }
            }
            "solver.reorthonormalize" => self.solver.reorthonormalize = flag(key, value)?,
            "solver.history_every" => self.solver.history_every = num(key, value)?,
            "post.enabled" => self.post.enabled = flag(key, value)?,
            "post.lambda_g" => self.post.lambda_g = num(key, value)?,
            "post.M" => self.post.m_terms = num(key, value)?,
            "post.n_quad" => self.post.n_quad = num(key, value)?,
            "post.margin" => self.post.margin = num(key, value)?,
            "post.chaos_projection" => self.post.chaos_projection = flag(key, value)?,
            "post.extend_to_shock" => self.post.extend_to_shock = flag(key, value)?,
            "stats.level" => self.stats.level = num(key, value)?,
            "stats.window" => self.stats.window = num(key, value)?,
            "output.directory" => self.output.directory = PathBuf::from(value),
            "output.prefix" => self.output.prefix = value.to_string(),
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:?}");
        vec![
            ("domain.x_min", f(self.domain.x_min)),
            ("domain.x_max", f(self.domain.x_max)),
            ("domain.nx", self.domain.nx.to_string()),
            ("time.t_end", f(self.time.t_end)),
            ("time.dt", f(self.time.dt)),
            ("ic.u_b", f(self.ic.u_b)),
            ("ic.x0", f(self.ic.x0)),
            ("ic.s", f(self.ic.s)),
            ("ic.kernel", self.ic.kernel.name().to_string()),
            ("ic.sigma2", f(self.ic.sigma2)),
            ("ic.corr_len", self.ic.corr_len.map_or_else(|| "auto".to_string(), f)),
            ("ic.scaling", self.ic.scaling.name().to_string()),
            ("solver.method", self.solver.method.name().to_string()),
            ("solver.N", self.solver.n_modes.to_string()),
            ("solver.order", self.solver.order.to_string()),
            ("solver.S_int", self.solver.s_int.to_string()),
            ("solver.S_mc", self.solver.s_mc.to_string()),
            ("solver.seed", self.solver.seed.to_string()),
            ("solver.int_seed", self.solver.int_seed.to_string()),
            ("solver.int_sampling", self.solver.int_sampling.name().to_string()),
            ("solver.reorthonormalize", self.solver.reorthonormalize.to_string()),
            ("solver.history_every", self.solver.history_every.to_string()),
            ("post.enabled", self.post.enabled.to_string()),
            ("post.lambda_g", f(self.post.lambda_g)),
            ("post.M", self.post.m_terms.to_string()),
            ("post.n_quad", self.post.n_quad.to_string()),
            ("post.margin", self.post.margin.to_string()),
            ("post.chaos_projection", self.post.chaos_projection.to_string()),
            ("post.extend_to_shock", self.post.extend_to_shock.to_string()),
            ("stats.level", f(self.stats.level)),
            ("stats.window", self.stats.window.to_string()),
            ("output.directory", self.output.directory.display().to_string()),
            ("output.prefix", self.output.prefix.clone()),
        ]
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks every value before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::new(key, msg));
        let d = &self.domain;
        if !d.x_min.is_finite() {
            return bad("domain.x_min", format!("must be finite, got {}", d.x_min));
        }
        if !(d.x_max.is_finite() && d.x_max > d.x_min) {
            return bad("domain.x_max", format!("must exceed domain.x_min = {}, got {}", d.x_min, d.x_max));
        }
        if d.nx < 3 {
            return bad("domain.nx", format!("needs at least 3 points, got {}", d.nx));
        }
        if !(self.time.t_end >= 0.0 && self.time.t_end.is_finite()) {
            return bad("time.t_end", format!("must be >= 0, got {}", self.time.t_end));
        }
        if !(self.time.dt > 0.0 && self.time.dt.is_finite()) {
            return bad("time.dt", format!("must be > 0, got {}", self.time.dt));
        }
        let ic = &self.ic;
        for (key, v) in [("ic.u_b", ic.u_b), ("ic.x0", ic.x0)] {
            if !v.is_finite() {
                return bad(key, format!("must be finite, got {v}"));
            }
        }
        if !(d.x_min..=d.x_max).contains(&ic.x0) {
            return bad("ic.x0", format!("{} lies outside [{}, {}]", ic.x0, d.x_min, d.x_max));
        }
        if !(ic.s >= 0.0 && ic.s.is_finite()) {
            return bad("ic.s", format!("must be >= 0, got {}", ic.s));
        }
        if !(ic.sigma2 > 0.0 && ic.sigma2.is_finite()) {
            return bad("ic.sigma2", format!("must be > 0, got {}", ic.sigma2));
        }
        if let Some(c) = ic.corr_len {
            if !(c > 0.0 && c.is_finite()) {
                return bad("ic.corr_len", format!("must be > 0 or auto, got {c}"));
            }
        }
        let s = &self.solver;
        if s.n_modes < 1 || s.n_modes > d.nx {
            return bad("solver.N", format!("must lie in 1..={}, got {}", d.nx, s.n_modes));
        }
        if s.order > 12 {
            return bad("solver.order", format!("must be <= 12, got {}", s.order));
        }
        if s.s_int < 2 {
            return bad("solver.S_int", format!("needs at least 2 samples, got {}", s.s_int));
        }
        if s.int_sampling == IntSampling::Sobol && s.n_modes > crate::qmc::MAX_DIM {
            return bad(
                "solver.int_sampling",
                format!("sobol supports N <= {}, got N = {}; use random", crate::qmc::MAX_DIM, s.n_modes),
            );
        }
        if s.s_mc < 4 {
            return bad("solver.S_mc", format!("needs at least 4 samples, got {}", s.s_mc));
        }
        let p = &self.post;
        if !(p.lambda_g > 0.0 && p.lambda_g.is_finite()) {
            return bad("post.lambda_g", format!("must be > 0, got {}", p.lambda_g));
        }
        if p.m_terms < 1 {
            return bad("post.M", format!("must be >= 1, got {}", p.m_terms));
        }
        if p.n_quad < p.m_terms {
            return bad("post.n_quad", format!("must be >= post.M = {}, got {}", p.m_terms, p.n_quad));
        }
        if !(self.stats.level > 0.0 && self.stats.level < 1.0) {
            return bad("stats.level", format!("must lie in (0, 1), got {}", self.stats.level));
        }
        if self.stats.window < 1 {
            return bad("stats.window", "must be >= 1".to_string());
        }
        if self.output.prefix.contains(['/', '\\']) {
            return bad("output.prefix", "must not contain path separators".to_string());
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D::new(self.domain.x_min, self.domain.x_max, self.domain.nx).expect("validated domain")
    }

    pub fn corr_len(&self) -> f64 {
        self.ic.corr_len.unwrap_or(match self.ic.kernel {
            KernelKind::Triangular => 1.0 / (self.domain.x_max - self.domain.x_min),
            _ => 1.0,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            kind: self.ic.kernel,
            sigma2: self.ic.sigma2,
            corr_len: self.corr_len(),
        }
    }

    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition {
            u_b: self.ic.u_b,
            x0: self.ic.x0,
            s: self.ic.s,
            kernel: self.kernel(),
            scaling: self.ic.scaling,
        }
    }

    pub fn gegenbauer(&self) -> GegenbauerConfig {
        GegenbauerConfig {
            lambda_g: self.post.lambda_g,
            m_terms: self.post.m_terms,
            n_quad: self.post.n_quad,
            margin: self.post.margin,
            chaos_projection: self.post.chaos_projection,
            extend_to_shock: self.post.extend_to_shock,
        }
    }

    pub fn dbfe_options(&self) -> DbfeOptions {
        DbfeOptions {
            reorthonormalize: self.solver.reorthonormalize,
            diagnostics: true,
        }
    }
}
