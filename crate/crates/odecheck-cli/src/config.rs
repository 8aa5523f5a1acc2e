//! The single source of truth for a run: a flat `key = value` config file,
//! every key with a documented default, flag overrides winning, unknown keys
//! a hard error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use odecheck::ode::SolverSpec;
use odecheck::sampler::SamplerConfig;
use odecheck::workflow::{MethodLadder, Thresholds, WorkflowError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(String),
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{0}")]
    Ladder(#[from] WorkflowError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `tmdd`, `lotka-volterra`, or a path to a plugin model file.
    pub model: String,
    /// Dataset CSV path; empty means the model default (bundled Hudson Bay
    /// data for LV, simulation from `seed` for TMDD).
    pub dataset: String,
    pub out: String,
    pub method: SolverSpec,
    /// `default` or a comma-separated list of solver specs.
    pub ladder: String,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub init_stepsize: f64,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
    pub delta_mae: f64,
    pub delta_khat: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        let t = Thresholds::default();
        RunConfig {
            model: "lotka-volterra".into(),
            dataset: String::new(),
            out: "odecheck-run".into(),
            method: SolverSpec::rk45(1e-3),
            ladder: "default".into(),
            chains: s.chains,
            iterations: s.iterations,
            warmup: s.warmup,
            init_stepsize: s.init_stepsize,
            target_accept: s.target_accept,
            max_treedepth: s.max_treedepth,
            seed: s.seed,
            delta_mae: t.delta_mae,
            delta_khat: t.delta_khat,
        }
    }
}

/// Parse `rk45(1e-3)`, `rk45(1e-3,1e-4)`, `rk4(20)`, or `midpoint(3)`.
pub fn parse_solver_spec(s: &str) -> Result<SolverSpec, String> {
    let s = s.trim();
    let (family, rest) = s.split_once('(').ok_or_else(|| format!("bad solver spec `{s}`"))?;
    let args = rest.strip_suffix(')').ok_or_else(|| format!("bad solver spec `{s}`"))?;
    let parts: Vec<&str> = args.split(',').map(str::trim).collect();
    match (family.trim(), parts.as_slice()) {
        ("midpoint", [k]) => {
            let k: u32 = k.parse().map_err(|_| format!("bad step count `{k}`"))?;
            Ok(SolverSpec::midpoint(k))
        }
        ("rk4", [k]) => {
            let k: u32 = k.parse().map_err(|_| format!("bad step count `{k}`"))?;
            Ok(SolverSpec::rk4(k))
        }
        ("rk45", [tol]) => {
            let tol: f64 = tol.parse().map_err(|_| format!("bad tolerance `{tol}`"))?;
            Ok(SolverSpec::rk45(tol))
        }
        ("rk45", [ta, tr]) => {
            let ta: f64 = ta.parse().map_err(|_| format!("bad tolerance `{ta}`"))?;
            let tr: f64 = tr.parse().map_err(|_| format!("bad tolerance `{tr}`"))?;
            let mut spec = SolverSpec::rk45(ta);
            if let SolverSpec::Rk45 { tol_rel, .. } = &mut spec {
                *tol_rel = tr;
            }
            Ok(spec)
        }
        _ => Err(format!("unknown solver family `{family}`")),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::BadLine(lineno + 1))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut config = RunConfig::default();
        for (key, value) in kv {
            config.set(&key, &value)?;
        }
        Ok(config)
    }

    /// Apply one `key = value` assignment (also used for flag overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::BadValue { key: key.to_string(), msg };
        match key {
            "model" => self.model = value.to_string(),
            "dataset" => self.dataset = value.to_string(),
            "out" => self.out = value.to_string(),
            "method" => self.method = parse_solver_spec(value).map_err(bad)?,
            "ladder" => self.ladder = value.to_string(),
            "chains" => self.chains = value.parse().map_err(|e| bad(format!("{e}")))?,
            "iterations" => self.iterations = value.parse().map_err(|e| bad(format!("{e}")))?,
            "warmup" => self.warmup = value.parse().map_err(|e| bad(format!("{e}")))?,
            "init_stepsize" => self.init_stepsize = value.parse().map_err(|e| bad(format!("{e}")))?,
            "target_accept" => self.target_accept = value.parse().map_err(|e| bad(format!("{e}")))?,
            "max_treedepth" => self.max_treedepth = value.parse().map_err(|e| bad(format!("{e}")))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "delta_mae" => self.delta_mae = value.parse().map_err(|e| bad(format!("{e}")))?,
            "delta_khat" => self.delta_khat = value.parse().map_err(|e| bad(format!("{e}")))?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            iterations: self.iterations,
            warmup: self.warmup,
            init_stepsize: self.init_stepsize,
            target_accept: self.target_accept,
            max_treedepth: self.max_treedepth,
            seed: self.seed,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            delta_mae: self.delta_mae,
            delta_khat: self.delta_khat,
            ..Thresholds::default()
        }
    }

    pub fn method_ladder(&self) -> Result<MethodLadder, ConfigError> {
        if self.ladder.trim() == "default" {
            let mut ladder = MethodLadder::default_for(&self.method);
            ladder.thresholds = self.thresholds();
            return Ok(ladder);
        }
        let rungs: Result<Vec<SolverSpec>, String> =
            self.ladder.split(',').map(parse_solver_spec).collect();
        let rungs = rungs.map_err(|msg| ConfigError::BadValue {
            key: "ladder".into(),
            msg,
        })?;
        Ok(MethodLadder::new(rungs, self.thresholds())?)
    }

    /// Flat key=value rendering; `from_str` of the output reproduces `self`.
    pub fn print(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "out = {}", self.out);
        let _ = writeln!(s, "method = {}", self.method.label());
        let _ = writeln!(s, "ladder = {}", self.ladder);
        let _ = writeln!(s, "chains = {}", self.chains);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "init_stepsize = {}", self.init_stepsize);
        let _ = writeln!(s, "target_accept = {}", self.target_accept);
        let _ = writeln!(s, "max_treedepth = {}", self.max_treedepth);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "delta_mae = {}", self.delta_mae);
        let _ = writeln!(s, "delta_khat = {}", self.delta_khat);
        s
    }
}
