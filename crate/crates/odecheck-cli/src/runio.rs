//! Model construction and run-directory artifacts: the manifest, per-chain
//! draw CSVs (Table 2 vocabulary), and the full-precision state files that
//! `check`/`estimate` reload.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use odecheck::models::{
    plugin::PluginModel, Dataset, LotkaVolterraModel, ModelError, PosteriorModel, TmddModel,
};
use odecheck::ode::{Ivp, OdeError, Solution, SolverSpec};
use odecheck::sampler::{ConvergenceSummary, DrawStats, Draws, SamplerDiagnostics};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum RunIoError {
    #[error("{0}")]
    Io(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("run directory {0} has no manifest (run `sample` first)")]
    NoManifest(PathBuf),
    #[error("malformed {file}: {msg}")]
    Malformed { file: String, msg: String },
}

fn io_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> RunIoError + '_ {
    move |e| RunIoError::Io(format!("{}: {e}", path.display()))
}

// --- models ----------------------------------------------------------------

pub enum AnyModel {
    Tmdd(TmddModel),
    Lv(LotkaVolterraModel),
    Plugin(PluginModel),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Tmdd($m) => $body,
            AnyModel::Lv($m) => $body,
            AnyModel::Plugin($m) => $body,
        }
    };
}

impl PosteriorModel for AnyModel {
    fn name(&self) -> &str {
        delegate!(self, m => m.name())
    }
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }
    fn ode_dim(&self) -> usize {
        delegate!(self, m => m.ode_dim())
    }
    fn param_names(&self) -> Vec<String> {
        delegate!(self, m => m.param_names())
    }
    fn dataset(&self) -> &Dataset {
        delegate!(self, m => m.dataset())
    }
    fn ivp(&self) -> &Ivp {
        delegate!(self, m => m.ivp())
    }
    fn init_eta(&self) -> Vec<f64> {
        delegate!(self, m => m.init_eta())
    }
    fn log_prior<S: odecheck::scalar::Scalar>(&self, theta: &[S]) -> Result<S, ModelError> {
        delegate!(self, m => m.log_prior(theta))
    }
    fn log_likelihood<S: odecheck::scalar::Scalar>(
        &self,
        theta: &[S],
        sol: &Solution<S>,
    ) -> Option<S> {
        delegate!(self, m => m.log_likelihood(theta, sol))
    }
    fn solve_ode<S: odecheck::scalar::Scalar>(
        &self,
        theta: &[S],
        spec: &SolverSpec,
    ) -> Result<Solution<S>, OdeError> {
        delegate!(self, m => m.solve_ode(theta, spec))
    }
}

/// Build the model named in the config. An empty dataset path means the
/// model default: the bundled Hudson Bay data for `lotka-volterra`,
/// simulation from the run seed for `tmdd`.
pub fn build_model(config: &RunConfig) -> Result<AnyModel, RunIoError> {
    match config.model.as_str() {
        "tmdd" => {
            if config.dataset.is_empty() {
                Ok(AnyModel::Tmdd(TmddModel::with_simulated_data(config.seed)))
            } else {
                let ds = Dataset::from_path(Path::new(&config.dataset))?;
                Ok(AnyModel::Tmdd(TmddModel::new(ds)?))
            }
        }
        "lotka-volterra" => {
            if config.dataset.is_empty() {
                Ok(AnyModel::Lv(LotkaVolterraModel::with_bundled_data()))
            } else {
                let ds = Dataset::from_path(Path::new(&config.dataset))?;
                Ok(AnyModel::Lv(LotkaVolterraModel::new(ds)?))
            }
        }
        path => {
            if config.dataset.is_empty() {
                return Err(RunIoError::Model(ModelError::Dataset(
                    "plugin models require an explicit `dataset` path".into(),
                )));
            }
            let ds = Dataset::from_path(Path::new(&config.dataset))?;
            Ok(AnyModel::Plugin(PluginModel::from_file(Path::new(path), ds)?))
        }
    }
}

// --- manifest --------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub method: SolverSpec,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub init_stepsize: f64,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub param_names: Vec<String>,
    pub sol_len: usize,
    pub stepsize: Vec<f64>,
    pub wall_seconds: f64,
    pub total_rhs_evals: u64,
    /// Absent when the run is too small for diagnostics (< 2 chains or
    /// < 100 kept draws per chain).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rhat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ess_bulk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ess_tail: Option<f64>,
}

// --- writing a run ---------------------------------------------------------

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), RunIoError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(io_err(&path))
}

pub fn write_run(
    dir: &Path,
    config: &RunConfig,
    model: &AnyModel,
    draws: &Draws,
    diagnostics: &SamplerDiagnostics,
    convergence: Option<&ConvergenceSummary>,
) -> Result<(), RunIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = Manifest {
        model: config.model.clone(),
        dataset: config.dataset.clone(),
        seed: config.seed,
        method: draws.method.clone(),
        chains: config.chains,
        iterations: config.iterations,
        warmup: config.warmup,
        init_stepsize: config.init_stepsize,
        target_accept: config.target_accept,
        max_treedepth: config.max_treedepth,
        param_names: draws.param_names.clone(),
        sol_len: draws.sol_len,
        stepsize: draws.stepsize.clone(),
        wall_seconds: diagnostics.wall_seconds,
        total_rhs_evals: diagnostics.total_rhs_evals,
        max_rhat: convergence.map(|c| c.max_rhat),
        min_ess_bulk: convergence.map(|c| c.min_ess_bulk),
        min_ess_tail: convergence.map(|c| c.min_ess_tail),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| RunIoError::Io(format!("manifest: {e}")))?;
    write_file(dir, "run.json", &json)?;

    // per-chain draw CSVs: constrained parameters, Table 2 vocabulary
    for c in 0..draws.n_chains {
        let mut s = String::from("chain,iter");
        for name in &draws.param_names {
            let _ = write!(s, ",{name}");
        }
        s.push_str(",lp__,accept_stat,stepsize,treedepth,n_leapfrog,divergent\n");
        for i in 0..draws.n_draws {
            let idx = c * draws.n_draws + i;
            let _ = write!(s, "{c},{i}");
            for &eta in draws.flat_eta(idx) {
                let _ = write!(s, ",{}", eta.exp());
            }
            let st = draws.stats[idx];
            let _ = writeln!(
                s,
                ",{},{},{},{},{},{}",
                draws.logp[idx],
                st.accept_stat,
                draws.stepsize[c],
                st.treedepth,
                st.n_leapfrog,
                u8::from(st.divergent)
            );
        }
        write_file(dir, &format!("draws_chain{c}.csv"), &s)?;
    }

    // full-precision state files: unconstrained draws + stored M solutions
    for c in 0..draws.n_chains {
        let mut s = String::from("iter");
        for name in &draws.param_names {
            let _ = write!(s, ",eta_{name}");
        }
        s.push_str(",lp__");
        for j in 0..draws.sol_len {
            let _ = write!(s, ",y{j}");
        }
        s.push('\n');
        for i in 0..draws.n_draws {
            let idx = c * draws.n_draws + i;
            let _ = write!(s, "{i}");
            for &eta in draws.flat_eta(idx) {
                let _ = write!(s, ",{eta}");
            }
            let _ = write!(s, ",{}", draws.logp[idx]);
            for &y in draws.flat_solution(idx) {
                let _ = write!(s, ",{y}");
            }
            s.push('\n');
        }
        write_file(dir, &format!("state_chain{c}.csv"), &s)?;
    }

    // convergence table (Table 1 vocabulary) with a worst-case row
    if let Some(conv) = convergence {
        let mut s = String::from("param,rhat,ess_bulk,ess_tail\n");
        for p in &conv.params {
            let _ = writeln!(s, "{},{},{},{}", p.name, p.rhat, p.ess_bulk, p.ess_tail);
        }
        let _ = writeln!(
            s,
            "(worst),{},{},{}",
            conv.max_rhat, conv.min_ess_bulk, conv.min_ess_tail
        );
        write_file(dir, "convergence.csv", &s)?;
    }

    // per-chain sampler diagnostics (Table 2 vocabulary)
    let mut s =
        String::from("chain,accept_stat,stepsize,treedepth,n_leapfrog,divergent\n");
    for ch in &diagnostics.chains {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            ch.chain,
            ch.mean_accept_stat,
            ch.stepsize,
            ch.mean_treedepth,
            ch.mean_n_leapfrog,
            ch.divergence_fraction
        );
    }
    write_file(dir, "diagnostics.csv", &s)?;

    let _ = model;
    Ok(())
}

// --- reading a run back ----------------------------------------------------

pub fn read_manifest(dir: &Path) -> Result<Manifest, RunIoError> {
    let path = dir.join("run.json");
    if !path.exists() {
        return Err(RunIoError::NoManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunIoError::Malformed {
        file: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn read_draws(dir: &Path, manifest: &Manifest) -> Result<Draws, RunIoError> {
    let dim = manifest.param_names.len();
    let sol_len = manifest.sol_len;
    let n_draws = manifest.iterations - manifest.warmup;
    let mut eta = Vec::with_capacity(manifest.chains * n_draws * dim);
    let mut logp = Vec::with_capacity(manifest.chains * n_draws);
    let mut solutions = Vec::with_capacity(manifest.chains * n_draws * sol_len);
    let mut stats = Vec::with_capacity(manifest.chains * n_draws);

    for c in 0..manifest.chains {
        let name = format!("state_chain{c}.csv");
        let path = dir.join(&name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let malformed = |msg: String| RunIoError::Malformed {
            file: name.clone(),
            msg,
        };
        let mut rows = 0usize;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + dim + 1 + sol_len {
                return Err(malformed(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    1 + dim + 1 + sol_len,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, RunIoError> {
                s.parse()
                    .map_err(|_| malformed(format!("line {}: bad float `{s}`", lineno + 1)))
            };
            for f in &fields[1..1 + dim] {
                eta.push(parse(f)?);
            }
            logp.push(parse(fields[1 + dim])?);
            for f in &fields[2 + dim..] {
                solutions.push(parse(f)?);
            }
            rows += 1;
        }
        if rows != n_draws {
            return Err(malformed(format!("expected {n_draws} draws, got {rows}")));
        }

        // per-draw sampler stats from the display CSV
        let name = format!("draws_chain{c}.csv");
        let path = dir.join(&name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let expect = 2 + dim + 6;
            if fields.len() != expect {
                return Err(RunIoError::Malformed {
                    file: name.clone(),
                    msg: format!("line {}: expected {expect} fields", lineno + 1),
                });
            }
            let base = 2 + dim + 1;
            let parse_f = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
            stats.push(DrawStats {
                accept_stat: parse_f(fields[base]),
                treedepth: fields[base + 2].parse().unwrap_or(0),
                n_leapfrog: fields[base + 3].parse().unwrap_or(0),
                divergent: fields[base + 4].trim() == "1",
            });
        }
    }

    Ok(Draws {
        param_names: manifest.param_names.clone(),
        dim,
        n_chains: manifest.chains,
        n_draws,
        eta,
        logp,
        solutions,
        sol_len,
        stats,
        stepsize: manifest.stepsize.clone(),
        method: manifest.method.clone(),
    })
}
