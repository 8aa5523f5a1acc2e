//! `odecheck`: sample an ODE posterior with a cheap solver, then verify the
//! result against finer solvers via Pareto-smoothed importance sampling.
//!
//! Exit codes partition outcomes: 0 success/accept, 2 usage or configuration
//! error, 3 runtime failure, 10 resample verdict.

mod config;
mod runio;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odecheck::models::{simulate_tmdd_data, PosteriorModel};
use odecheck::sampler::{convergence_summary, nuts_sample};
use odecheck::workflow::{
    corrected_estimates, run_reliability_check, WorkflowError, WorkflowVerdict,
};

use config::{ConfigError, RunConfig};
use runio::{build_model, read_draws, read_manifest, RunIoError};

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_RESAMPLE: u8 = 10;

#[derive(Parser)]
#[command(
    name = "odecheck",
    about = "Bayesian ODE inference with solver-reliability checking",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset for a model with a bundled simulator (tmdd).
    Simulate(Common),
    /// Run NUTS with the sampling method M and write draws + diagnostics.
    Sample(Common),
    /// Run the reliability check against a ladder of finer solvers.
    Check(Common),
    /// Importance-corrected posterior estimates from an accepted check.
    Estimate(Common),
    /// Echo the effective configuration (round-trips through the parser).
    PrintConfig(Common),
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Simulate(c)
            | Cmd::Sample(c)
            | Cmd::Check(c)
            | Cmd::Estimate(c)
            | Cmd::PrintConfig(c) => c,
        }
    }
}

/// Every config key doubles as a flag; flags win over the config file.
/// Values stay strings here and go through `RunConfig::set` so the file
/// parser and the flag parser validate identically.
#[derive(Args)]
struct Common {
    /// Flat key=value config file (defaults apply for absent keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global thread cap (also: env ODECHECK_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Model: tmdd, lotka-volterra, or a plugin interface file path.
    #[arg(long)]
    model: Option<String>,
    /// Dataset CSV path (empty = the model's bundled/simulated default).
    #[arg(long)]
    dataset: Option<String>,
    /// Output/run directory.
    #[arg(long)]
    out: Option<String>,
    /// Sampling method M, e.g. rk45(1e-3), rk4(20), midpoint(40).
    #[arg(long)]
    method: Option<String>,
    /// Ladder: "default" or comma-separated solver specs.
    #[arg(long)]
    ladder: Option<String>,
    #[arg(long)]
    chains: Option<String>,
    #[arg(long = "iters", alias = "iterations")]
    iterations: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    init_stepsize: Option<String>,
    #[arg(long)]
    target_accept: Option<String>,
    #[arg(long)]
    max_treedepth: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    delta_mae: Option<String>,
    #[arg(long)]
    delta_khat: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path).map_err(usage)?,
            None => RunConfig::default(),
        };
        let overrides: [(&str, &Option<String>); 13] = [
            ("model", &self.model),
            ("dataset", &self.dataset),
            ("out", &self.out),
            ("method", &self.method),
            ("ladder", &self.ladder),
            ("chains", &self.chains),
            ("iterations", &self.iterations),
            ("warmup", &self.warmup),
            ("init_stepsize", &self.init_stepsize),
            ("target_accept", &self.target_accept),
            ("max_treedepth", &self.max_treedepth),
            ("seed", &self.seed),
            ("delta_mae", &self.delta_mae),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).map_err(usage)?;
            }
        }
        if let Some(v) = &self.delta_khat {
            cfg.set("delta_khat", v).map_err(usage)?;
        }
        Ok(cfg)
    }
}

struct Failure {
    code: u8,
    msg: String,
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: e.to_string(),
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        msg: e.to_string(),
    }
}

/// Model/dataset construction problems are configuration errors (exit 2).
fn from_runio(e: RunIoError) -> Failure {
    usage(e)
}

fn from_workflow(e: WorkflowError) -> Failure {
    match e {
        WorkflowError::LadderTooShort(_) | WorkflowError::LadderNotRefining(_) => usage(e),
        other => runtime(other),
    }
}

fn init_threads(common: &Common) -> Result<(), Failure> {
    let n = match common.threads {
        Some(n) => Some(n),
        None => match std::env::var("ODECHECK_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| usage(format!("ODECHECK_THREADS: bad value `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = init_threads(cli.cmd.common()) {
        eprintln!("error: {}", f.msg);
        return ExitCode::from(f.code);
    }
    let result = match &cli.cmd {
        Cmd::Simulate(c) => c.resolve().and_then(|cfg| cmd_simulate(&cfg)),
        Cmd::Sample(c) => c.resolve().and_then(|cfg| cmd_sample(&cfg)),
        Cmd::Check(c) => c
            .resolve()
            .and_then(|cfg| cmd_check(&cfg, c.method.is_some())),
        Cmd::Estimate(c) => c
            .resolve()
            .and_then(|cfg| cmd_estimate(&cfg, c.method.is_some())),
        Cmd::PrintConfig(c) => c.resolve().and_then(|cfg| {
            print!("{}", cfg.print());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.model != "tmdd" {
        return Err(usage(format!(
            "model `{}` has no simulator; the bundled Hudson Bay dataset ships at \
             crates/odecheck/data/hudson_bay_lynx_hare.csv",
            cfg.model
        )));
    }
    let dataset = simulate_tmdd_data(cfg.seed);
    let dir = Path::new(&cfg.out);
    fs::create_dir_all(dir).map_err(runtime)?;
    let path = dir.join("tmdd.csv");
    let file = fs::File::create(&path).map_err(runtime)?;
    dataset.write(file).map_err(runtime)?;
    println!(
        "simulated {} observations (seed {}) with reference solver rk45(1e-12)",
        dataset.n_rows(),
        cfg.seed
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sample(cfg: &RunConfig) -> Result<(), Failure> {
    let model = build_model(cfg).map_err(from_runio)?;
    let sc = cfg.sampler_config();
    println!(
        "sampling {}: {} chains x {} iterations ({} warmup), M = {}, seed {}",
        model.name(),
        sc.chains,
        sc.iterations,
        sc.warmup,
        cfg.method.label(),
        sc.seed
    );
    let (draws, diagnostics) = nuts_sample(&model, &cfg.method, &sc).map_err(runtime)?;
    // diagnostics need >= 2 chains and >= 100 kept draws per chain; smaller
    // smoke runs still succeed, without a convergence table
    let convergence = convergence_summary(&draws).ok();

    let dir = Path::new(&cfg.out);
    runio::write_run(dir, cfg, &model, &draws, &diagnostics, convergence.as_ref())
        .map_err(|e| runtime(e))?;

    match &convergence {
        Some(conv) => {
            println!("\nconvergence (rank-normalized split diagnostics):");
            println!("  {:<12} {:>8} {:>10} {:>10}", "param", "rhat", "ess_bulk", "ess_tail");
            for p in &conv.params {
                println!(
                    "  {:<12} {:>8.4} {:>10.1} {:>10.1}",
                    p.name, p.rhat, p.ess_bulk, p.ess_tail
                );
            }
            println!(
                "  max_rhat = {:.4}, min_ess_bulk = {:.1}, min_ess_tail = {:.1}",
                conv.max_rhat, conv.min_ess_bulk, conv.min_ess_tail
            );
        }
        None => println!(
            "\nrun too small for convergence diagnostics (need >= 2 chains, >= 100 kept draws)"
        ),
    }

    println!("\nsampler diagnostics:");
    println!(
        "  {:<5} {:>11} {:>10} {:>9} {:>10} {:>9}",
        "chain", "accept_stat", "stepsize", "treedepth", "n_leapfrog", "divergent"
    );
    for ch in &diagnostics.chains {
        println!(
            "  {:<5} {:>11.3} {:>10.4} {:>9.2} {:>10.1} {:>9.4}",
            ch.chain,
            ch.mean_accept_stat,
            ch.stepsize,
            ch.mean_treedepth,
            ch.mean_n_leapfrog,
            ch.divergence_fraction
        );
    }
    println!(
        "\nruntime {:.2} s, {} rhs evaluations",
        diagnostics.wall_seconds, diagnostics.total_rhs_evals
    );
    println!("run written to {}", dir.display());
    Ok(())
}

/// Load a stored run and rebuild its model and draws. An explicit `--method`
/// must match the M defined in the run's manifest (exit 2 otherwise).
fn load_run(
    cfg: &RunConfig,
    method_flag: bool,
) -> Result<(runio::AnyModel, odecheck::sampler::Draws), Failure> {
    let dir = PathBuf::from(&cfg.out);
    let manifest = read_manifest(&dir).map_err(from_runio)?;
    if method_flag && cfg.method != manifest.method {
        return Err(usage(format!(
            "method mismatch: run {} was sampled with M = {}, got --method {}",
            dir.display(),
            manifest.method.label(),
            cfg.method.label()
        )));
    }
    let mut model_cfg = cfg.clone();
    model_cfg.model = manifest.model.clone();
    model_cfg.dataset = manifest.dataset.clone();
    model_cfg.seed = manifest.seed;
    let model = build_model(&model_cfg).map_err(from_runio)?;
    let draws = read_draws(&dir, &manifest).map_err(from_runio)?;
    Ok((model, draws))
}

fn cmd_check(cfg: &RunConfig, method_flag: bool) -> Result<(), Failure> {
    let (model, draws) = load_run(cfg, method_flag)?;
    let mut ladder_cfg = cfg.clone();
    ladder_cfg.method = draws.method;
    let ladder = ladder_cfg.method_ladder().map_err(|e| match e {
        ConfigError::Ladder(w) => from_workflow(w),
        other => usage(other),
    })?;

    println!(
        "reliability check: M = {}, ladder [{}]",
        draws.method.label(),
        ladder
            .rungs
            .iter()
            .map(|r| r.label())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let report = run_reliability_check(&draws, &model, &ladder).map_err(from_workflow)?;

    let dir = Path::new(&cfg.out);
    let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
    fs::write(dir.join("report.json"), json).map_err(runtime)?;
    let mut csv = String::from("method,mae,max_ratio,khat,r_eff\n");
    for r in &report.rungs {
        let _ = writeln!(csv, "{},{},{},{},{}", r.method, r.mae, r.max_ratio, r.khat, r.r_eff);
    }
    fs::write(dir.join("rungs.csv"), csv).map_err(runtime)?;

    println!("\n  {:<16} {:>12} {:>12} {:>9} {:>8}", "method", "mae", "max_ratio", "khat", "r_eff");
    for r in &report.rungs {
        println!(
            "  {:<16} {:>12.4e} {:>12.4e} {:>9.3} {:>8.4}",
            r.method, r.mae, r.max_ratio, r.khat, r.r_eff
        );
    }
    match &report.verdict {
        WorkflowVerdict::Accept => {
            println!(
                "\nverdict: accept (converged at rung {}, khat < 0.7)",
                report.converged_rung.expect("accept implies convergence")
            );
            Ok(())
        }
        WorkflowVerdict::Resample { suggested_method } => {
            if let Some(note) = &report.note {
                println!("\n{note}");
            }
            println!("verdict: resample with a finer M, e.g. {suggested_method}");
            Err(Failure {
                code: EXIT_RESAMPLE,
                msg: "reliability check returned a resample verdict".into(),
            })
        }
    }
}

fn cmd_estimate(cfg: &RunConfig, method_flag: bool) -> Result<(), Failure> {
    let (model, draws) = load_run(cfg, method_flag)?;
    let mut ladder_cfg = cfg.clone();
    ladder_cfg.method = draws.method;
    let ladder = ladder_cfg.method_ladder().map_err(|e| match e {
        ConfigError::Ladder(w) => from_workflow(w),
        other => usage(other),
    })?;
    let report = run_reliability_check(&draws, &model, &ladder).map_err(from_workflow)?;
    if let WorkflowVerdict::Resample { suggested_method } = &report.verdict {
        return Err(Failure {
            code: EXIT_RESAMPLE,
            msg: format!(
                "cannot estimate: resample verdict; sample again with e.g. {suggested_method}"
            ),
        });
    }
    let estimates = corrected_estimates(&draws, &model, &report).map_err(from_workflow)?;

    let dir = Path::new(&cfg.out);
    let mut csv = String::from("param,mean,mcse,q5,q50,q95\n");
    for e in &estimates {
        let _ = writeln!(csv, "{},{},{},{},{},{}", e.name, e.mean, e.mcse, e.q5, e.q50, e.q95);
    }
    fs::write(dir.join("estimates.csv"), csv).map_err(runtime)?;

    println!("importance-corrected posterior estimates (constrained scale):");
    println!(
        "  {:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "param", "mean", "mcse", "q5", "q50", "q95"
    );
    for e in &estimates {
        println!(
            "  {:<12} {:>10.4} {:>10.2e} {:>10.4} {:>10.4} {:>10.4}",
            e.name, e.mean, e.mcse, e.q5, e.q50, e.q95
        );
    }
    println!("wrote {}", dir.join("estimates.csv").display());
    Ok(())
}
