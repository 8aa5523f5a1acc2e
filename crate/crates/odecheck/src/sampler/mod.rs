//! Dynamic HMC (NUTS) with warmup adaptation, multi-chain execution, and
//! convergence diagnostics.

mod diagnostics;
mod nuts;

pub use diagnostics::{
    convergence_summary, ess_bulk, ess_tail, split_rhat, ConvergenceSummary, ParamDiagnostics,
};
pub use nuts::{leapfrog, nuts_sample, nuts_sample_target, ChainOutput, HmcTarget};

use serde::Serialize;
use thiserror::Error;

use crate::ode::SolverSpec;

#[derive(Debug, Clone, Error)]
pub enum SamplerError {
    #[error("initial point has non-finite density after {0} jittered retries")]
    InitializationFailure(usize),
    #[error("need at least 2 chains and 100 draws per chain, got {chains} x {draws}")]
    TooFewDraws { chains: usize, draws: usize },
    #[error("parameter `{0}` is constant across all draws")]
    DegenerateChains(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub init_stepsize: f64,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iterations: 4000,
            warmup: 2000,
            init_stepsize: 0.1,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn n_kept(&self) -> usize {
        self.iterations.saturating_sub(self.warmup)
    }
}

/// Per-draw sampler statistics, one record per kept iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct DrawStats {
    pub accept_stat: f64,
    pub treedepth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
}

/// Post-warmup draws from all chains, plus the per-draw quantities the
/// reliability workflow needs later: the log density under the sampling
/// method M and the M solution at the observation grid.
///
/// Layout: chain-major. Draw `(c, s)` occupies
/// `eta[(c * n_draws + s) * dim ..][..dim]` and
/// `solutions[(c * n_draws + s) * sol_len ..][..sol_len]`.
#[derive(Debug, Clone)]
pub struct Draws {
    pub param_names: Vec<String>,
    pub dim: usize,
    pub n_chains: usize,
    pub n_draws: usize,
    pub eta: Vec<f64>,
    /// Log density under M, from a plain-f64 re-evaluation (bit-for-bit
    /// reproducible; importance ratios against M itself are exactly zero).
    pub logp: Vec<f64>,
    pub solutions: Vec<f64>,
    /// Solution record length: n_output_times * ode_dim.
    pub sol_len: usize,
    pub stats: Vec<DrawStats>,
    /// Adapted step size per chain.
    pub stepsize: Vec<f64>,
    /// Solver spec of the sampling method M.
    pub method: SolverSpec,
}

impl Draws {
    pub fn total(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn eta_row(&self, c: usize, s: usize) -> &[f64] {
        let i = (c * self.n_draws + s) * self.dim;
        &self.eta[i..i + self.dim]
    }

    pub fn flat_eta(&self, idx: usize) -> &[f64] {
        &self.eta[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn flat_solution(&self, idx: usize) -> &[f64] {
        &self.solutions[idx * self.sol_len..(idx + 1) * self.sol_len]
    }

    /// Draws of one parameter as chain-major series (for diagnostics).
    pub fn param_series(&self, p: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|s| self.eta_row(c, s)[p]).collect())
            .collect()
    }
}

/// Per-chain summary in the Table 2 vocabulary.
#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub mean_accept_stat: f64,
    pub stepsize: f64,
    pub mean_treedepth: f64,
    pub mean_n_leapfrog: f64,
    pub divergence_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerDiagnostics {
    pub chains: Vec<ChainDiagnostics>,
    pub wall_seconds: f64,
    pub total_rhs_evals: u64,
}
