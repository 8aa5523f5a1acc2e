//! Rank-normalized split-R-hat and bulk/tail effective sample sizes.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Draws, SamplerError};

#[derive(Debug, Clone, Serialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSummary {
    pub params: Vec<ParamDiagnostics>,
    pub max_rhat: f64,
    pub min_ess_bulk: f64,
    pub min_ess_tail: f64,
}

fn inv_phi(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Split each chain into halves (the middle draw is dropped when odd).
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Pooled average ranks mapped through the normal quantile function with the
/// (r - 3/8)/(S + 1/4) offset.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let total = chains.len() * n;
    let mut order: Vec<(usize, usize)> = (0..chains.len())
        .flat_map(|c| (0..n).map(move |i| (c, i)))
        .collect();
    order.sort_by(|a, b| chains[a.0][a.1].partial_cmp(&chains[b.0][b.1]).unwrap());

    let mut z = vec![vec![0.0; n]; chains.len()];
    let mut i = 0;
    while i < total {
        // average rank over the tie run
        let mut j = i;
        let v = chains[order[i].0][order[i].1];
        while j < total && chains[order[j].0][order[j].1] == v {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // mean of ranks i+1 ..= j
        let zv = inv_phi((avg_rank - 0.375) / (total as f64 + 0.25));
        for &(c, k) in &order[i..j] {
            z[c][k] = zv;
        }
        i = j;
    }
    z
}

fn chain_mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Within-chain variance W, between-chain variance B, pooled variance
/// estimate var+ for equal-length prepared chains.
fn variances(chains: &[Vec<f64>]) -> (f64, f64) {
    let c = chains.len() as f64;
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|ch| chain_mean_var(ch)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / c;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / c;
    let b = n * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (c - 1.0);
    let var_plus = (n - 1.0) / n * w + b / n;
    (w, var_plus)
}

fn rhat_prepared(chains: &[Vec<f64>]) -> f64 {
    let (w, var_plus) = variances(chains);
    if w <= 0.0 {
        return f64::INFINITY;
    }
    (var_plus / w).sqrt()
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - mean) * (x[i + lag] - mean);
    }
    s / n as f64
}

/// ESS with Geyer's initial-monotone positive-pair truncation.
fn ess_prepared(chains: &[Vec<f64>]) -> f64 {
    let c = chains.len() as f64;
    let n = chains[0].len();
    let total = c * n as f64;
    let (w, var_plus) = variances(chains);
    if !(var_plus > 0.0) || w <= 0.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|ch| chain_mean_var(ch).0).collect();
    let rho = |t: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&means)
            .map(|(ch, &m)| autocovariance(ch, m, t))
            .sum::<f64>()
            / c;
        1.0 - (w - mean_acov) / var_plus
    };
    let rho0 = rho(0);
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev); // enforce monotone nonincreasing
        sum_pairs += pair;
        prev = pair;
        t += 2;
    }
    let tau = (2.0 * sum_pairs - rho0).max(1.0 / total.log10().max(1.0));
    (total / tau).min(total * total.log10())
}

/// Split-R-hat on rank-normalized draws: max of the bulk statistic and the
/// folded (tail-sensitive) statistic.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let bulk = rhat_prepared(&rank_normalize(&split));
    let pooled_median = {
        let mut all: Vec<f64> = split.iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all[all.len() / 2]
    };
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|ch| ch.iter().map(|&v| (v - pooled_median).abs()).collect())
        .collect();
    let tail = rhat_prepared(&rank_normalize(&folded));
    bulk.max(tail)
}

pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    ess_prepared(&rank_normalize(&split))
}

fn pooled_quantile(chains: &[Vec<f64>], q: f64) -> f64 {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((all.len() as f64 - 1.0) * q).round() as usize;
    all[idx]
}

/// Minimum ESS of the 5% and 95% quantile-indicator chains.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    let mut worst = f64::INFINITY;
    for q in [0.05, 0.95] {
        let cut = pooled_quantile(chains, q);
        let indicators: Vec<Vec<f64>> = chains
            .iter()
            .map(|ch| ch.iter().map(|&v| f64::from(u8::from(v <= cut))).collect())
            .collect();
        let e = ess_prepared(&split_chains(&indicators));
        if e.is_nan() {
            return f64::NAN;
        }
        worst = worst.min(e);
    }
    worst
}

/// Table 1 vocabulary: per-parameter split-R-hat, bulk ESS, tail ESS.
pub fn convergence_summary(draws: &Draws) -> Result<ConvergenceSummary, SamplerError> {
    if draws.n_chains < 2 || draws.n_draws < 100 {
        return Err(SamplerError::TooFewDraws {
            chains: draws.n_chains,
            draws: draws.n_draws,
        });
    }
    let mut params = Vec::with_capacity(draws.dim);
    for p in 0..draws.dim {
        let series = draws.param_series(p);
        let first = series[0][0];
        if series.iter().flatten().all(|&v| v == first) {
            return Err(SamplerError::DegenerateChains(draws.param_names[p].clone()));
        }
        params.push(ParamDiagnostics {
            name: draws.param_names[p].clone(),
            rhat: split_rhat(&series),
            ess_bulk: ess_bulk(&series),
            ess_tail: ess_tail(&series),
        });
    }
    let max_rhat = params.iter().map(|p| p.rhat).fold(f64::NEG_INFINITY, f64::max);
    let min_ess_bulk = params.iter().map(|p| p.ess_bulk).fold(f64::INFINITY, f64::min);
    let min_ess_tail = params.iter().map(|p| p.ess_tail).fold(f64::INFINITY, f64::min);
    Ok(ConvergenceSummary {
        params,
        max_rhat,
        min_ess_bulk,
        min_ess_tail,
    })
}
