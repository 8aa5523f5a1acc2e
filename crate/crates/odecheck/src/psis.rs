//! Pareto smoothed importance sampling between solver-induced posteriors:
//! log importance ratios, generalized-Pareto tail fitting (Zhang–Stephens),
//! smoothing, the k-hat reliability diagnostic, and self-normalized
//! estimates.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::models::{unnorm_log_posterior, PosteriorModel};
use crate::ode::{OdeSolution, SolverSpec};
use crate::sampler::Draws;

/// k-hat sentinel for a degenerate (zero-range) ratio tail.
pub const KHAT_DEGENERATE: f64 = f64::NEG_INFINITY;
/// Reliability threshold: k-hat below this certifies the correction.
pub const KHAT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PsisError {
    #[error("need at least {need} finite log ratios, got {got}")]
    TooFewRatios { need: usize, got: usize },
    #[error("all tail ratios are equal; GPD fit is degenerate")]
    DegenerateTail,
    #[error("all importance weights are zero")]
    AllZeroWeights,
    #[error("{0}")]
    DomainError(String),
}

/// Per-draw log r_s = log P under M* minus the stored log P under M.
/// Failed M* evaluations carry -inf and a failure flag; they are excluded
/// from the tail fit and get zero weight, never silently dropped.
#[derive(Debug, Clone)]
pub struct LogRatios {
    pub log_r: Vec<f64>,
    pub failed: Vec<bool>,
    pub method: String,
    pub method_star: String,
}

impl LogRatios {
    pub fn from_values(log_r: Vec<f64>) -> Self {
        let failed = log_r.iter().map(|v| !v.is_finite()).collect();
        LogRatios {
            log_r,
            failed,
            method: String::new(),
            method_star: String::new(),
        }
    }

    pub fn n_failed(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.log_r
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GpdFit {
    /// Tail cutoff in (max-scaled) ratio space.
    pub u: f64,
    pub sigma: f64,
    pub k: f64,
    pub tail_len: usize,
}

#[derive(Debug, Clone)]
pub struct PsisResult {
    /// Smoothed weights, normalized to sum to one; zero for failed draws.
    pub weights: Vec<f64>,
    pub khat: f64,
    pub r_eff: f64,
    pub tail_len: usize,
}

/// The M* solutions produced while computing ratios, shared with the MAE
/// computation in the workflow.
#[derive(Debug)]
pub struct StarEvaluation {
    pub ratios: LogRatios,
    /// Per-draw M* solution (observation grid), `None` where M* failed.
    pub solutions: Vec<Option<OdeSolution>>,
    pub rhs_evals: u64,
}

/// Re-evaluate every stored draw under the more accurate method M* and
/// subtract the stored M log density (Eq. numbering follows the importance
/// ratio r_s = P(Y^{M*}, theta_s) / P(Y^M, theta_s)).
pub fn compute_log_ratios<M: PosteriorModel>(
    draws: &Draws,
    model: &M,
    spec_star: &SolverSpec,
) -> StarEvaluation {
    let results: Vec<(f64, Option<OdeSolution>, u64)> = (0..draws.total())
        .into_par_iter()
        .map(|s| {
            let eta = draws.flat_eta(s);
            match unnorm_log_posterior(model, eta, spec_star) {
                Ok(ev) => {
                    let work = ev.solution.stats.rhs_evals;
                    (ev.logp - draws.logp[s], Some(ev.solution), work)
                }
                Err(inv) => (f64::NEG_INFINITY, None, inv.stats.rhs_evals),
            }
        })
        .collect();

    let mut log_r = Vec::with_capacity(results.len());
    let mut failed = Vec::with_capacity(results.len());
    let mut solutions = Vec::with_capacity(results.len());
    let mut rhs_evals = 0u64;
    for (r, sol, work) in results {
        failed.push(sol.is_none());
        log_r.push(r);
        solutions.push(sol);
        rhs_evals += work;
    }
    StarEvaluation {
        ratios: LogRatios {
            log_r,
            failed,
            method: draws.method.label(),
            method_star: spec_star.label(),
        },
        solutions,
        rhs_evals,
    }
}

/// Two-branch GPD density: `(1/sigma) (1 + k (x-u)/sigma)^(-1/k - 1)`, with
/// the exponential limit at k = 0.
pub fn gpd_density(x: f64, u: f64, sigma: f64, k: f64) -> Result<f64, PsisError> {
    if !(sigma > 0.0) {
        return Err(PsisError::DomainError("sigma must be positive".into()));
    }
    let z = (x - u) / sigma;
    if z < 0.0 || (k < 0.0 && z > -1.0 / k) {
        return Err(PsisError::DomainError(format!("x = {x} outside GPD support")));
    }
    if k == 0.0 {
        Ok((-z).exp() / sigma)
    } else {
        Ok((1.0 + k * z).powf(-1.0 / k - 1.0) / sigma)
    }
}

/// GPD quantile function at probability `p`.
fn gpd_quantile(p: f64, u: f64, sigma: f64, k: f64) -> f64 {
    if k == 0.0 {
        u - sigma * (1.0 - p).ln()
    } else {
        u + sigma / k * ((1.0 - p).powf(-k) - 1.0)
    }
}

/// Tail size rule: min(ceil(0.2 S), ceil(3 sqrt(S))).
fn tail_len(s: usize) -> usize {
    let a = (0.2 * s as f64).ceil() as usize;
    let b = (3.0 * (s as f64).sqrt()).ceil() as usize;
    a.min(b)
}

/// Zhang–Stephens empirical-Bayes profile-likelihood estimate of (k, sigma)
/// for exceedances `x` (all > 0, ascending). Returns the *raw* shape.
fn zhang_stephens(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let m = 30 + (nf.sqrt() as usize);
    // grid scale: the lower quartile, or the smallest positive exceedance
    // when the quartile underflowed to zero (ratios spanning thousands of
    // nats collapse to 0 after max-scaling)
    let x_star = {
        let q = x[(nf / 4.0 + 0.5).floor() as usize - 1];
        if q > 0.0 {
            q
        } else {
            x.iter().copied().find(|&v| v > 0.0).expect("nonzero tail range")
        }
    };
    let x_max = x[n - 1];

    // grid over b = -k/sigma, profile log-likelihood per grid point
    let mut bs = Vec::with_capacity(m);
    let mut lls = Vec::with_capacity(m);
    for j in 1..=m {
        let b = 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * x_star);
        let k = x.iter().map(|&xi| (-b * xi).ln_1p()).sum::<f64>() / nf;
        let ll = if b == 0.0 || k == 0.0 {
            // b -> 0 is the exponential limit; never hit on this grid
            f64::NEG_INFINITY
        } else {
            nf * ((-b / k).ln() - k - 1.0)
        };
        bs.push(b);
        lls.push(ll);
    }

    // posterior-weighted average of b over the grid
    let ll_max = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut wsum = 0.0;
    let mut b_hat = 0.0;
    for (b, ll) in bs.iter().zip(&lls) {
        let w = (ll - ll_max).exp();
        wsum += w;
        b_hat += w * b;
    }
    b_hat /= wsum;

    let k_raw = x.iter().map(|&xi| (-b_hat * xi).ln_1p()).sum::<f64>() / nf;
    let sigma = -k_raw / b_hat;
    (k_raw, sigma)
}

/// Fit the GPD to the ratio tail. Ratios are exponentiated with
/// max-subtraction first (scale drops out of k and of the normalized
/// weights), so `u` and `sigma` live on the max-scaled ratio axis.
pub fn fit_gpd_tail(ratios: &LogRatios) -> Result<GpdFit, PsisError> {
    let finite: Vec<f64> = ratios.log_r.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 25 {
        return Err(PsisError::TooFewRatios {
            need: 25,
            got: finite.len(),
        });
    }
    let s = finite.len();
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut x: Vec<f64> = finite.iter().map(|v| (v - max).exp()).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let m_tail = tail_len(s);
    let u = x[s - m_tail - 1]; // the (S - M_tail)-th order statistic
    let exceed: Vec<f64> = x[s - m_tail..].iter().map(|&v| v - u).collect();
    if exceed[m_tail - 1] - exceed[0] <= 0.0 {
        return Err(PsisError::DegenerateTail);
    }
    let (k_raw, sigma) = zhang_stephens(&exceed);
    // small-sample regularization toward 0.5
    let k = (m_tail as f64 * k_raw + 5.0) / (m_tail as f64 + 10.0);
    Ok(GpdFit {
        u,
        sigma,
        k,
        tail_len: m_tail,
    })
}

/// Smooth the M_tail largest ratios with GPD inverse-CDF values at the
/// expected order-statistic quantiles, truncate at the raw maximum,
/// normalize, and attach k-hat and the relative efficiency.
pub fn pareto_smooth(ratios: &LogRatios) -> Result<PsisResult, PsisError> {
    let n = ratios.log_r.len();
    let finite_idx: Vec<usize> = (0..n).filter(|&i| ratios.log_r[i].is_finite()).collect();
    let max = finite_idx
        .iter()
        .map(|&i| ratios.log_r[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if finite_idx.is_empty() {
        return Err(PsisError::AllZeroWeights);
    }

    // scaled raw ratios; failed draws stay at zero weight
    let mut w: Vec<f64> = ratios
        .log_r
        .iter()
        .map(|&v| if v.is_finite() { (v - max).exp() } else { 0.0 })
        .collect();

    let (khat, tail) = match fit_gpd_tail(ratios) {
        Ok(fit) => {
            // replace the tail in ascending rank order (rank ordering of
            // draws by weight is preserved by construction)
            let mut order: Vec<usize> = finite_idx.clone();
            order.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
            let tail_ids = &order[order.len() - fit.tail_len..];
            let raw_max = w[*order.last().unwrap()];
            for (z, &i) in tail_ids.iter().enumerate() {
                let p = (z as f64 + 0.5) / fit.tail_len as f64;
                w[i] = gpd_quantile(p, fit.u, fit.sigma, fit.k).min(raw_max);
            }
            (fit.k, fit.tail_len)
        }
        Err(PsisError::DegenerateTail) => (KHAT_DEGENERATE, tail_len(finite_idx.len())),
        Err(e) => return Err(e),
    };

    let sum: f64 = w.iter().sum();
    if !(sum > 0.0) {
        return Err(PsisError::AllZeroWeights);
    }
    for v in &mut w {
        *v /= sum;
    }
    let r_eff = relative_efficiency(&w);
    Ok(PsisResult {
        weights: w,
        khat,
        r_eff,
        tail_len: tail,
    })
}

/// Self-normalized importance-sampling estimate: weighted mean of `phi`.
pub fn snis_estimate(weights: &[f64], phi: &[f64]) -> Result<f64, PsisError> {
    assert_eq!(weights.len(), phi.len());
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(PsisError::AllZeroWeights);
    }
    Ok(weights.iter().zip(phi).map(|(&w, &v)| w * v).sum::<f64>() / sum)
}

/// r_eff = 1 / (S * sum of squared normalized weights), in (0, 1].
pub fn relative_efficiency(weights: &[f64]) -> f64 {
    let s = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|&w| (w / sum) * (w / sum)).sum();
    1.0 / (s * sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Reliable,
    Unreliable,
}

/// Reliable iff k-hat < 0.7 (strict); the -inf degenerate sentinel counts
/// as reliable (zero-variance weights).
pub fn khat_verdict(khat: f64) -> Verdict {
    if khat < KHAT_THRESHOLD {
        Verdict::Reliable
    } else {
        Verdict::Unreliable
    }
}
