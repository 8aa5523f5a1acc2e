//! The five-step reliability procedure: refine M* up an accuracy ladder,
//! track MAE and k-hat convergence, and emit an accept/resample verdict
//! with importance weights attached on accept.

use serde::Serialize;
use thiserror::Error;

use crate::models::PosteriorModel;
use crate::ode::SolverSpec;
use crate::psis::{
    compute_log_ratios, khat_verdict, pareto_smooth, PsisError, PsisResult, StarEvaluation,
    Verdict,
};
use crate::sampler::Draws;

#[derive(Debug, Clone, Error)]
pub enum WorkflowError {
    #[error("ladder needs at least 2 rungs, got {0}")]
    LadderTooShort(usize),
    #[error("ladder rung {0} is not more accurate than its predecessor")]
    LadderNotRefining(usize),
    #[error("solution shape mismatch at draw {draw}: {got} values, expected {expected}")]
    ShapeMismatch { draw: usize, got: usize, expected: usize },
    #[error("corrected estimates require an accept verdict")]
    VerdictMismatch,
    #[error(transparent)]
    Psis(#[from] PsisError),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    /// Relative MAE change below which the MAE has converged.
    pub delta_mae: f64,
    /// Absolute k-hat change below which k-hat has converged.
    pub delta_khat: f64,
    /// Floor for the relative-change denominator.
    pub mae_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            delta_mae: 0.05,
            delta_khat: 0.02,
            mae_floor: 1e-12,
        }
    }
}

/// Ordered rungs of strictly increasing accuracy. Within a family the
/// ordering is checked; across families it is taken on faith (position is
/// the only available metric).
#[derive(Debug, Clone)]
pub struct MethodLadder {
    pub rungs: Vec<SolverSpec>,
    pub thresholds: Thresholds,
}

impl MethodLadder {
    pub fn new(rungs: Vec<SolverSpec>, thresholds: Thresholds) -> Result<Self, WorkflowError> {
        if rungs.len() < 2 {
            return Err(WorkflowError::LadderTooShort(rungs.len()));
        }
        for i in 1..rungs.len() {
            if rungs[i].more_accurate_than(&rungs[i - 1]) == Some(false) {
                return Err(WorkflowError::LadderNotRefining(i));
            }
        }
        Ok(MethodLadder { rungs, thresholds })
    }

    /// Default geometric refinement of the sampling method: six rungs, each
    /// one `refined()` step past the last (RK45 tolerance / 10, capped at
    /// 1e-12; fixed-step K doubled).
    pub fn default_for(method: &SolverSpec) -> Self {
        let mut rungs = Vec::with_capacity(6);
        let mut cur = method.refined();
        for _ in 0..6 {
            let next = cur.refined();
            rungs.push(cur);
            cur = next;
        }
        rungs.dedup();
        MethodLadder {
            rungs,
            thresholds: Thresholds::default(),
        }
    }
}

/// MAE over a draw set with the count of excluded (M*-failed) draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mae {
    pub mae: f64,
    pub excluded: usize,
}

/// Eq.-10 style maximum absolute error: max over draws, output times, and
/// state components of |y^M - y^{M*}|. Draws without an M* solution are
/// excluded and counted.
pub fn compute_mae(draws: &Draws, star: &StarEvaluation) -> Result<Mae, WorkflowError> {
    let mut mae = 0.0f64;
    let mut excluded = 0usize;
    for s in 0..draws.total() {
        match &star.solutions[s] {
            Some(sol) => {
                if sol.states.len() != draws.sol_len {
                    return Err(WorkflowError::ShapeMismatch {
                        draw: s,
                        got: sol.states.len(),
                        expected: draws.sol_len,
                    });
                }
                let m = draws.flat_solution(s);
                for (a, b) in m.iter().zip(&sol.states) {
                    mae = mae.max((a - b).abs());
                }
            }
            None => excluded += 1,
        }
    }
    Ok(Mae { mae, excluded })
}

#[derive(Debug, Clone, Serialize)]
pub struct RungRecord {
    pub method: String,
    pub mae: f64,
    /// Largest raw importance ratio, exp(max finite log r); may overflow to
    /// infinity for catastrophically unreliable rungs.
    pub max_ratio: f64,
    pub khat: f64,
    pub r_eff: f64,
    pub failed_draws: usize,
    pub seconds: f64,
    #[serde(skip)]
    pub rhs_evals: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum WorkflowVerdict {
    /// Importance weights attached (in `WorkflowReport::psis`).
    Accept,
    /// k-hat converged at or above 0.7, or the ladder ran out: sample again
    /// with a finer M.
    Resample { suggested_method: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkflowReport {
    pub rungs: Vec<RungRecord>,
    #[serde(flatten)]
    pub verdict: WorkflowVerdict,
    pub converged_rung: Option<usize>,
    pub thresholds: Thresholds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// The converged smoothing result when the verdict is accept.
    #[serde(skip)]
    pub psis: Option<PsisResult>,
}

fn converged(prev: &RungRecord, cur: &RungRecord, th: &Thresholds) -> bool {
    let dmae = (cur.mae - prev.mae).abs() / cur.mae.max(prev.mae).max(th.mae_floor);
    let dk = (cur.khat - prev.khat).abs();
    // two degenerate-tail sentinels give NaN; that is "no evidence", not
    // convergence
    dmae < th.delta_mae && dk < th.delta_khat
}

/// Steps 3-5 of the reliability procedure: walk the ladder until MAE and
/// k-hat both stop moving, then gate on k-hat < 0.7.
pub fn run_reliability_check<M: PosteriorModel>(
    draws: &Draws,
    model: &M,
    ladder: &MethodLadder,
) -> Result<WorkflowReport, WorkflowError> {
    if ladder.rungs.len() < 2 {
        return Err(WorkflowError::LadderTooShort(ladder.rungs.len()));
    }
    let mut rungs: Vec<RungRecord> = Vec::with_capacity(ladder.rungs.len());

    for spec in &ladder.rungs {
        let start = std::time::Instant::now();
        let star = compute_log_ratios(draws, model, spec);
        let mae = compute_mae(draws, &star)?;
        let psis = pareto_smooth(&star.ratios)?;
        let max_log_r = star
            .ratios
            .log_r
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let record = RungRecord {
            method: spec.label(),
            mae: mae.mae,
            max_ratio: max_log_r.exp(),
            khat: psis.khat,
            r_eff: psis.r_eff,
            failed_draws: star.ratios.n_failed(),
            seconds: start.elapsed().as_secs_f64(),
            rhs_evals: star.rhs_evals,
        };
        let done = rungs
            .last()
            .is_some_and(|prev| converged(prev, &record, &ladder.thresholds));
        rungs.push(record);
        if done {
            let idx = rungs.len() - 1;
            let khat = rungs[idx].khat;
            return Ok(match khat_verdict(khat) {
                Verdict::Reliable => WorkflowReport {
                    rungs,
                    verdict: WorkflowVerdict::Accept,
                    converged_rung: Some(idx),
                    thresholds: ladder.thresholds,
                    note: None,
                    psis: Some(psis),
                },
                Verdict::Unreliable => WorkflowReport {
                    rungs,
                    verdict: WorkflowVerdict::Resample {
                        suggested_method: draws.method.refined().label(),
                    },
                    converged_rung: Some(idx),
                    thresholds: ladder.thresholds,
                    note: Some(format!(
                        "khat converged to {khat:.3} >= 0.7; increase the accuracy of M"
                    )),
                    psis: None,
                },
            });
        }
    }

    Ok(WorkflowReport {
        rungs,
        verdict: WorkflowVerdict::Resample {
            suggested_method: draws.method.refined().label(),
        },
        converged_rung: None,
        thresholds: ladder.thresholds,
        note: Some("ladder exhausted before MAE and khat converged".into()),
        psis: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub mcse: f64,
    pub q5: f64,
    pub q50: f64,
    pub q95: f64,
}

fn weighted_quantile(pairs: &[(f64, f64)], q: f64) -> f64 {
    // pairs sorted by value, weights normalized
    let mut acc = 0.0;
    for &(v, w) in pairs {
        acc += w;
        if acc >= q {
            return v;
        }
    }
    pairs.last().map(|&(v, _)| v).unwrap_or(f64::NAN)
}

/// SNIS posterior summaries of the constrained parameters with
/// effective-sample-size-adjusted Monte Carlo standard errors
/// (S_eff = r_eff * S).
pub fn corrected_estimates<M: PosteriorModel>(
    draws: &Draws,
    model: &M,
    report: &WorkflowReport,
) -> Result<Vec<Estimate>, WorkflowError> {
    let psis = match (&report.verdict, &report.psis) {
        (WorkflowVerdict::Accept, Some(p)) => p,
        _ => return Err(WorkflowError::VerdictMismatch),
    };
    let names = model.param_names();
    let s_eff = psis.r_eff * draws.total() as f64;
    let mut out = Vec::with_capacity(draws.dim);
    for p in 0..draws.dim {
        let values: Vec<f64> = (0..draws.total())
            .map(|s| draws.flat_eta(s)[p].exp())
            .collect();
        let mean: f64 = values.iter().zip(&psis.weights).map(|(v, w)| v * w).sum();
        let var: f64 = values
            .iter()
            .zip(&psis.weights)
            .map(|(v, w)| w * (v - mean) * (v - mean))
            .sum();
        let mcse = (var / s_eff).sqrt();
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(psis.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out.push(Estimate {
            name: names[p].clone(),
            mean,
            mcse,
            q5: weighted_quantile(&pairs, 0.05),
            q50: weighted_quantile(&pairs, 0.50),
            q95: weighted_quantile(&pairs, 0.95),
        });
    }
    Ok(out)
}
