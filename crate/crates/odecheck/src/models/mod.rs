//! Benchmark ODE posteriors behind a common model interface.
//!
//! Both bundled models (and plugins) use the same unconstrained
//! parameterization: every parameter is positive and `theta = exp(eta)`,
//! with additive log-Jacobian `sum(eta)`.

mod dataset;
mod lv;
pub mod plugin;
mod tmdd;

pub use dataset::Dataset;
pub use lv::{LotkaVolterraModel, LV_BUNDLED_CSV};
pub use tmdd::{simulate_tmdd_data, TmddModel, TMDD_TRUE_PSI, TMDD_TRUE_SIGMA};

use thiserror::Error;

use crate::ode::{Ivp, OdeError, OdeSolution, Solution, SolveStats, SolverSpec};
use crate::scalar::{Dual, Scalar, MAX_TANGENTS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

/// Why a posterior evaluation came out as log density -inf.
#[derive(Debug, Clone, PartialEq)]
pub enum InvalidReason {
    Solver(OdeError),
    /// Observation model needed a positive solution value and did not get one.
    Likelihood,
    /// Constrained parameters left the prior's domain (exp underflow/overflow
    /// at extreme unconstrained points).
    Prior,
}

/// A failed evaluation still reports the solver work it consumed.
#[derive(Debug, Clone)]
pub struct Invalid {
    pub reason: InvalidReason,
    pub stats: SolveStats,
}

#[derive(Debug, Clone)]
pub struct Eval<S: Scalar> {
    pub logp: S,
    pub solution: Solution<S>,
}

pub type EvalResult<S> = Result<Eval<S>, Invalid>;

/// A posterior over ODE parameters: priors, likelihood, parameter transform,
/// and the IVP builder, all generic over the scalar type.
pub trait PosteriorModel: Sync {
    fn name(&self) -> &str;
    /// Unconstrained dimension (= number of parameters).
    fn dim(&self) -> usize;
    fn ode_dim(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn dataset(&self) -> &Dataset;
    fn ivp(&self) -> &Ivp;
    /// Documented chain initialization point, in unconstrained space.
    fn init_eta(&self) -> Vec<f64>;

    /// Sum of prior log densities in constrained space.
    fn log_prior<S: Scalar>(&self, theta: &[S]) -> Result<S, ModelError>;
    /// `None` when the solution is incompatible with the observation model
    /// (e.g. a non-positive state under a log-scale likelihood).
    fn log_likelihood<S: Scalar>(&self, theta: &[S], sol: &Solution<S>) -> Option<S>;
    fn solve_ode<S: Scalar>(&self, theta: &[S], spec: &SolverSpec) -> Result<Solution<S>, OdeError>;

    fn constrain<S: Scalar>(&self, eta: &[S]) -> Vec<S> {
        eta.iter().map(|e| e.exp()).collect()
    }

    fn unconstrain(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| t.ln()).collect()
    }

    fn log_jacobian<S: Scalar>(&self, eta: &[S]) -> S {
        let mut s = S::zero();
        for &e in eta {
            s += e;
        }
        s
    }
}

/// `log P = log prior + log likelihood + log |Jacobian|` with the ODE solved
/// by `spec`. Solver failures and invalid likelihoods map to [`Invalid`]
/// (log density -inf), which callers treat as proposal rejection.
pub fn unnorm_log_posterior<S: Scalar, M: PosteriorModel + ?Sized>(
    model: &M,
    eta: &[S],
    spec: &SolverSpec,
) -> EvalResult<S> {
    let theta = model.constrain(eta);
    // exp(eta) underflows to 0 at extreme eta, leaving the prior's domain
    let prior = model.log_prior(&theta).map_err(|_| Invalid {
        reason: InvalidReason::Prior,
        stats: SolveStats::default(),
    })?;
    let solution = model.solve_ode(&theta, spec).map_err(|e| Invalid {
        stats: SolveStats::default(),
        reason: InvalidReason::Solver(e),
    })?;
    let stats = solution.stats;
    match model.log_likelihood(&theta, &solution) {
        Some(lik) => {
            let logp = prior + lik + model.log_jacobian(eta);
            if !logp.all_finite() {
                return Err(Invalid {
                    reason: InvalidReason::Likelihood,
                    stats,
                });
            }
            Ok(Eval { logp, solution })
        }
        None => Err(Invalid {
            reason: InvalidReason::Likelihood,
            stats,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct GradEval {
    pub logp: f64,
    pub grad: Vec<f64>,
    /// Value lanes of the solution used for the gradient evaluation.
    pub solution: OdeSolution,
    pub stats: SolveStats,
}

/// Log density and gradient w.r.t. `eta` by seeding one dual tangent lane
/// per parameter and evaluating the whole posterior over duals.
pub fn eval_with_gradient<M: PosteriorModel + ?Sized>(
    model: &M,
    eta: &[f64],
    spec: &SolverSpec,
) -> Result<GradEval, Invalid> {
    let q = model.dim();
    assert!(q <= MAX_TANGENTS, "model dimension exceeds tangent lanes");
    let eta_d: Vec<Dual> = eta
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seeded(v, i))
        .collect();
    let eval = unnorm_log_posterior(model, &eta_d, spec)?;
    let stats = eval.solution.stats;
    let grad = eval.logp.dx[..q].to_vec();
    if !eval.logp.all_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Invalid {
            reason: InvalidReason::Likelihood,
            stats,
        });
    }
    Ok(GradEval {
        logp: eval.logp.re,
        grad,
        solution: eval.solution.values(),
        stats,
    })
}
