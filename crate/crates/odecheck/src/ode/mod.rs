//! ODE initial value problems and explicit Runge-Kutta solvers.
//!
//! Two solver families are provided behind [`SolverSpec`]:
//! fixed-step midpoint / classic RK4 with `K` steps per output interval,
//! and the adaptive Dormand-Prince 4(5) pair ([`rk45`]). All solvers are
//! generic over [`Scalar`], so running them over [`crate::scalar::Dual`]
//! yields parameter sensitivities: the exact derivative of the discrete
//! recursion for fixed-step methods, and continuous forward sensitivities
//! (with the tangent lanes included in the error control) for RK45.

mod rk45;
mod sensitivity;

pub use rk45::{rk45_adapt_step, rk45_error_norm, solve_rk45};
pub use sensitivity::{solve_with_sensitivities, SensitivityMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OdeError {
    /// A state or stage value became NaN or infinite.
    #[error("solver failure: non-finite state near t = {t}")]
    SolverFailure { t: f64 },
    /// The per-interval step budget of an adaptive solve ran out.
    #[error("max steps exceeded in output interval ending at t = {t}")]
    MaxStepsExceeded { t: f64 },
    #[error("invalid solver spec: {0}")]
    InvalidSpec(String),
    #[error("invalid IVP: {0}")]
    InvalidIvp(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Right-hand side of an ODE system, evaluable over any [`Scalar`].
pub trait OdeRhs: Sync {
    fn dim(&self) -> usize;
    /// Write `f(y, t; psi)` into `dy` (exactly `dim()` components).
    fn eval<S: Scalar>(&self, t: f64, y: &[S], psi: &[S], dy: &mut [S]);
}

/// An initial value problem without its initial state: the state (and the
/// parameters) are supplied at solve time so they can carry tangents.
#[derive(Debug, Clone)]
pub struct Ivp {
    pub t0: f64,
    pub output_times: Vec<f64>,
}

impl Ivp {
    /// Requires a strictly increasing output grid with `t_1 >= t0`.
    pub fn new(t0: f64, output_times: Vec<f64>) -> Result<Self, OdeError> {
        if output_times.is_empty() {
            return Err(OdeError::InvalidIvp("empty output grid".into()));
        }
        let mut prev = t0;
        for (i, &t) in output_times.iter().enumerate() {
            let ok = if i == 0 { t >= prev } else { t > prev };
            if !ok {
                return Err(OdeError::InvalidIvp(format!(
                    "output times must be strictly increasing and >= t0 (violated at index {i})"
                )));
            }
            prev = t;
        }
        Ok(Ivp { t0, output_times })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedMethod {
    Midpoint,
    Rk4,
}

impl FixedMethod {
    pub fn stages(self) -> usize {
        match self {
            FixedMethod::Midpoint => 2,
            FixedMethod::Rk4 => 4,
        }
    }

    /// Nominal convergence order.
    pub fn order(self) -> usize {
        match self {
            FixedMethod::Midpoint => 2,
            FixedMethod::Rk4 => 4,
        }
    }
}

pub const RK45_DEFAULT_MAX_STEPS: u64 = 100_000;
pub const RK45_DEFAULT_H0: f64 = 0.1;

/// A solver method together with its accuracy controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolverSpec {
    Midpoint {
        steps_per_interval: u32,
    },
    Rk4 {
        steps_per_interval: u32,
    },
    Rk45 {
        tol_abs: f64,
        tol_rel: f64,
        max_steps_per_interval: u64,
        initial_step: f64,
    },
}

impl SolverSpec {
    pub fn midpoint(k: u32) -> Self {
        SolverSpec::Midpoint {
            steps_per_interval: k,
        }
    }

    pub fn rk4(k: u32) -> Self {
        SolverSpec::Rk4 {
            steps_per_interval: k,
        }
    }

    /// RK45 with `tol_abs = tol_rel = eps` and default step limits.
    pub fn rk45(eps: f64) -> Self {
        SolverSpec::Rk45 {
            tol_abs: eps,
            tol_rel: eps,
            max_steps_per_interval: RK45_DEFAULT_MAX_STEPS,
            initial_step: RK45_DEFAULT_H0,
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        match *self {
            SolverSpec::Midpoint { steps_per_interval } | SolverSpec::Rk4 { steps_per_interval } => {
                if steps_per_interval == 0 {
                    return Err(OdeError::InvalidSpec("steps_per_interval must be >= 1".into()));
                }
            }
            SolverSpec::Rk45 {
                tol_abs,
                tol_rel,
                max_steps_per_interval,
                initial_step,
            } => {
                if !(tol_abs > 0.0) {
                    return Err(OdeError::InvalidSpec("tol_abs must be > 0".into()));
                }
                if !(tol_rel >= 0.0) {
                    return Err(OdeError::InvalidSpec("tol_rel must be >= 0".into()));
                }
                if max_steps_per_interval == 0 {
                    return Err(OdeError::InvalidSpec("max_steps_per_interval must be >= 1".into()));
                }
                if !(initial_step > 0.0) {
                    return Err(OdeError::InvalidSpec("initial_step must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Strict "more accurate" ordering within a variant: larger K, or smaller
    /// tolerances. Cross-family comparisons are undefined and return `None`.
    pub fn more_accurate_than(&self, other: &SolverSpec) -> Option<bool> {
        match (self, other) {
            (
                SolverSpec::Midpoint { steps_per_interval: a },
                SolverSpec::Midpoint { steps_per_interval: b },
            )
            | (SolverSpec::Rk4 { steps_per_interval: a }, SolverSpec::Rk4 { steps_per_interval: b }) => {
                Some(a > b)
            }
            (
                SolverSpec::Rk45 {
                    tol_abs: aa,
                    tol_rel: ar,
                    ..
                },
                SolverSpec::Rk45 {
                    tol_abs: ba,
                    tol_rel: br,
                    ..
                },
            ) => Some(aa <= ba && ar <= br && (aa < ba || ar < br)),
            _ => None,
        }
    }

    /// One default refinement step of the same family (K doubled, tolerances
    /// divided by ten and capped at 1e-12).
    /// One geometric refinement step: K doubled, or tolerance / 10 (snapped
    /// to an exact power of ten so ladder labels stay clean).
    pub fn refined(&self) -> SolverSpec {
        match *self {
            SolverSpec::Midpoint { steps_per_interval } => SolverSpec::Midpoint {
                steps_per_interval: steps_per_interval.saturating_mul(2),
            },
            SolverSpec::Rk4 { steps_per_interval } => SolverSpec::Rk4 {
                steps_per_interval: steps_per_interval.saturating_mul(2),
            },
            SolverSpec::Rk45 {
                tol_abs,
                tol_rel,
                max_steps_per_interval,
                initial_step,
            } => SolverSpec::Rk45 {
                tol_abs: tenth(tol_abs).max(1e-12),
                tol_rel: tenth(tol_rel).max(1e-12),
                max_steps_per_interval,
                initial_step,
            },
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SolverSpec::Midpoint { steps_per_interval } => format!("midpoint({steps_per_interval})"),
            SolverSpec::Rk4 { steps_per_interval } => format!("rk4({steps_per_interval})"),
            SolverSpec::Rk45 { tol_abs, tol_rel, .. } => {
                if tol_abs == tol_rel {
                    format!("rk45({tol_abs:e})")
                } else {
                    format!("rk45({tol_abs:e},{tol_rel:e})")
                }
            }
        }
    }
}

/// `x / 10`, snapped to the nearest power of ten when `x` is (within float
/// error) a power of ten itself.
fn tenth(x: f64) -> f64 {
    let y = x / 10.0;
    let snapped = 10f64.powi(y.log10().round() as i32);
    if (snapped - y).abs() <= 1e-9 * y {
        snapped
    } else {
        y
    }
}

/// Work counters for one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evals: u64,
}

impl SolveStats {
    pub fn steps_attempted(&self) -> u64 {
        self.steps_accepted + self.steps_rejected
    }

    pub fn merge(&mut self, other: &SolveStats) {
        self.steps_accepted += other.steps_accepted;
        self.steps_rejected += other.steps_rejected;
        self.rhs_evals += other.rhs_evals;
    }
}

/// Solver output: one state row per requested output time.
#[derive(Debug, Clone)]
pub struct Solution<S> {
    pub states: Vec<S>,
    pub n_times: usize,
    pub dim: usize,
    pub stats: SolveStats,
}

impl<S: Scalar> Solution<S> {
    pub fn row(&self, n: usize) -> &[S] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    /// Value lanes only.
    pub fn values(&self) -> Solution<f64> {
        Solution {
            states: self.states.iter().map(|s| s.value()).collect(),
            n_times: self.n_times,
            dim: self.dim,
            stats: self.stats,
        }
    }
}

pub type OdeSolution = Solution<f64>;

/// One explicit RK step `y + h * sum(b_r k_r)` with the midpoint or RK4
/// tableau. Increments `stats.rhs_evals` by the stage count.
pub fn step_explicit_rk<S: Scalar, R: OdeRhs + ?Sized>(
    rhs: &R,
    method: FixedMethod,
    t: f64,
    h: f64,
    y: &[S],
    psi: &[S],
    stats: &mut SolveStats,
) -> Result<Vec<S>, OdeError> {
    debug_assert!(h > 0.0);
    let d = rhs.dim();
    debug_assert_eq!(y.len(), d);
    let mut out = y.to_vec();
    let mut k = vec![S::zero(); d];
    let mut ytmp = vec![S::zero(); d];
    match method {
        FixedMethod::Midpoint => {
            // a21 = 1/2, b = (0, 1), c2 = 1/2
            rhs.eval(t, y, psi, &mut k);
            for i in 0..d {
                ytmp[i] = y[i] + k[i].scale(0.5 * h);
            }
            rhs.eval(t + 0.5 * h, &ytmp, psi, &mut k);
            for i in 0..d {
                out[i] = y[i] + k[i].scale(h);
            }
            stats.rhs_evals += 2;
        }
        FixedMethod::Rk4 => {
            let mut k1 = vec![S::zero(); d];
            let mut k2 = vec![S::zero(); d];
            let mut k3 = vec![S::zero(); d];
            rhs.eval(t, y, psi, &mut k1);
            for i in 0..d {
                ytmp[i] = y[i] + k1[i].scale(0.5 * h);
            }
            rhs.eval(t + 0.5 * h, &ytmp, psi, &mut k2);
            for i in 0..d {
                ytmp[i] = y[i] + k2[i].scale(0.5 * h);
            }
            rhs.eval(t + 0.5 * h, &ytmp, psi, &mut k3);
            for i in 0..d {
                ytmp[i] = y[i] + k3[i].scale(h);
            }
            rhs.eval(t + h, &ytmp, psi, &mut k);
            for i in 0..d {
                let incr = k1[i].scale(1.0 / 6.0)
                    + k2[i].scale(1.0 / 3.0)
                    + k3[i].scale(1.0 / 3.0)
                    + k[i].scale(1.0 / 6.0);
                out[i] = y[i] + incr.scale(h);
            }
            stats.rhs_evals += 4;
        }
    }
    if !out.iter().all(|s| s.all_finite()) {
        return Err(OdeError::SolverFailure { t });
    }
    Ok(out)
}

/// Fixed-step solve: exactly `K` equal steps between consecutive grid points
/// (with `t0` prepended), recording the state at each output time.
pub fn solve_fixed<S: Scalar, R: OdeRhs + ?Sized>(
    rhs: &R,
    ivp: &Ivp,
    y0: &[S],
    psi: &[S],
    method: FixedMethod,
    steps_per_interval: u32,
) -> Result<Solution<S>, OdeError> {
    if steps_per_interval == 0 {
        return Err(OdeError::InvalidSpec("steps_per_interval must be >= 1".into()));
    }
    let d = rhs.dim();
    let n = ivp.output_times.len();
    let mut stats = SolveStats::default();
    let mut states = Vec::with_capacity(n * d);
    let mut y = y0.to_vec();
    let mut t = ivp.t0;
    for &t_next in &ivp.output_times {
        if t_next > t {
            let h = (t_next - t) / steps_per_interval as f64;
            for j in 0..steps_per_interval {
                let tj = t + h * j as f64;
                y = step_explicit_rk(rhs, method, tj, h, &y, psi, &mut stats)?;
                stats.steps_accepted += 1;
            }
        }
        t = t_next;
        states.extend_from_slice(&y);
    }
    Ok(Solution {
        states,
        n_times: n,
        dim: d,
        stats,
    })
}

/// Dispatch on [`SolverSpec`].
pub fn solve<S: Scalar, R: OdeRhs + ?Sized>(
    rhs: &R,
    ivp: &Ivp,
    y0: &[S],
    psi: &[S],
    spec: &SolverSpec,
) -> Result<Solution<S>, OdeError> {
    spec.validate()?;
    match *spec {
        SolverSpec::Midpoint { steps_per_interval } => {
            solve_fixed(rhs, ivp, y0, psi, FixedMethod::Midpoint, steps_per_interval)
        }
        SolverSpec::Rk4 { steps_per_interval } => {
            solve_fixed(rhs, ivp, y0, psi, FixedMethod::Rk4, steps_per_interval)
        }
        SolverSpec::Rk45 { .. } => solve_rk45(rhs, ivp, y0, psi, spec),
    }
}


#[cfg(test)]
mod tests {
    use super::testsys::*;
    use super::*;

    #[test]
    fn midpoint_step_expands_to_second_order() {
        // y' = y, y = 1, h = 0.1: midpoint gives 1 + h + h^2/2 = 1.105 exactly
        let mut stats = SolveStats::default();
        let out = step_explicit_rk(
            &Exponential,
            FixedMethod::Midpoint,
            0.0,
            0.1,
            &[1.0],
            &[1.0],
            &mut stats,
        )
        .unwrap();
        assert_eq!(out[0], 1.105);
        assert_eq!(stats.rhs_evals, 2);
    }

    #[test]
    fn rk4_step_expands_to_fourth_order() {
        // 1 + h + h^2/2 + h^3/6 + h^4/24 at h = 0.1
        let mut stats = SolveStats::default();
        let out = step_explicit_rk(
            &Exponential,
            FixedMethod::Rk4,
            0.0,
            0.1,
            &[1.0],
            &[1.0],
            &mut stats,
        )
        .unwrap();
        let expected = 1.0 + 0.1 + 0.005 + 0.1f64.powi(3) / 6.0 + 0.1f64.powi(4) / 24.0;
        assert!((out[0] - expected).abs() < 1e-15);
        assert_eq!(stats.rhs_evals, 4);
    }

    #[test]
    fn zero_rhs_leaves_state_unchanged() {
        let mut stats = SolveStats::default();
        let out = step_explicit_rk(
            &ZeroRhs(3),
            FixedMethod::Rk4,
            1.0,
            0.7,
            &[1.0, -2.0, 3.5],
            &[],
            &mut stats,
        )
        .unwrap();
        assert_eq!(out, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn nonfinite_stage_is_a_solver_failure() {
        struct Blowup;
        impl OdeRhs for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn eval<S: Scalar>(&self, _t: f64, y: &[S], _psi: &[S], dy: &mut [S]) {
                dy[0] = (y[0] * y[0]).scale(f64::MAX);
            }
        }
        let mut stats = SolveStats::default();
        let r = step_explicit_rk(&Blowup, FixedMethod::Rk4, 0.0, 1.0, &[1.0], &[], &mut stats);
        assert!(matches!(r, Err(OdeError::SolverFailure { .. })));
    }

    #[test]
    fn fixed_solve_matches_single_step_example() {
        // midpoint, K = 1, y' = y, output at t = 0.1 -> 1.105
        let ivp = Ivp::new(0.0, vec![0.1]).unwrap();
        let sol = solve_fixed(&Exponential, &ivp, &[1.0], &[1.0], FixedMethod::Midpoint, 1).unwrap();
        assert_eq!(sol.row(0)[0], 1.105);
        assert_eq!(sol.stats.steps_accepted, 1);
        assert_eq!(sol.stats.rhs_evals, 2);
    }

    #[test]
    fn fixed_rk4_fourth_order_against_closed_form() {
        // y' = -y, y0 = 1, t = 1; oracle e^{-1}
        let ivp = Ivp::new(0.0, vec![1.0]).unwrap();
        let exact = (-1.0f64).exp();
        let err = |k: u32| {
            let sol = solve_fixed(&Exponential, &ivp, &[1.0], &[-1.0], FixedMethod::Rk4, k).unwrap();
            (sol.row(0)[0] - exact).abs()
        };
        let (e10, e20) = (err(10), err(20));
        assert!(e10 < 1e-6 && e20 < 1e-6);
        let ratio = e10 / e20;
        assert!((10.0..=24.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn fixed_solve_zero_rhs_repeats_initial_state() {
        let ivp = Ivp::new(0.0, vec![1.0, 2.0, 5.0]).unwrap();
        let sol = solve_fixed(&ZeroRhs(2), &ivp, &[4.0, -1.0], &[], FixedMethod::Midpoint, 3).unwrap();
        for n in 0..3 {
            assert_eq!(sol.row(n), &[4.0, -1.0]);
        }
    }

    #[test]
    fn observed_convergence_orders() {
        // Halving h multiplies global error by ~2^-p; check slope on a 4-rung ladder.
        let ivp = Ivp::new(0.0, vec![1.0]).unwrap();
        let exact = (-1.0f64).exp();
        for (method, nominal) in [(FixedMethod::Midpoint, 2.0), (FixedMethod::Rk4, 4.0)] {
            let errs: Vec<f64> = [4u32, 8, 16, 32]
                .iter()
                .map(|&k| {
                    let sol = solve_fixed(&Exponential, &ivp, &[1.0], &[-1.0], method, k).unwrap();
                    (sol.row(0)[0] - exact).abs()
                })
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(
                    (order - nominal).abs() < 0.5,
                    "{method:?}: observed order {order}"
                );
            }
        }
    }

    #[test]
    fn ivp_grid_validation() {
        assert!(Ivp::new(0.0, vec![]).is_err());
        assert!(Ivp::new(0.0, vec![1.0, 1.0]).is_err());
        assert!(Ivp::new(0.5, vec![0.2]).is_err());
        assert!(Ivp::new(0.5, vec![0.5, 0.6]).is_ok());
    }

    #[test]
    fn spec_accuracy_ordering() {
        assert_eq!(
            SolverSpec::rk4(4).more_accurate_than(&SolverSpec::rk4(2)),
            Some(true)
        );
        assert_eq!(
            SolverSpec::rk45(1e-8).more_accurate_than(&SolverSpec::rk45(1e-6)),
            Some(true)
        );
        assert_eq!(
            SolverSpec::rk45(1e-6).more_accurate_than(&SolverSpec::rk45(1e-6)),
            Some(false)
        );
        assert_eq!(
            SolverSpec::rk4(4).more_accurate_than(&SolverSpec::midpoint(8)),
            None
        );
    }

    #[test]
    fn spec_validation() {
        assert!(SolverSpec::midpoint(0).validate().is_err());
        assert!(SolverSpec::rk45(0.0).validate().is_err());
        assert!(SolverSpec::rk45(1e-6).validate().is_ok());
    }

    #[test]
    fn fixed_stats_account_all_stage_evals() {
        let ivp = Ivp::new(0.0, vec![1.0, 2.0]).unwrap();
        let sol = solve_fixed(&Exponential, &ivp, &[1.0], &[-1.0], FixedMethod::Rk4, 5).unwrap();
        assert_eq!(sol.stats.steps_accepted, 10);
        assert_eq!(sol.stats.rhs_evals, 4 * 10);
    }

    #[test]
    fn determinism_bitwise() {
        let ivp = Ivp::new(0.0, vec![0.3, 1.7]).unwrap();
        let a = solve(&Exponential, &ivp, &[1.0], &[-0.8], &SolverSpec::rk45(1e-7)).unwrap();
        let b = solve(&Exponential, &ivp, &[1.0], &[-0.8], &SolverSpec::rk45(1e-7)).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.stats, b.stats);
    }
}
