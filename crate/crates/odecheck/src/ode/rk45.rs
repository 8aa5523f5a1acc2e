//! Dormand-Prince 4(5) embedded pair with the Boost-odeint style step
//! controller: error norm, accept/reject rules, and output-time clamping.

use super::{Ivp, OdeError, OdeRhs, Solution, SolveStats, SolverSpec};
use crate::scalar::Scalar;

// Standard DOPRI5 tableau (Dormand & Prince 1980).
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// 5th-order weights (used to advance).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded 4th-order weights (error estimate only).
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Maximum relative estimated local truncation error over all state
/// components: `max_d |y_high - y_low| / (atol + rtol * (|y| + h |f|))`.
pub fn rk45_error_norm(
    y_high: &[f64],
    y_low: &[f64],
    y_cur: &[f64],
    f_cur: &[f64],
    h: f64,
    tol_abs: f64,
    tol_rel: f64,
) -> Result<f64, OdeError> {
    let mut v: f64 = 0.0;
    for d in 0..y_high.len() {
        let denom = tol_abs + tol_rel * (y_cur[d].abs() + h * f_cur[d].abs());
        if !(denom > 0.0) {
            return Err(OdeError::Domain(
                "error norm denominator is zero (tol_abs = 0 with zero state)".into(),
            ));
        }
        v = v.max((y_high[d] - y_low[d]).abs() / denom);
    }
    Ok(v)
}

/// Same norm over every lane of a generic state, so sensitivity lanes take
/// part in the error control of the extended system.
fn error_norm_lanes<S: Scalar>(
    y_high: &[S],
    y_low: &[S],
    y_cur: &[S],
    f_cur: &[S],
    h: f64,
    tol_abs: f64,
    tol_rel: f64,
) -> f64 {
    let mut v: f64 = 0.0;
    for d in 0..y_high.len() {
        for l in 0..S::LANES {
            let denom = tol_abs + tol_rel * (y_cur[d].lane(l).abs() + h * f_cur[d].lane(l).abs());
            v = v.max((y_high[d].lane(l) - y_low[d].lane(l)).abs() / denom);
        }
    }
    v
}

/// Step controller decision: reject with shrink for `v > 1`, accept with
/// capped growth for `v < 0.5`, accept keeping `h` otherwise.
pub fn rk45_adapt_step(v: f64, h: f64) -> (bool, f64) {
    debug_assert!(v >= 0.0 && h > 0.0);
    if v > 1.0 {
        (false, h * (0.9 * v.powf(-1.0 / 3.0)).max(0.2))
    } else if v < 0.5 {
        (true, h * (0.9 * v.powf(-1.0 / 5.0)).min(5.0))
    } else {
        (true, h)
    }
}

/// Adaptive solve with the Dormand-Prince pair. Starts every solve with the
/// configured `initial_step`, lands exactly on each output time by clamping
/// the step (restoring the pre-clamp working step size afterward), and
/// charges attempted steps against the per-interval budget.
pub fn solve_rk45<S: Scalar, R: OdeRhs + ?Sized>(
    rhs: &R,
    ivp: &Ivp,
    y0: &[S],
    psi: &[S],
    spec: &SolverSpec,
) -> Result<Solution<S>, OdeError> {
    let (tol_abs, tol_rel, max_steps, h0) = match *spec {
        SolverSpec::Rk45 {
            tol_abs,
            tol_rel,
            max_steps_per_interval,
            initial_step,
        } => (tol_abs, tol_rel, max_steps_per_interval, initial_step),
        _ => return Err(OdeError::InvalidSpec("solve_rk45 requires an RK45 spec".into())),
    };
    spec.validate()?;

    let d = rhs.dim();
    let n = ivp.output_times.len();
    let mut stats = SolveStats::default();
    let mut states = Vec::with_capacity(n * d);

    let mut y = y0.to_vec();
    let mut t = ivp.t0;
    let mut h = h0;

    let mut k: Vec<Vec<S>> = (0..7).map(|_| vec![S::zero(); d]).collect();
    let mut ytmp = vec![S::zero(); d];
    let mut y5 = vec![S::zero(); d];
    let mut y4 = vec![S::zero(); d];

    for &t_next in &ivp.output_times {
        let mut attempts: u64 = 0;
        while t < t_next {
            if attempts >= max_steps {
                return Err(OdeError::MaxStepsExceeded { t: t_next });
            }
            attempts += 1;

            let clamped = t + h >= t_next;
            let h_try = if clamped { t_next - t } else { h };

            // 7 stages, no FSAL reuse; k[0] doubles as f_cur for the norm.
            for s in 0..7 {
                for i in 0..d {
                    let mut acc = y[i];
                    for (l, kl) in k.iter().enumerate().take(s) {
                        let a = A[s][l];
                        if a != 0.0 {
                            acc += kl[i].scale(h_try * a);
                        }
                    }
                    ytmp[i] = acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                rhs.eval(t + C[s] * h_try, &ytmp, psi, &mut tail[0]);
            }
            stats.rhs_evals += 7;

            for i in 0..d {
                let mut acc5 = y[i];
                let mut acc4 = y[i];
                for s in 0..7 {
                    if B5[s] != 0.0 {
                        acc5 += k[s][i].scale(h_try * B5[s]);
                    }
                    if B4[s] != 0.0 {
                        acc4 += k[s][i].scale(h_try * B4[s]);
                    }
                }
                y5[i] = acc5;
                y4[i] = acc4;
            }

            if !y5.iter().all(|s| s.all_finite()) || !y4.iter().all(|s| s.all_finite()) {
                return Err(OdeError::SolverFailure { t });
            }

            let v = error_norm_lanes(&y5, &y4, &y, &k[0], h_try, tol_abs, tol_rel);
            if !v.is_finite() {
                return Err(OdeError::SolverFailure { t });
            }
            let (accepted, h_next) = rk45_adapt_step(v, h_try);
            if accepted {
                t = t + h_try;
                y.copy_from_slice(&y5);
                stats.steps_accepted += 1;
                // A clamped step does not shrink the working step size.
                if !clamped {
                    h = h_next;
                }
            } else {
                stats.steps_rejected += 1;
                h = h_next;
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

#[cfg(test)]
mod tests {
    use super::super::testsys::*;
    use super::*;

    #[test]
    fn error_norm_direct_substitution() {
        // |diff| = 0.5, atol = 1, rtol = 0 -> 0.5
        let v = rk45_error_norm(&[1.5], &[1.0], &[1.0], &[0.0], 0.1, 1.0, 0.0).unwrap();
        assert_eq!(v, 0.5);
        // |diff| = 0.25, atol = 1e-12, rtol = 0.5, y = 1, f = 0 -> ~0.5
        let v = rk45_error_norm(&[1.25], &[1.0], &[1.0], &[0.0], 0.1, 1e-12, 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-9);
        // zero diff -> 0
        let v = rk45_error_norm(&[2.0], &[2.0], &[2.0], &[1.0], 0.1, 1e-6, 1e-6).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn error_norm_zero_denominator_is_domain_error() {
        let r = rk45_error_norm(&[0.1], &[0.0], &[0.0], &[0.0], 0.1, 0.0, 0.5);
        assert!(matches!(r, Err(OdeError::Domain(_))));
    }

    #[test]
    fn adapt_step_controller_algebra() {
        // v = 8: rejected, 0.9 * 8^{-1/3} = 0.45 exactly
        let (acc, h) = rk45_adapt_step(8.0, 1.0);
        assert!(!acc);
        assert!((h - 0.45).abs() < 1e-15);
        // v = 0.7: accepted, h unchanged
        let (acc, h) = rk45_adapt_step(0.7, 0.3);
        assert!(acc);
        assert_eq!(h, 0.3);
        // v -> 0: growth capped at 5x
        let (acc, h) = rk45_adapt_step(1e-10, 2.0);
        assert!(acc);
        assert_eq!(h, 10.0);
        // deep rejection shrink floored at 1/5
        let (acc, h) = rk45_adapt_step(1e12, 1.0);
        assert!(!acc);
        assert_eq!(h, 0.2);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let ivp = Ivp::new(0.0, vec![1.0]).unwrap();
        let sol = solve_rk45(&Exponential, &ivp, &[1.0], &[-1.0], &SolverSpec::rk45(1e-8)).unwrap();
        assert!((sol.row(0)[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn zero_rhs_constant_solution_no_rejections() {
        let ivp = Ivp::new(0.0, vec![1.0, 2.0, 3.0]).unwrap();
        let sol = solve_rk45(&ZeroRhs(2), &ivp, &[1.0, 2.0], &[], &SolverSpec::rk45(1e-8)).unwrap();
        for n in 0..3 {
            assert_eq!(sol.row(n), &[1.0, 2.0]);
        }
        assert_eq!(sol.stats.steps_rejected, 0);
    }

    #[test]
    fn rhs_evals_are_seven_per_attempt() {
        let ivp = Ivp::new(0.0, vec![2.0]).unwrap();
        let sol = solve_rk45(&Exponential, &ivp, &[1.0], &[-2.5], &SolverSpec::rk45(1e-9)).unwrap();
        assert_eq!(sol.stats.rhs_evals, 7 * sol.stats.steps_attempted());
    }

    #[test]
    fn max_steps_budget_is_enforced() {
        let spec = SolverSpec::Rk45 {
            tol_abs: 1e-12,
            tol_rel: 1e-12,
            max_steps_per_interval: 3,
            initial_step: 0.1,
        };
        let ivp = Ivp::new(0.0, vec![50.0]).unwrap();
        let r = solve_rk45(&Exponential, &ivp, &[1.0], &[-1.0], &spec);
        assert!(matches!(r, Err(OdeError::MaxStepsExceeded { .. })));
    }

    #[test]
    fn lotka_volterra_self_consistency() {
        // Tight-tolerance run as oracle for the loose one.
        struct Lv;
        impl OdeRhs for Lv {
            fn dim(&self) -> usize {
                2
            }
            fn eval<S: Scalar>(&self, _t: f64, y: &[S], p: &[S], dy: &mut [S]) {
                dy[0] = p[0] * y[0] - p[1] * y[0] * y[1];
                dy[1] = p[2] * y[0] * y[1] - p[3] * y[1];
            }
        }
        let times: Vec<f64> = (1901..=1920).map(|y| y as f64).collect();
        let ivp = Ivp::new(1900.0, times).unwrap();
        let psi = [0.55, 0.028, 0.024, 0.80];
        let y0 = [30.0, 4.0];
        let loose = solve_rk45(&Lv, &ivp, &y0, &psi, &SolverSpec::rk45(1e-6)).unwrap();
        let tight = solve_rk45(&Lv, &ivp, &y0, &psi, &SolverSpec::rk45(1e-10)).unwrap();
        let max_diff = loose
            .states
            .iter()
            .zip(tight.states.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-3, "max_diff = {max_diff}");
    }
}
