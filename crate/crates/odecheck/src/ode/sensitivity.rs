//! Forward sensitivities by running the solvers over dual numbers.
//!
//! For fixed-step methods this is the direct method: the tangents are the
//! exact derivative of the discrete solver output. For RK45 the tangent
//! lanes form the forward sensitivity system solved alongside the state,
//! and they participate in the error control (see `error_norm_lanes`).

use super::{solve, Ivp, OdeError, OdeRhs, OdeSolution, Solution, SolverSpec};
use crate::scalar::{Dual, MAX_TANGENTS};

/// Entry `(n, d, p)` = d y_d(t_n) / d psi_p.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    pub data: Vec<f64>,
    pub n_times: usize,
    pub dim: usize,
    pub n_params: usize,
}

impl SensitivityMatrix {
    pub fn get(&self, n: usize, d: usize, p: usize) -> f64 {
        self.data[(n * self.dim + d) * self.n_params + p]
    }
}

/// Solve the IVP and the sensitivities of the solution w.r.t. `psi`.
///
/// `dy0_dpsi` is the D x P (row-major) Jacobian of the initial state, for
/// initial states that depend on the parameters.
pub fn solve_with_sensitivities<R: OdeRhs + ?Sized>(
    rhs: &R,
    ivp: &Ivp,
    y0: &[f64],
    dy0_dpsi: &[f64],
    psi: &[f64],
    spec: &SolverSpec,
) -> Result<(OdeSolution, SensitivityMatrix), OdeError> {
    let d = rhs.dim();
    let p = psi.len();
    if p > MAX_TANGENTS {
        return Err(OdeError::Domain(format!(
            "{p} parameters exceed the {MAX_TANGENTS} tangent lanes"
        )));
    }
    if dy0_dpsi.len() != d * p {
        return Err(OdeError::Domain("dy0_dpsi must be D x P".into()));
    }

    let psi_d: Vec<Dual> = psi
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual::seeded(v, i))
        .collect();
    let y0_d: Vec<Dual> = (0..d)
        .map(|i| {
            let mut s = Dual::new(y0[i]);
            s.dx[..p].copy_from_slice(&dy0_dpsi[i * p..(i + 1) * p]);
            s
        })
        .collect();

    let sol: Solution<Dual> = solve(rhs, ivp, &y0_d, &psi_d, spec)?;
    let values = sol.values();
    let mut data = Vec::with_capacity(sol.n_times * d * p);
    for s in &sol.states {
        data.extend_from_slice(&s.dx[..p]);
    }
    Ok((
        values,
        SensitivityMatrix {
            data,
            n_times: sol.n_times,
            dim: d,
            n_params: p,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::testsys::*;
    use super::super::{solve_fixed, FixedMethod};
    use super::*;

    #[test]
    fn exponential_growth_rate_sensitivity() {
        // y' = psi*y, y0 = 1: dy/dpsi at t = 1, psi = 1 is t e^{psi t} = e
        let ivp = Ivp::new(0.0, vec![1.0]).unwrap();
        for spec in [SolverSpec::rk45(1e-8), SolverSpec::rk4(50)] {
            let (sol, sens) =
                solve_with_sensitivities(&Exponential, &ivp, &[1.0], &[0.0], &[1.0], &spec).unwrap();
            assert!((sol.row(0)[0] - 1.0f64.exp()).abs() < 1e-5);
            assert!((sens.get(0, 0, 0) - 1.0f64.exp()).abs() < 1e-5);
        }
    }

    #[test]
    fn parameter_free_problem_has_zero_sensitivities() {
        struct Decay;
        impl OdeRhs for Decay {
            fn dim(&self) -> usize {
                1
            }
            fn eval<S: crate::scalar::Scalar>(&self, _t: f64, y: &[S], _psi: &[S], dy: &mut [S]) {
                dy[0] = -y[0];
            }
        }
        let ivp = Ivp::new(0.0, vec![1.0, 2.0]).unwrap();
        let (_, sens) =
            solve_with_sensitivities(&Decay, &ivp, &[1.0], &[0.0], &[0.7], &SolverSpec::rk45(1e-8))
                .unwrap();
        assert!(sens.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_method_matches_finite_differences_exactly() {
        // Fixed-step sensitivities differentiate the same discrete map, so
        // they must agree with central FD of solve_fixed to FD accuracy.
        struct Lv;
        impl OdeRhs for Lv {
            fn dim(&self) -> usize {
                2
            }
            fn eval<S: crate::scalar::Scalar>(&self, _t: f64, y: &[S], p: &[S], dy: &mut [S]) {
                dy[0] = p[0] * y[0] - p[1] * y[0] * y[1];
                dy[1] = p[2] * y[0] * y[1] - p[3] * y[1];
            }
        }
        let ivp = Ivp::new(0.0, vec![2.0, 5.0]).unwrap();
        let psi = [0.55, 0.028, 0.024, 0.80];
        let y0 = [30.0, 4.0];
        let (_, sens) = solve_with_sensitivities(
            &Lv,
            &ivp,
            &y0,
            &[0.0; 8],
            &psi,
            &SolverSpec::rk4(20),
        )
        .unwrap();

        let delta = 1e-6;
        for p_idx in 0..4 {
            let mut lo = psi;
            let mut hi = psi;
            lo[p_idx] -= delta;
            hi[p_idx] += delta;
            let sol_lo = solve_fixed(&Lv, &ivp, &y0, &lo, FixedMethod::Rk4, 20).unwrap();
            let sol_hi = solve_fixed(&Lv, &ivp, &y0, &hi, FixedMethod::Rk4, 20).unwrap();
            for n in 0..2 {
                for d in 0..2 {
                    let fd = (sol_hi.row(n)[d] - sol_lo.row(n)[d]) / (2.0 * delta);
                    let ad = sens.get(n, d, p_idx);
                    let scale = fd.abs().max(1.0);
                    assert!(
                        (fd - ad).abs() / scale < 1e-6,
                        "n={n} d={d} p={p_idx}: fd={fd} ad={ad}"
                    );
                }
            }
        }
    }

    #[test]
    fn initial_state_jacobian_is_propagated() {
        // y' = 0, y0 = psi: dy/dpsi = 1 at every output time.
        let ivp = Ivp::new(0.0, vec![1.0, 2.0]).unwrap();
        let (_, sens) =
            solve_with_sensitivities(&ZeroRhs(1), &ivp, &[3.0], &[1.0], &[3.0], &SolverSpec::rk4(2))
                .unwrap();
        assert_eq!(sens.get(0, 0, 0), 1.0);
        assert_eq!(sens.get(1, 0, 0), 1.0);
    }
}
