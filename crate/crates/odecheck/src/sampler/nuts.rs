//! Multinomial dynamic HMC (NUTS) with diagonal mass matrix, dual-averaging
//! step-size adaptation, and Stan-like three-phase warmup windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DrawStats, Draws, SamplerConfig, SamplerDiagnostics, SamplerError};
use crate::models::{eval_with_gradient, unnorm_log_posterior, PosteriorModel};
use crate::ode::SolverSpec;

const DIVERGENCE_NATS: f64 = 1000.0;
const INIT_RETRIES: usize = 100;

/// Log density with gradient; the sampler needs nothing else from the target.
pub trait HmcTarget: Sync {
    fn dim(&self) -> usize;
    /// Returns `(logp, grad, work)` where `work` counts rhs evaluations, or
    /// `None` when the density is -inf (rejected in place).
    fn logp_grad(&self, eta: &[f64]) -> Option<(f64, Vec<f64>, u64)>;
}

struct ModelTarget<'a, M: PosteriorModel> {
    model: &'a M,
    spec: &'a SolverSpec,
}

impl<M: PosteriorModel> HmcTarget for ModelTarget<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn logp_grad(&self, eta: &[f64]) -> Option<(f64, Vec<f64>, u64)> {
        match eval_with_gradient(self.model, eta, self.spec) {
            Ok(g) => Some((g.logp, g.grad, g.stats.rhs_evals)),
            Err(_) => None,
        }
    }
}

/// One symplectic position-momentum update with diagonal mass matrix
/// `inv_mass` (posterior variance estimates). Returns the new phase-space
/// point with its log density and gradient, or `None` when the density or
/// gradient is non-finite along the way (a divergence signal).
#[allow(clippy::type_complexity)]
pub fn leapfrog(
    eta: &[f64],
    p: &[f64],
    grad: &[f64],
    eps: f64,
    inv_mass: &[f64],
    grad_fn: &mut dyn FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
) -> Option<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let d = eta.len();
    let mut p_new: Vec<f64> = (0..d).map(|i| p[i] + 0.5 * eps * grad[i]).collect();
    let q_new: Vec<f64> = (0..d).map(|i| eta[i] + eps * inv_mass[i] * p_new[i]).collect();
    let (logp, grad_new) = grad_fn(&q_new)?;
    for i in 0..d {
        p_new[i] += 0.5 * eps * grad_new[i];
    }
    if !logp.is_finite() || grad_new.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((q_new, p_new, logp, grad_new))
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    p.iter().zip(inv_mass).map(|(&pi, &mi)| 0.5 * pi * pi * mi).sum()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    minus: PhasePoint,
    plus: PhasePoint,
    prop: PhasePoint,
    /// logsumexp over states of -(H - H0): the multinomial weight.
    log_w: f64,
    rho: Vec<f64>,
    sum_accept: f64,
    n_states: u64,
    divergent: bool,
    turning: bool,
}

fn is_turning(rho: &[f64], p_minus: &[f64], p_plus: &[f64], inv_mass: &[f64]) -> bool {
    let mut along_minus = 0.0;
    let mut along_plus = 0.0;
    for i in 0..rho.len() {
        along_minus += rho[i] * inv_mass[i] * p_minus[i];
        along_plus += rho[i] * inv_mass[i] * p_plus[i];
    }
    along_minus < 0.0 || along_plus < 0.0
}

struct ChainCtx<'a, T: HmcTarget + ?Sized> {
    target: &'a T,
    inv_mass: Vec<f64>,
    rng: ChaCha8Rng,
    rhs_evals: u64,
    grad_evals: u64,
}

impl<T: HmcTarget + ?Sized> ChainCtx<'_, T> {
    fn eval(&mut self, q: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.grad_evals += 1;
        let (logp, grad, work) = self.target.logp_grad(q)?;
        self.rhs_evals += work;
        Some((logp, grad))
    }

    fn step(&mut self, from: &PhasePoint, eps: f64) -> Option<PhasePoint> {
        let inv_mass = self.inv_mass.clone();
        let mut grad_fn = |q: &[f64]| self.eval(q);
        let (q, p, logp, grad) =
            leapfrog(&from.q, &from.p, &from.grad, eps, &inv_mass, &mut grad_fn)?;
        Some(PhasePoint { q, p, grad, logp })
    }

    /// Build a subtree of 2^depth states extending from `edge` with signed
    /// step `eps` (negative for the backward direction).
    fn build_tree(&mut self, edge: &PhasePoint, depth: usize, eps: f64, h0: f64) -> Tree {
        if depth == 0 {
            let divergent_leaf = |minus: PhasePoint| Tree {
                plus: minus.clone(),
                prop: minus.clone(),
                minus,
                log_w: f64::NEG_INFINITY,
                rho: vec![0.0; self.target.dim()],
                sum_accept: 0.0,
                n_states: 1,
                divergent: true,
                turning: false,
            };
            let Some(next) = self.step(edge, eps) else {
                return divergent_leaf(edge.clone());
            };
            let h = -next.logp + kinetic(&next.p, &self.inv_mass);
            let delta = h - h0;
            if !delta.is_finite() || delta > DIVERGENCE_NATS {
                return divergent_leaf(next);
            }
            Tree {
                minus: next.clone(),
                plus: next.clone(),
                rho: next.p.clone(),
                log_w: -delta,
                sum_accept: (-delta).exp().min(1.0),
                n_states: 1,
                divergent: false,
                turning: false,
                prop: next,
            }
        } else {
            let mut inner = self.build_tree(edge, depth - 1, eps, h0);
            if inner.divergent || inner.turning {
                return inner;
            }
            let outer_edge = if eps > 0.0 { inner.plus.clone() } else { inner.minus.clone() };
            let outer = self.build_tree(&outer_edge, depth - 1, eps, h0);
            inner.sum_accept += outer.sum_accept;
            inner.n_states += outer.n_states;
            if outer.divergent || outer.turning {
                inner.divergent = outer.divergent;
                inner.turning = outer.turning;
                return inner;
            }
            let log_w = log_sum_exp(inner.log_w, outer.log_w);
            // multinomial sampling within the merged subtree
            if (self.rng.gen::<f64>().ln()) < outer.log_w - log_w {
                inner.prop = outer.prop.clone();
            }
            inner.log_w = log_w;
            for i in 0..inner.rho.len() {
                inner.rho[i] += outer.rho[i];
            }
            if eps > 0.0 {
                inner.plus = outer.plus;
            } else {
                inner.minus = outer.minus;
            }
            inner.turning =
                is_turning(&inner.rho, &inner.minus.p, &inner.plus.p, &self.inv_mass);
            inner
        }
    }

    /// One NUTS transition. Returns the new state and per-draw statistics.
    fn transition(
        &mut self,
        cur: PhasePoint,
        eps: f64,
        max_depth: usize,
    ) -> (PhasePoint, DrawStats) {
        let d = cur.q.len();
        let p: Vec<f64> = (0..d)
            .map(|i| {
                let z: f64 = self.rng.sample(rand_distr::StandardNormal);
                z / self.inv_mass[i].sqrt()
            })
            .collect();
        let h0 = -cur.logp + kinetic(&p, &self.inv_mass);
        let mut state = PhasePoint { p, ..cur };
        let mut minus = state.clone();
        let mut plus = state.clone();
        let mut rho = state.p.clone();
        let mut log_w = 0.0; // weight of the initial state: -(H0 - H0)
        let mut sum_accept = 0.0;
        let mut n_states = 0u64;
        let mut divergent = false;
        let mut depth = 0usize;
        let mut n_leapfrog = 0u32;

        while depth < max_depth {
            let forward: bool = self.rng.gen();
            let eps_signed = if forward { eps } else { -eps };
            let edge = if forward { plus.clone() } else { minus.clone() };
            let sub = self.build_tree(&edge, depth, eps_signed, h0);
            n_leapfrog += sub.n_states as u32;
            sum_accept += sub.sum_accept;
            n_states += sub.n_states;
            if sub.divergent || sub.turning {
                divergent = sub.divergent;
                break;
            }
            // biased progressive sampling favors the new subtree
            if (self.rng.gen::<f64>().ln()) < sub.log_w - log_w {
                state = sub.prop.clone();
            }
            log_w = log_sum_exp(log_w, sub.log_w);
            for i in 0..d {
                rho[i] += sub.rho[i];
            }
            if forward {
                plus = sub.plus;
            } else {
                minus = sub.minus;
            }
            depth += 1;
            if is_turning(&rho, &minus.p, &plus.p, &self.inv_mass) {
                break;
            }
        }

        let accept_stat = if n_states > 0 { sum_accept / n_states as f64 } else { 0.0 };
        (
            state,
            DrawStats {
                accept_stat,
                treedepth: depth as u32,
                n_leapfrog,
                divergent,
            },
        )
    }
}

// --- dual averaging --------------------------------------------------------

struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    m: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            h_bar: 0.0,
            log_eps_bar: eps0.ln(),
            m: 0.0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.m += 1.0;
        let w = 1.0 / (self.m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        let log_eps = self.mu - self.m.sqrt() / self.gamma * self.h_bar;
        let eta = self.m.powf(-self.kappa);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

// --- warmup schedule -------------------------------------------------------

/// Stan-style three-phase warmup: fast init buffer, doubling slow windows for
/// metric estimation, fast terminal buffer; buffers shrink proportionally
/// when warmup is short.
fn metric_window_ends(warmup: usize) -> (usize, Vec<usize>) {
    const INIT: usize = 75;
    const TERM: usize = 50;
    const BASE: usize = 25;
    let (init, term, base) = if warmup >= INIT + TERM + BASE {
        (INIT, TERM, BASE)
    } else {
        let init = (0.15 * warmup as f64) as usize;
        let term = (0.10 * warmup as f64) as usize;
        let base = warmup.saturating_sub(init + term).max(1);
        (init, term, base)
    };
    let slow_end = warmup.saturating_sub(term);
    let mut ends = Vec::new();
    let mut start = init;
    let mut w = base;
    while start < slow_end {
        let mut end = start + w;
        // absorb a final stub that could not fit another doubling
        if end + 2 * w > slow_end {
            end = slow_end;
        }
        ends.push(end.min(slow_end));
        start = end;
        w *= 2;
    }
    (init, ends)
}

struct RunningVariance {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(d: usize) -> Self {
        RunningVariance { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized toward a small diagonal, as in the reference sampler.
    fn regularized(&self) -> Option<Vec<f64>> {
        if self.n < 2.0 {
            return None;
        }
        let shrink = self.n / (self.n + 5.0);
        Some(
            self.m2
                .iter()
                .map(|&m2| (shrink * m2 / (self.n - 1.0) + 1e-3 * (1.0 - shrink)).max(1e-10))
                .collect(),
        )
    }
}

// --- chain driver ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub eta: Vec<f64>,
    pub logp: Vec<f64>,
    pub stats: Vec<DrawStats>,
    pub stepsize: f64,
    pub rhs_evals: u64,
    pub grad_evals: u64,
}

fn run_chain<T: HmcTarget + ?Sized>(
    target: &T,
    init: &[f64],
    config: &SamplerConfig,
    chain_idx: usize,
) -> Result<ChainOutput, SamplerError> {
    let d = target.dim();
    let mut ctx = ChainCtx {
        target,
        inv_mass: vec![1.0; d],
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ chain_idx as u64),
        rhs_evals: 0,
        grad_evals: 0,
    };

    // initialization: documented point first, jitter only on failure
    let mut cur = None;
    for retry in 0..=INIT_RETRIES {
        let q: Vec<f64> = if retry == 0 {
            init.to_vec()
        } else {
            init.iter().map(|&v| v + ctx.rng.gen_range(-2.0..2.0)).collect()
        };
        if let Some((logp, grad)) = ctx.eval(&q) {
            if logp.is_finite() {
                cur = Some(PhasePoint { p: vec![0.0; d], q, grad, logp });
                break;
            }
        }
    }
    let mut cur = cur.ok_or(SamplerError::InitializationFailure(INIT_RETRIES))?;

    let mut eps = config.init_stepsize;
    let mut da = DualAveraging::new(eps, config.target_accept);
    let (init_buffer, window_ends) = metric_window_ends(config.warmup);
    let mut window_idx = 0usize;
    let mut var_acc = RunningVariance::new(d);
    let n_kept = config.n_kept();
    let mut eta = Vec::with_capacity(n_kept * d);
    let mut logp = Vec::with_capacity(n_kept);
    let mut stats = Vec::with_capacity(n_kept);

    for iter in 0..config.iterations {
        let (next, draw_stats) = ctx.transition(cur, eps, config.max_treedepth);
        cur = next;
        if iter < config.warmup {
            eps = da.update(draw_stats.accept_stat);
            if window_idx < window_ends.len() {
                let window_start = if window_idx == 0 { init_buffer } else { window_ends[window_idx - 1] };
                if iter >= window_start {
                    var_acc.push(&cur.q);
                }
                if iter + 1 == window_ends[window_idx] {
                    if let Some(v) = var_acc.regularized() {
                        ctx.inv_mass = v;
                    }
                    var_acc = RunningVariance::new(d);
                    window_idx += 1;
                    // restart step-size adaptation around the current value
                    eps = da.adapted();
                    da = DualAveraging::new(eps, config.target_accept);
                }
            }
            if iter + 1 == config.warmup {
                eps = da.adapted();
            }
        } else {
            eta.extend_from_slice(&cur.q);
            logp.push(cur.logp);
            stats.push(draw_stats);
        }
    }

    Ok(ChainOutput {
        eta,
        logp,
        stats,
        stepsize: eps,
        rhs_evals: ctx.rhs_evals,
        grad_evals: ctx.grad_evals,
    })
}

/// Run all chains of `config` against a bare target (no ODE bookkeeping).
pub fn nuts_sample_target<T: HmcTarget + ?Sized>(
    target: &T,
    init: &[f64],
    config: &SamplerConfig,
) -> Result<Vec<ChainOutput>, SamplerError> {
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, init, config, c))
        .collect()
}

/// Run NUTS on an ODE posterior and package the draws for the workflow.
///
/// Stored log densities and solutions come from a plain-f64 re-evaluation of
/// each kept draw under `spec`: the sampler's dual-number evaluations carry
/// sensitivity lanes through the adaptive step-size control, so their value
/// lane is not bit-identical to a plain solve, and downstream importance
/// ratios must be exactly zero when M* = M.
pub fn nuts_sample<M: PosteriorModel>(
    model: &M,
    spec: &SolverSpec,
    config: &SamplerConfig,
) -> Result<(Draws, SamplerDiagnostics), SamplerError> {
    let start = std::time::Instant::now();
    let target = ModelTarget { model, spec };
    let init = model.init_eta();
    let outputs = nuts_sample_target(&target, &init, config)?;

    let d = model.dim();
    let n_draws = config.n_kept();
    let n_total = config.chains * n_draws;
    let sol_len = model.ivp().output_times.len() * model.ode_dim();

    let mut eta = Vec::with_capacity(n_total * d);
    let mut stats = Vec::with_capacity(n_total);
    for out in &outputs {
        eta.extend_from_slice(&out.eta);
        stats.extend_from_slice(&out.stats);
    }

    // record-time re-evaluation (see doc comment)
    let evals: Vec<(f64, Vec<f64>, u64)> = (0..n_total)
        .into_par_iter()
        .map(|s| {
            let q = &eta[s * d..(s + 1) * d];
            match unnorm_log_posterior(model, q, spec) {
                Ok(ev) => {
                    let work = ev.solution.stats.rhs_evals;
                    (ev.logp, ev.solution.states, work)
                }
                Err(inv) => (f64::NEG_INFINITY, vec![f64::NAN; sol_len], inv.stats.rhs_evals),
            }
        })
        .collect();

    let mut logp = Vec::with_capacity(n_total);
    let mut solutions = Vec::with_capacity(n_total * sol_len);
    let mut reeval_rhs = 0u64;
    for (lp, sol, work) in evals {
        logp.push(lp);
        solutions.extend_from_slice(&sol);
        reeval_rhs += work;
    }

    let total_rhs: u64 = outputs.iter().map(|o| o.rhs_evals).sum::<u64>() + reeval_rhs;
    let chains = outputs
        .iter()
        .enumerate()
        .map(|(c, out)| {
            let n = out.stats.len().max(1) as f64;
            super::ChainDiagnostics {
                chain: c,
                mean_accept_stat: out.stats.iter().map(|s| s.accept_stat).sum::<f64>() / n,
                stepsize: out.stepsize,
                mean_treedepth: out.stats.iter().map(|s| s.treedepth as f64).sum::<f64>() / n,
                mean_n_leapfrog: out.stats.iter().map(|s| s.n_leapfrog as f64).sum::<f64>() / n,
                divergence_fraction: out.stats.iter().filter(|s| s.divergent).count() as f64 / n,
            }
        })
        .collect();

    let draws = Draws {
        param_names: model.param_names(),
        dim: d,
        n_chains: config.chains,
        n_draws,
        eta,
        logp,
        solutions,
        sol_len,
        stats,
        stepsize: outputs.iter().map(|o| o.stepsize).collect(),
        method: spec.clone(),
    };
    let diagnostics = SamplerDiagnostics {
        chains,
        wall_seconds: start.elapsed().as_secs_f64(),
        total_rhs_evals: total_rhs,
    };
    Ok((draws, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdGaussian {
        dim: usize,
    }

    impl HmcTarget for StdGaussian {
        fn dim(&self) -> usize {
            self.dim
        }

        fn logp_grad(&self, eta: &[f64]) -> Option<(f64, Vec<f64>, u64)> {
            let logp = -0.5 * eta.iter().map(|x| x * x).sum::<f64>();
            Some((logp, eta.iter().map(|x| -x).collect(), 0))
        }
    }

    struct NeverFinite;

    impl HmcTarget for NeverFinite {
        fn dim(&self) -> usize {
            1
        }

        fn logp_grad(&self, _eta: &[f64]) -> Option<(f64, Vec<f64>, u64)> {
            None
        }
    }

    fn gaussian_grad(q: &[f64]) -> Option<(f64, Vec<f64>)> {
        let logp = -0.5 * q.iter().map(|x| x * x).sum::<f64>();
        Some((logp, q.iter().map(|x| -x).collect()))
    }

    fn hamiltonian(q: &[f64], p: &[f64], inv_mass: &[f64]) -> f64 {
        0.5 * q.iter().map(|x| x * x).sum::<f64>() + kinetic(p, inv_mass)
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        // harmonic oscillator over a fixed time span: halving eps should
        // quarter |dH| (global second-order accuracy)
        let inv_mass = [1.0];
        let err_over_span = |eps: f64| {
            let mut q = vec![1.0];
            let mut p = vec![0.5];
            let h0 = hamiltonian(&q, &p, &inv_mass);
            let (_, mut g) = gaussian_grad(&q).unwrap();
            let steps = (1.0 / eps).round() as usize;
            for _ in 0..steps {
                let (q1, p1, _, g1) =
                    leapfrog(&q, &p, &g, eps, &inv_mass, &mut gaussian_grad).unwrap();
                q = q1;
                p = p1;
                g = g1;
            }
            (hamiltonian(&q, &p, &inv_mass) - h0).abs()
        };
        let ratio = err_over_span(0.02) / err_over_span(0.01);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn leapfrog_zero_momentum_zero_gradient_fixed_point() {
        let mut flat = |_q: &[f64]| Some((0.0, vec![0.0, 0.0]));
        let q = [1.5, -2.0];
        let (q1, p1, _, _) =
            leapfrog(&q, &[0.0, 0.0], &[0.0, 0.0], 0.3, &[1.0, 1.0], &mut flat).unwrap();
        assert_eq!(q1, q.to_vec());
        assert_eq!(p1, vec![0.0, 0.0]);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let q = [0.7, -0.3];
        let p = [1.1, 0.4];
        let inv_mass = [2.0, 0.5];
        let (_, g) = gaussian_grad(&q).unwrap();
        let (q1, p1, _, g1) = leapfrog(&q, &p, &g, 0.2, &inv_mass, &mut gaussian_grad).unwrap();
        let p1_neg: Vec<f64> = p1.iter().map(|x| -x).collect();
        let (q2, p2, _, _) =
            leapfrog(&q1, &p1_neg, &g1, 0.2, &inv_mass, &mut gaussian_grad).unwrap();
        for i in 0..2 {
            assert!((q2[i] - q[i]).abs() < 1e-12);
            assert!((-p2[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_target_moments() {
        // 2-D standard Gaussian, 4 chains x 2000 kept
        let target = StdGaussian { dim: 2 };
        let config = SamplerConfig {
            iterations: 3000,
            warmup: 1000,
            seed: 42,
            ..SamplerConfig::default()
        };
        let outs = nuts_sample_target(&target, &[0.0, 0.0], &config).unwrap();
        let mut xs: Vec<[f64; 2]> = Vec::new();
        for out in &outs {
            for s in 0..out.logp.len() {
                xs.push([out.eta[2 * s], out.eta[2 * s + 1]]);
            }
        }
        let n = xs.len() as f64;
        assert_eq!(xs.len(), 8000);
        for d in 0..2 {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / n;
            // generous MCSE bound: sd/sqrt(ESS) with ESS >= n/10
            assert!(mean.abs() < 3.0 / (n / 10.0f64).sqrt(), "mean[{d}] = {mean}");
            assert!((var - 1.0).abs() < 0.1, "var[{d}] = {var}");
        }
        let cov = xs.iter().map(|x| x[0] * x[1]).sum::<f64>() / n;
        assert!(cov.abs() < 0.1, "cov = {cov}");
    }

    #[test]
    fn seeding_is_deterministic() {
        let target = StdGaussian { dim: 3 };
        let config = SamplerConfig {
            iterations: 300,
            warmup: 150,
            seed: 7,
            ..SamplerConfig::default()
        };
        let a = nuts_sample_target(&target, &[0.1, 0.2, 0.3], &config).unwrap();
        let b = nuts_sample_target(&target, &[0.1, 0.2, 0.3], &config).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.eta, y.eta);
            assert_eq!(x.logp, y.logp);
            assert_eq!(x.stepsize, y.stepsize);
        }
    }

    #[test]
    fn initialization_failure_is_reported() {
        let config = SamplerConfig {
            chains: 1,
            iterations: 10,
            warmup: 5,
            ..SamplerConfig::default()
        };
        let err = nuts_sample_target(&NeverFinite, &[0.0], &config);
        assert!(matches!(err, Err(SamplerError::InitializationFailure(_))));
    }

    #[test]
    fn warmup_windows_cover_schedule() {
        let (init, ends) = metric_window_ends(1000);
        assert_eq!(init, 75);
        assert_eq!(*ends.last().unwrap(), 950);
        assert!(ends.windows(2).all(|w| w[0] < w[1]));
        // short warmup still yields a valid schedule
        let (short_init, short) = metric_window_ends(60);
        assert!(!short.is_empty());
        assert!(short_init < *short.last().unwrap());
        assert!(*short.last().unwrap() <= 60);
    }
}
