//! Target-mediated drug disposition model: ligand y1, receptor y2, complex y3.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, ModelError, PosteriorModel};
use crate::ode::{solve, Ivp, OdeError, OdeRhs, Solution, SolverSpec};
use crate::scalar::{lognormal_lpdf, normal_lpdf, Scalar};

/// Simulation rates (k_on, k_off, k_in, k_out, k_eL, k_eP).
pub const TMDD_TRUE_PSI: [f64; 6] = [0.592, 0.900, 2.212, 0.823, 0.201, 0.024];
pub const TMDD_TRUE_SIGMA: f64 = 0.5;
/// Initial drug bolus.
const L0: f64 = 10.0;

/// The 15 observation times.
pub const TMDD_TIMES: [f64; 15] = [
    0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0,
];

const PARAM_NAMES: [&str; 7] = ["k_on", "k_off", "k_in", "k_out", "k_eL", "k_eP", "sigma"];

pub struct TmddRhs;

impl OdeRhs for TmddRhs {
    fn dim(&self) -> usize {
        3
    }

    fn eval<S: Scalar>(&self, _t: f64, y: &[S], psi: &[S], dy: &mut [S]) {
        let (k_on, k_off, k_in, k_out, k_el, k_ep) = (psi[0], psi[1], psi[2], psi[3], psi[4], psi[5]);
        let binding = k_on * y[0] * y[1] - k_off * y[2];
        dy[0] = -(k_el * y[0]) - binding;
        dy[1] = k_in - k_out * y[1] - binding;
        dy[2] = binding - k_ep * y[2];
    }
}

pub struct TmddModel {
    dataset: Dataset,
    ivp: Ivp,
    obs_col: usize,
}

impl TmddModel {
    pub fn new(dataset: Dataset) -> Result<Self, ModelError> {
        let obs_col = dataset
            .column_index("complex")
            .ok_or_else(|| ModelError::Dataset("tmdd dataset needs a `complex` column".into()))?;
        let ivp = Ivp::new(0.0, dataset.times.clone())
            .map_err(|e| ModelError::Dataset(e.to_string()))?;
        Ok(TmddModel {
            dataset,
            ivp,
            obs_col,
        })
    }

    pub fn with_simulated_data(seed: u64) -> Self {
        TmddModel::new(simulate_tmdd_data(seed)).unwrap()
    }

    fn initial_state<S: Scalar>(theta: &[S]) -> [S; 3] {
        // y0 = [L0, k_in / k_out, 0]; the receptor component depends on the
        // parameters, so its sensitivities flow through here.
        [
            S::constant(L0),
            theta[2] / theta[3],
            S::zero(),
        ]
    }
}

impl PosteriorModel for TmddModel {
    fn name(&self) -> &str {
        "tmdd"
    }

    fn dim(&self) -> usize {
        7
    }

    fn ode_dim(&self) -> usize {
        3
    }

    fn param_names(&self) -> Vec<String> {
        PARAM_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn ivp(&self) -> &Ivp {
        &self.ivp
    }

    fn init_eta(&self) -> Vec<f64> {
        // chains initialized at theta = 1
        vec![0.0; 7]
    }

    fn log_prior<S: Scalar>(&self, theta: &[S]) -> Result<S, ModelError> {
        if theta.iter().any(|t| !(t.value() > 0.0)) {
            return Err(ModelError::Domain("tmdd parameters must be positive".into()));
        }
        let sd = S::constant(0.3);
        let mut lp = lognormal_lpdf(theta[0], S::constant(-1.0), sd); // k_on
        lp += lognormal_lpdf(theta[1], S::zero(), sd); // k_off
        lp += lognormal_lpdf(theta[2], S::zero(), sd); // k_in
        lp += lognormal_lpdf(theta[3], S::zero(), sd); // k_out
        lp += lognormal_lpdf(theta[4], S::constant(-1.0), sd); // k_eL
        lp += lognormal_lpdf(theta[5], S::constant(-3.0), sd); // k_eP
        lp += lognormal_lpdf(theta[6], S::zero(), sd); // sigma
        Ok(lp)
    }

    fn log_likelihood<S: Scalar>(&self, theta: &[S], sol: &Solution<S>) -> Option<S> {
        let sigma = theta[6];
        let mut lp = S::zero();
        for n in 0..self.dataset.n_rows() {
            let x = S::constant(self.dataset.get(n, self.obs_col));
            lp += normal_lpdf(x, sol.row(n)[2], sigma);
        }
        Some(lp)
    }

    fn solve_ode<S: Scalar>(&self, theta: &[S], spec: &SolverSpec) -> Result<Solution<S>, OdeError> {
        let y0 = TmddModel::initial_state(theta);
        solve(&TmddRhs, &self.ivp, &y0, &theta[..6], spec)
    }
}

/// Simulate the complex measurements at the true parameters: reference solve
/// with RK45(1e-12) plus Normal(0, sigma^2) noise on y3, seeded.
pub fn simulate_tmdd_data(seed: u64) -> Dataset {
    simulate_tmdd_data_with_sigma(seed, TMDD_TRUE_SIGMA)
}

pub fn simulate_tmdd_data_with_sigma(seed: u64, sigma: f64) -> Dataset {
    let ivp = Ivp::new(0.0, TMDD_TIMES.to_vec()).unwrap();
    let psi = TMDD_TRUE_PSI;
    let y0 = [L0, psi[2] / psi[3], 0.0];
    let sol = solve(&TmddRhs, &ivp, &y0, &psi, &SolverSpec::rk45(1e-12))
        .expect("reference solve of the simulation IVP");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..ivp.output_times.len())
        .map(|n| {
            let noise = if sigma > 0.0 {
                Normal::new(0.0, sigma).unwrap().sample(&mut rng)
            } else {
                0.0
            };
            sol.row(n)[2] + noise
        })
        .collect();
    Dataset::new(TMDD_TIMES.to_vec(), vec!["complex".into()], values)
}
