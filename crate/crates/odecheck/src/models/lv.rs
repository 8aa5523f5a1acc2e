//! Lotka-Volterra predator-prey model on the 1900-1920 lynx/hare pelt data.
//! State y1 is the prey (hare), y2 the predator (lynx); the initial state is
//! itself a model parameter.

use super::{Dataset, ModelError, PosteriorModel};
use crate::ode::{solve, Ivp, OdeError, OdeRhs, Solution, SolverSpec};
use crate::scalar::{lognormal_lpdf, normal_lpdf, Scalar};

pub const LV_BUNDLED_CSV: &str = include_str!("../../data/hudson_bay_lynx_hare.csv");

const PARAM_NAMES: [&str; 7] = ["psi1", "psi2", "psi3", "psi4", "sigma", "y0_hare", "y0_lynx"];

pub struct LvRhs;

impl OdeRhs for LvRhs {
    fn dim(&self) -> usize {
        2
    }

    fn eval<S: Scalar>(&self, _t: f64, y: &[S], psi: &[S], dy: &mut [S]) {
        let prey_growth = psi[0] * y[0];
        let interaction = y[0] * y[1];
        dy[0] = prey_growth - psi[1] * interaction;
        dy[1] = psi[2] * interaction - psi[3] * y[1];
    }
}

pub struct LotkaVolterraModel {
    dataset: Dataset,
    ivp: Ivp,
    /// Dataset column per ODE state: `state_cols[d]` observes state d.
    state_cols: [usize; 2],
}

impl LotkaVolterraModel {
    pub fn new(dataset: Dataset) -> Result<Self, ModelError> {
        let hare = dataset
            .column_index("hare")
            .ok_or_else(|| ModelError::Dataset("lv dataset needs a `hare` column".into()))?;
        let lynx = dataset
            .column_index("lynx")
            .ok_or_else(|| ModelError::Dataset("lv dataset needs a `lynx` column".into()))?;
        if dataset.values.iter().any(|&v| !(v > 0.0)) {
            return Err(ModelError::Dataset(
                "lognormal observation model needs positive data".into(),
            ));
        }
        let t0 = dataset.times[0];
        let ivp =
            Ivp::new(t0, dataset.times.clone()).map_err(|e| ModelError::Dataset(e.to_string()))?;
        Ok(LotkaVolterraModel {
            dataset,
            ivp,
            state_cols: [hare, lynx],
        })
    }

    pub fn with_bundled_data() -> Self {
        let ds = Dataset::from_reader(LV_BUNDLED_CSV.as_bytes()).unwrap();
        LotkaVolterraModel::new(ds).unwrap()
    }
}

impl PosteriorModel for LotkaVolterraModel {
    fn name(&self) -> &str {
        "lotka-volterra"
    }

    fn dim(&self) -> usize {
        7
    }

    fn ode_dim(&self) -> usize {
        2
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
        // rate-like parameters (psi1, psi4, sigma) start at 1, interaction
        // coefficients (psi2, psi3) at 0.1; y0 = first observation
        let theta = [
            1.0,
            0.1,
            0.1,
            1.0,
            1.0,
            self.dataset.get(0, self.state_cols[0]),
            self.dataset.get(0, self.state_cols[1]),
        ];
        self.unconstrain(&theta)
    }

    fn log_prior<S: Scalar>(&self, theta: &[S]) -> Result<S, ModelError> {
        if theta.iter().any(|t| !(t.value() > 0.0)) {
            return Err(ModelError::Domain("lv parameters must be positive".into()));
        }
        // Truncated normals evaluated as plain normal densities on theta;
        // the truncation normalizer is theta-independent and dropped.
        // Priors follow parameter roles in dy2/dt = psi3*y1*y2 - psi4*y2:
        // the per-capita rates psi1 (prey growth) and psi4 (predator death)
        // get Normal_+(1, 0.5^2), the interaction coefficients psi2 and psi3
        // get Normal_+(0.05, 0.05^2).
        let mut lp = normal_lpdf(theta[0], S::constant(1.0), S::constant(0.5));
        lp += normal_lpdf(theta[1], S::constant(0.05), S::constant(0.05));
        lp += normal_lpdf(theta[2], S::constant(0.05), S::constant(0.05));
        lp += normal_lpdf(theta[3], S::constant(1.0), S::constant(0.5));
        lp += lognormal_lpdf(theta[4], S::constant(-1.0), S::constant(1.0));
        let mu0 = S::constant(10.0f64.ln());
        lp += lognormal_lpdf(theta[5], mu0, S::constant(1.0));
        lp += lognormal_lpdf(theta[6], mu0, S::constant(1.0));
        Ok(lp)
    }

    fn log_likelihood<S: Scalar>(&self, theta: &[S], sol: &Solution<S>) -> Option<S> {
        let sigma = theta[4];
        let mut lp = S::zero();
        for n in 0..self.dataset.n_rows() {
            let row = sol.row(n);
            for d in 0..2 {
                let y = row[d];
                if !(y.value() > 0.0) {
                    return None;
                }
                let x = S::constant(self.dataset.get(n, self.state_cols[d]));
                lp += lognormal_lpdf(x, y.ln(), sigma);
            }
        }
        Some(lp)
    }

    fn solve_ode<S: Scalar>(&self, theta: &[S], spec: &SolverSpec) -> Result<Solution<S>, OdeError> {
        let y0 = [theta[5], theta[6]];
        solve(&LvRhs, &self.ivp, &y0, &theta[..4], spec)
    }
}
