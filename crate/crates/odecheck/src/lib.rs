//! Bayesian inference for ODE models with a built-in reliability workflow:
//! sample the posterior with a cheap solver, then verify and correct the
//! result with Pareto smoothed importance sampling against an accuracy
//! ladder of more precise solvers.

pub mod models;
pub mod ode;
pub mod psis;
pub mod sampler;
pub mod workflow;
pub mod scalar;
