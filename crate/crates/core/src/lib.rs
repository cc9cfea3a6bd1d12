//! Optimal lockdown control of a stochastic SIR epidemic.
//!
//! The transmission rate follows a controlled mean-reverting diffusion that is
//! bounded between 0 and a maximal rate; the policymaker pays a quadratic cost
//! in infections and lockdown effort. The stationary dynamic-programming
//! equation of the problem is solved by value recursion, evaluating each
//! linearized equation with Monte Carlo discounted path integrals on a masked
//! 3D grid. The resulting value gradient induces a closed-form feedback
//! lockdown policy, which the ensemble simulator runs in closed loop.
//!
//! Module map:
//! - [`model`]: parameters, domain state, validation
//! - [`sir`]: deterministic susceptible/infected sub-dynamics (RK4)
//! - [`rng`]: counter-based reproducible random streams
//! - [`sde`]: clamped Euler–Maruyama simulation of the transmission rate
//! - [`cost`]: running cost, Hamiltonian, closed-form feedback minimizer
//! - [`grid`]: masked value grid and trilinear interpolation
//! - [`solver`]: Monte Carlo value recursion
//! - [`grid_io`]: binary grid container with JSON sidecar
//! - [`sim`]: closed-loop ensembles and scalar metrics
//! - [`export`]: CSV / SVG / metrics artifacts

pub mod cost;
pub mod error;
pub mod export;
pub mod grid;
pub mod grid_io;
pub mod model;
pub mod rng;
pub mod sde;
pub mod sim;
pub mod sir;
pub mod solver;

pub use error::{Error, Result};
pub use model::{BetaPath, DriftMode, EpidemicState, ModelParams};
