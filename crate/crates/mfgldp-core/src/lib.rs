//! Numerical laboratory for linear-quadratic N-player stochastic differential
//! games and their mean-field limits.
//!
//! The crate is organized around one scalar-state model family (see [`model`])
//! whose drift is affine in state, control, and the means of both, and whose
//! running and terminal costs are quadratic. For that family:
//!
//! * [`mfg_solver`] computes the decoupling field of the limiting
//!   forward-backward system via backward Riccati integration, the induced
//!   mean flow, pointwise residuals of the associated master PDE, and a
//!   first-order discrete forward-backward oracle used for cross-validation;
//! * [`nplayer_solver`] solves the symmetric N-player Nash system with an
//!   exchangeable affine ansatz, provides a brute-force discrete Nash oracle
//!   on full state vectors, and measures the O(1/N) coupling residuals;
//! * [`particle`] simulates interacting ensembles (equilibrium, auxiliary,
//!   limit, and controlled systems) from reproducible Brownian bundles;
//! * [`measure`] computes one-dimensional quadratic Wasserstein distances,
//!   including an exact small-support assignment oracle;
//! * [`ldp`] estimates tail probabilities and Laplace functionals of the
//!   empirical mean and evaluates the corresponding variational rate values
//!   by two independent routes;
//! * [`coop`] solves the cooperative (planner) variant and runs the matching
//!   large-deviation comparison.
//!
//! Everything is deterministic given a seed: random numbers come from a
//! counter-style generator keyed on (seed, path, step), and all parallel
//! reductions are index-ordered.

#![forbid(unsafe_code)]

pub mod coop;
pub mod error;
pub mod grid;
pub mod ldp;
pub mod measure;
pub mod mfg_solver;
pub mod model;
pub mod nplayer_solver;
pub mod particle;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
