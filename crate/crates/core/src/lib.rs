//! Simulation and verification toolkit for the deterministic and stochastic
//! p-Laplace equation with additive noise.
//!
//! * [`model`]: parameters, grids, sine-mode noise spectra.
//! * [`scalar`]: the one-dimensional SDE, its closed-form deterministic flow
//!   and its invariant density.
//! * [`field`]: finite-difference p-Laplacian, implicit PDE/SPDE stepping,
//!   norm traces and decay fits.
//! * [`transport`]: exact empirical Wasserstein distances and bounds.
//! * [`mixing`]: distance curves, mixing times, scaling fits, closed-form
//!   bounds and the rate tables.

pub mod error;
pub mod exec;
pub mod field;
pub mod io;
pub mod mixing;
pub mod model;
pub mod quad;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{ModelParams, NoiseSpec};
pub use rng::RngStream;
