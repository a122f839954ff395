//! Scaling-law toolkit for time series forecasting in intrinsic space.
//!
//! The crate models forecasting as regression from a truncated intrinsic
//! coordinate vector whose variances follow a Zip-f law, predicts the test
//! loss in closed form, solves for the horizon that minimizes it, estimates
//! the spectrum of real series and checks every scaling exponent against
//! Monte Carlo simulation.

pub mod curve_fit;
pub mod error;
pub mod estimator;
pub mod horizon_solver;
pub mod intrinsic_model;
pub mod loss_model;
pub mod mc_oracle;
pub mod seed;
pub mod table;

pub use error::{Error, Result};
pub use table::Table;
