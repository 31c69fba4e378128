//! Minimum distance-covariance estimation for models with endogenous
//! covariates.
//!
//! The estimator picks `θ` so that the model residuals `U(θ)` are as close to
//! independent of the instruments `Z` as the sample allows, measured by the
//! squared distance covariance `V²_n(U(θ), Z)`. Alongside the estimator the
//! crate provides distance-covariance primitives, asymptotic and bootstrap
//! inference, wild-bootstrap specification and relevance tests, and a
//! simulation harness for Monte Carlo studies.

pub mod dcov;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod models;
pub mod rng;
pub mod simlab;

pub use error::{MdepError, Result};
pub use estimator::{mdep_fit, mdep_fit_prepared, FitOptions, InitStrategy, MDepFit};
pub use models::{Dataset, Family, InterceptMode, ModelSpec};
