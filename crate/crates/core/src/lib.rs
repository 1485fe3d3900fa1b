//! Score-driven (GAS) models for discrete trade durations with excess zeros.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: observation densities with scores and Fisher information
//! - [`gas`]: link functions, score scalings and the filter recursion
//! - [`optim`]: Nelder-Mead, BFGS and Newton minimizers with numerical
//!   derivatives
//! - [`estimation`]: maximum likelihood fitting, standard errors, AIC and the
//!   filter invertibility diagnostic
//! - [`evaluation`]: one-step-ahead log scores and the Diebold-Mariano test
//! - [`simulation`]: path simulation and the rounding Monte-Carlo study
//! - [`pipeline`]: tick-data cleaning and duration series construction

pub mod distributions;
pub mod estimation;
pub mod evaluation;
pub mod gas;
pub mod optim;
pub mod pipeline;
pub mod simulation;

/// Library version embedded in result files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
