//! Config-driven experiment harness: MFPT sweeps, seeded training runs,
//! reset-rate sweeps and drift diagnostics, written as tidy CSV.

pub mod aggregate;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
