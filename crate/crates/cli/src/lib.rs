//! Command-line front end for the pulsed-ODMR rig simulator.
//!
//! One flat TOML configuration file describes the ensemble, the instrument
//! chain, the timing, and the protocol sweep; the binary runs the named
//! protocol against the simulated rig and emits CSV sweeps, fit reports,
//! and optional plot-ready waveform files.

// Validation uses `!(v >= 0.0)` on purpose: it rejects NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

/// Stable process exit codes.
pub mod exit_codes {
    /// Run completed and the fit converged.
    pub const SUCCESS: i32 = 0;
    /// The configuration failed to parse or validate.
    pub const CONFIG_ERROR: i32 = 2;
    /// The simulation or acquisition failed.
    pub const SIMULATION_ERROR: i32 = 3;
    /// The sweep completed but the fit did not converge.
    pub const FIT_NONCONVERGENCE: i32 = 4;
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("fit did not converge: {0}")]
    FitNonConvergence(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit_codes::CONFIG_ERROR,
            CliError::Simulation(_) | CliError::Io(_) => exit_codes::SIMULATION_ERROR,
            CliError::FitNonConvergence(_) => exit_codes::FIT_NONCONVERGENCE,
        }
    }
}
