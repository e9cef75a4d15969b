//! Experiment driver for the HHO Gross-Pitaevskii solver: JSON
//! configuration, reference solutions, nested-mesh error norms, EOC tables,
//! lower-bound studies and CSV/JSON/SVG reports.

pub mod config;
pub mod error;
pub mod report;
pub mod study;
pub mod svg;
pub mod transfer;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use study::{run_convergence, run_lowerbound, run_mesh_info, run_solve, RunOptions};
