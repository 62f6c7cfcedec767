//! Command-line front end: run configuration, training loop, evaluation
//! traces and checkpoint inspection.

pub mod config;
pub mod error;
pub mod eval;
pub mod inspect;
pub mod train;

pub use config::RunConfig;
pub use error::CliError;
