//! Configuration, batch runs and file output for the transonic nozzle solver.

pub mod config;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::CliError;
