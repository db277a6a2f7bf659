use std::path::Path;

use serde_json::json;
use thiserror::Error;
use transonic_core::SolverError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
    /// The outer iteration hit its cap; artifacts were still written.
    #[error("outer iteration did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::NotConverged(_) => "non_convergence",
            CliError::Solver(e) => match e {
                SolverError::Domain(_) => "domain",
                SolverError::Precondition(_) => "precondition",
                SolverError::Input(_) => "input",
                SolverError::Overflow(_) => "overflow",
                SolverError::Admissibility(_) => "admissibility",
                SolverError::Degenerate(_) => "degenerate",
                SolverError::Singular { .. } => "singular",
                SolverError::NonConvergence(_) => "non_convergence",
                SolverError::Internal(_) => "internal",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" | "io" | "domain" | "precondition" | "input" | "overflow" => 2,
            "internal" => 4,
            _ => 3,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "class": self.class(), "exit_code": self.exit_code(), "message": self.to_string() } }).to_string()
    }
}
