// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ladder geometry: {0}")]
    InvalidGeometry(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("configuration {config:#x} is outside the S_z = 0 sector (popcount {popcount}, expected {expected})")]
    SectorViolation {
        config: u64,
        popcount: u32,
        expected: u32,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{what} did not converge after {iterations} iterations (best bracket [{lo}, {hi}])")]
    Convergence {
        what: &'static str,
        iterations: usize,
        lo: f64,
        hi: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("projection onto X = {x} annihilates the state")]
    EmptyProjection { x: i32 },

    #[error("target sigma_H = {target} is above the unfiltered value {unfiltered}")]
    UnreachableTarget { target: f64, unfiltered: f64 },

    #[error("state is not normalized (norm^2 = {norm_sqr})")]
    Unnormalized { norm_sqr: f64 },

    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),

    #[error("X = {x} is not an admissible eigenvalue for N = {n}")]
    Domain { x: i32, n: usize },

    #[error("generator construction failed: {0}")]
    GeneratorConstruction(String),

    #[error("fit failed: {message} (residual {residual})")]
    Fit { message: String, residual: f64 },

    #[error("overlap window of {overlap} time units is shorter than the required {required}")]
    InsufficientOverlap { overlap: f64, required: f64 },

    #[error("trace never equilibrates")]
    NotEquilibrated,

    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
