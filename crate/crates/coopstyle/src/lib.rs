//! Co-optimization toolkit for a two-arm feeding task: a caregiver arm learns
//! to bring a spoon to the mouth of a care-receiver whose head motion is
//! controlled by a style-conditioned policy. Styles are latent vectors kept
//! diverse through an information bonus and picked adversarially during
//! training so the caregiver stays robust to unfamiliar partners.

pub mod algo;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod env;
pub mod evalx;
pub mod nn;
pub mod plot;
pub mod styles;
pub mod trainer;

use std::path::PathBuf;

/// Process exit code for configuration, input, and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for runtime failures.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid value for {what}: {detail}")]
    Invalid { what: String, detail: String },

    #[error("non-finite {what} detected at {location} (value {value})")]
    NonFinite {
        what: &'static str,
        location: String,
        value: f64,
    },

    #[error("empty input: {what}")]
    Empty { what: &'static str },

    #[error("config error at {path}:{line}: {detail}")]
    Config {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("checkpoint error in {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Exit code the CLI maps this error to. Bad inputs and configs are
    /// distinguishable from genuine runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::Invalid { .. }
            | Error::Empty { .. }
            | Error::Config { .. }
            | Error::Checkpoint { .. } => EXIT_CONFIG,
            Error::NonFinite { .. } | Error::Io { .. } => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Worker count for data collection and evaluation, from `COOPSTYLE_THREADS`.
/// Defaults to 1 (fully serial). Results do not depend on this value.
pub fn worker_count() -> usize {
    match std::env::var("COOPSTYLE_THREADS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .unwrap_or(1),
        Err(_) => 1,
    }
}
