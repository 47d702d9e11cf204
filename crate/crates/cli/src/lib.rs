//! The `qtoken` command-line tool.
//!
//! Each subcommand runs one stage of the pipeline and writes its results as
//! data files into the output directory. [`run`] is the whole program minus
//! argument parsing and process exit, so it can be driven from tests.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};

pub mod args;
pub mod commands;
pub mod output;
pub mod svg;

pub use args::Cli;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Exit code 1.
    Runtime,
    /// Exit code 2: bad arguments or violated preconditions.
    Usage,
    /// Exit code 3: malformed or inconsistent input data.
    Data,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::runtime(format!("{}: {e}", path.display()))
    }

    pub(crate) fn csv(e: csv::Error) -> Self {
        Self::runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Runtime => 1,
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<qtoken::Error> for CliError {
    fn from(e: qtoken::Error) -> Self {
        use qtoken::Error as E;
        let kind = match &e {
            E::Parse { .. } | E::Data { .. } => ErrorKind::Data,
            E::InvalidAngle(_)
            | E::InvalidModel(_)
            | E::Precondition(_)
            | E::DegenerateSample(_)
            | E::UnachievableTarget { .. }
            | E::Profile(_) => ErrorKind::Usage,
            E::FitFailed { .. } | E::Io(_) | E::Json(_) => ErrorKind::Runtime,
        };
        let message = match &e {
            E::FitFailed {
                moment_estimate: Some(m), ..
            } => format!(
                "{e} (moment estimate: location {}, scale {}, shape {})",
                m.location, m.scale, m.shape
            ),
            _ => e.to_string(),
        };
        Self { kind, message }
    }
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable result lines for stdout.
    pub summary: Vec<String>,
    /// Non-fatal problems for stderr.
    pub warnings: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match cli.common.threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::runtime(e.to_string()))?;
            pool.install(|| commands::dispatch(cli))
        }
        None => commands::dispatch(cli),
    }
}
