//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

/// All failure modes surfaced by the library.
///
/// Recoverable conditions that callers are expected to branch on (bad user
/// input, infeasible constraints, arithmetic overflow in fixed-point
/// inference) get dedicated variants; everything else is folded into
/// [`Error::Internal`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// File could not be read or written.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input data (CSV cell, JSON document, gate library...).
    /// Row and column are 1-based where applicable, 0 otherwise.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    /// Caller supplied arguments that violate a documented precondition
    /// (empty dataset, mismatched dimensions, k larger than the population,
    /// out-of-range gene values and so on).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A fixed-point format is self-inconsistent or cannot represent the
    /// requested conversion.
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: loss is not finite at epoch {epoch}")]
    Diverged { epoch: usize },

    /// A fixed-point accumulator exceeded its declared width during
    /// inference. The widths are profiled with one guard bit, so this only
    /// fires on inputs outside the profiled envelope.
    #[error(
        "accumulator overflow at layer {layer}, neuron {neuron}: \
         value {value} does not fit in {magnitude_bits} magnitude bits"
    )]
    Overflow {
        layer: usize,
        neuron: usize,
        value: i64,
        magnitude_bits: u32,
    },

    /// No supply voltage in the characterized range meets the delay
    /// constraint.
    #[error(
        "delay constraint infeasible: {achievable_s:.6} s at {at_voltage:.2} V \
         is the best achievable, constraint is {constraint_s:.6} s"
    )]
    Infeasible {
        achievable_s: f64,
        at_voltage: f64,
        constraint_s: f64,
    },

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Wrap an i/o error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for invalid input or
    /// configuration, 3 for an infeasible constraint, 4 for internal
    /// invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::InvalidFormat(_)
            | Error::Diverged { .. }
            | Error::Overflow { .. } => 2,
            Error::Infeasible { .. } => 3,
            Error::Internal(_) => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            row: e.line(),
            column: e.column(),
            message: format!("json: {e}"),
        }
    }
}
