use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient requires a scalar output, got shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error("{what} is outside the conjugate domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite {
        what: &'static str,
        iteration: u64,
        /// Metrics of the last good state, as a JSON object.
        diagnostic: String,
    },

    #[error("root bracket expansion failed for u = {u}")]
    Bracket { u: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
