use thiserror::Error;

/// Errors raised by the model, density, inference and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error in {block}: {detail}")]
    Numeric { block: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("covariance not positive definite{}: {detail}", fmt_step(.step))]
    Definiteness { step: Option<usize>, detail: String },

    #[error("unknown model `{name}`; available: {}", .available.join(", "))]
    Lookup { name: String, available: Vec<String> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("simulation diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("model shape error: {0}")]
    ModelShape(String),

    #[error("parse error at row {row}: {detail}")]
    Parse { row: usize, detail: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_step(step: &Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
