use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("solvability error: source mean {mean:e} is not zero (norm {norm:e})")]
    Solvability { mean: f64, norm: f64 },

    #[error("resonance: operator symbol vanishes at mode ({kx}, {ky})")]
    Resonance { kx: i64, ky: i64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("grid search failed: every trial diverged")]
    SearchFailure,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
