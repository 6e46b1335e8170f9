use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid harmonic index (n={n}, m={m}, odd={odd})")]
    InvalidHarmonicIndex { n: usize, m: usize, odd: bool },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("kernel is not single-lobe (a={a}, b={b})")]
    NotSingleLobe { a: f64, b: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("index sets do not match: {0}")]
    IndexMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
