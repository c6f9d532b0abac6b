//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fell outside its valid domain (natural domain, dual
    /// domain, simplex, probability range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A weighted operation received an all-zero weight group where a
    /// positive total weight is required.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// The conjugate-prior normalising integral diverges for the given
    /// hyperparameters.
    #[error("improper prior: {0}")]
    ImproperPrior(String),

    /// An iterative solver stopped without meeting its certificate.
    #[error("solver did not converge: certificate gap {gap:.3e} after {iterations} iterations")]
    NonConvergence { gap: f64, iterations: usize },

    /// A numerical quadrature failed to reach its tolerance.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Requested combination (family dimension, hypothesis kind, ...) is
    /// outside what this crate implements.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A trial ran past its hard horizon cap without stopping.
    #[error("trial censored: no stop within {cap} steps")]
    Censored { cap: u64 },

    /// Experiment configuration was rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
