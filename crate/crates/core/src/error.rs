//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("pricing domain error: {0}")]
    PricingDomain(String),

    #[error("experiment spec rejected: {0}")]
    SpecValidation(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
