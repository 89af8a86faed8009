use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::model::SourceChannel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid category name {0:?}")]
    InvalidCategory(String),

    #[error("invalid window: start {start} is not before end {end}")]
    InvalidWindow { start: DateTime<Utc>, end: DateTime<Utc> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("input header is missing required column {0:?}")]
    MissingColumn(String),

    #[error("lag {lag} out of range for a field with {bins} time bins")]
    LagOutOfRange { lag: usize, bins: usize },

    #[error("cell index {index} out of range for a field with {cells} cells")]
    CellOutOfRange { index: usize, cells: usize },

    #[error("distance bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),

    #[error("density resolution must be at least 1x1, got {nx}x{ny}")]
    InvalidResolution { nx: usize, ny: usize },

    #[error("probability vector has an invalid entry {0}")]
    InvalidProbability(f64),

    #[error("probability vector sums to {0}, expected 1")]
    NotNormalized(f64),

    #[error("invalid contingency table: {0}")]
    InvalidTable(String),

    #[error("contingency table has zero total mass")]
    EmptyTable,

    #[error("dataset has no {0} events")]
    MissingSource(SourceChannel),

    #[error("invalid generator config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
