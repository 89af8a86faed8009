//! Spatiotemporal analytics for urban grid-management event logs.
//!
//! The pipeline runs ingestion ([`ingest`]) into an [`EventDataset`], then
//! aggregation onto a cell by time-bin count field ([`aggregate`]), and from
//! there temporal and spatial relevance curves ([`relevance`]) and
//! category co-occurrence mutual information ([`category_mi`]). [`synth`]
//! produces seeded synthetic logs with controllable structure.

pub mod aggregate;
pub mod category_mi;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod model;
pub mod relevance;
pub mod synth;

pub use error::{Error, Result};
pub use model::{BinWidth, CategoryId, EventDataset, EventRecord, GridCell, SourceChannel, TimeGrid, TimeWindow};
