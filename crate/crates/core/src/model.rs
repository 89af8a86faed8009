//! Domain types shared by every analysis stage.
//!
//! An [`EventDataset`] is the cleaned, immutable input to aggregation,
//! relevance and category analysis. Records keep their parse order; grid
//! cells are kept sorted by `cell_id` and every record carries the index of
//! its cell so downstream stages never re-resolve string ids.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// Mean Earth radius of the WGS84 ellipsoid, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// How an event entered the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceChannel {
    MobileDevice,
    Hotline,
}

impl SourceChannel {
    pub const ALL: [SourceChannel; 2] = [SourceChannel::MobileDevice, SourceChannel::Hotline];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceChannel::MobileDevice => "MobileDevice",
            SourceChannel::Hotline => "Hotline",
        }
    }
}

impl fmt::Display for SourceChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownSource(pub String);

impl fmt::Display for UnknownSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown source channel {:?}", self.0)
    }
}

impl std::error::Error for UnknownSource {}

impl FromStr for SourceChannel {
    type Err = UnknownSource;

    /// Accepts the canonical names plus the spaced/underscored spellings
    /// found in exported reports, case-insensitively.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let folded: String =
            s.trim().chars().filter(|c| !matches!(c, ' ' | '_' | '-')).flat_map(char::to_lowercase).collect();
        match folded.as_str() {
            "mobiledevice" | "mobile" => Ok(SourceChannel::MobileDevice),
            "hotline" => Ok(SourceChannel::Hotline),
            _ => Err(UnknownSource(s.to_string())),
        }
    }
}

/// Category identifier. Identity is exact, case-sensitive string equality.
///
/// Backed by an `Arc<str>` so a million records share a handful of
/// allocations.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CategoryId(Arc<str>);

impl CategoryId {
    pub fn new(name: impl AsRef<str>) -> Result<Self> {
        let name = name.as_ref();
        if name.trim().is_empty() {
            return Err(Error::InvalidCategory(name.to_string()));
        }
        Ok(CategoryId(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for CategoryId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        CategoryId::new(value)
    }
}

impl From<CategoryId> for String {
    fn from(value: CategoryId) -> Self {
        value.0.to_string()
    }
}

impl AsRef<str> for CategoryId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// One reported problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub cell_id: String,
    pub reported_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
    pub latitude: f64,
    pub longitude: f64,
    pub source: SourceChannel,
    pub category: CategoryId,
    pub priority: Option<u8>,
    pub description: Option<String>,
}

impl EventRecord {
    pub fn has_valid_coordinates(&self) -> bool {
        valid_coordinates(self.latitude, self.longitude)
    }

    pub fn has_consistent_times(&self) -> bool {
        self.resolved_at.is_none_or(|r| self.reported_at <= r)
    }
}

pub fn valid_coordinates(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: String,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
}

/// Half-open UTC interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidWindow { start, end });
        }
        Ok(TimeWindow { start, end })
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinWidth {
    Day,
    Week,
}

impl BinWidth {
    pub fn seconds(self) -> i64 {
        self.days() * 86_400
    }

    pub fn days(self) -> i64 {
        match self {
            BinWidth::Day => 1,
            BinWidth::Week => 7,
        }
    }
}

impl FromStr for BinWidth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" | "daily" | "1d" => Ok(BinWidth::Day),
            "week" | "weekly" | "7d" => Ok(BinWidth::Week),
            other => Err(format!("unknown bin width {other:?}; expected day or week")),
        }
    }
}

/// Uniform grid of contiguous half-open time bins starting at `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub origin: Timestamp,
    pub bin_width: BinWidth,
    pub bin_count: usize,
}

impl TimeGrid {
    /// The smallest grid anchored at the window start whose bins cover the
    /// whole window. The last bin may extend past `window.end`.
    pub fn covering(window: &TimeWindow, bin_width: BinWidth) -> Self {
        let span = (window.end - window.start).num_seconds();
        let w = bin_width.seconds();
        let bin_count = ((span + w - 1) / w).max(1) as usize;
        TimeGrid { origin: window.start, bin_width, bin_count }
    }

    pub fn bin_index(&self, ts: Timestamp) -> Option<usize> {
        let offset = (ts - self.origin).num_seconds();
        if offset < 0 {
            return None;
        }
        let k = (offset / self.bin_width.seconds()) as usize;
        (k < self.bin_count).then_some(k)
    }

    pub fn bin_start(&self, k: usize) -> Timestamp {
        self.origin + Duration::seconds(k as i64 * self.bin_width.seconds())
    }
}

/// Cleaned, immutable event collection.
///
/// Built by [`crate::ingest::clean`] (or the generator); the fields are
/// read-only so the cell index stays consistent with the records.
#[derive(Clone, Debug, PartialEq)]
pub struct EventDataset {
    records: Vec<EventRecord>,
    cells: Vec<GridCell>,
    record_cells: Vec<u32>,
    window: TimeWindow,
    rejected_count: usize,
}

impl EventDataset {
    pub(crate) fn from_parts(
        records: Vec<EventRecord>,
        cells: Vec<GridCell>,
        record_cells: Vec<u32>,
        window: TimeWindow,
        rejected_count: usize,
    ) -> Self {
        debug_assert_eq!(records.len(), record_cells.len());
        EventDataset { records, cells, record_cells, window, rejected_count }
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    /// Grid cells sorted by `cell_id`.
    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    /// Index into [`Self::cells`] for each record, in record order.
    pub fn record_cells(&self) -> &[u32] {
        &self.record_cells
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EventRecord> {
        self.records
    }

    pub fn count_source(&self, source: SourceChannel) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }
}

/// Great-circle distance between two points on the mean-radius sphere.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let half_dlat = (p2 - p1) * 0.5;
    let half_dlon = (lon2 - lon1).to_radians() * 0.5;
    let a = half_dlat.sin().powi(2) + p1.cos() * p2.cos() * half_dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.min(1.0).sqrt().asin()
}

pub fn cell_distance(a: &GridCell, b: &GridCell) -> f64 {
    haversine_m(a.centroid_lat, a.centroid_lon, b.centroid_lat, b.centroid_lon)
}
