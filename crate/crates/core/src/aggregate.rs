//! Cell-by-time count fields, weekly trend series and normalized density grids.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BinWidth, CategoryId, EventDataset, EventRecord, GridCell, SourceChannel, TimeGrid};

/// Per-cell event counts on a uniform time grid.
///
/// `counts` is row-major: the row for cell `i` is
/// `counts[i * bin_count .. (i + 1) * bin_count]`. Cells follow the dataset
/// order (sorted by `cell_id`) and include cells with no filtered events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalField {
    pub grid: TimeGrid,
    pub cells: Vec<GridCell>,
    counts: Vec<u32>,
    pub category_filter: Option<BTreeSet<CategoryId>>,
    pub source_filter: Option<SourceChannel>,
}

impl SpatioTemporalField {
    /// Field from explicit rows, one per cell, each `grid.bin_count` long.
    pub fn from_rows(grid: TimeGrid, cells: Vec<GridCell>, rows: &[Vec<u32>]) -> Result<Self> {
        if rows.len() != cells.len() {
            return Err(Error::CellOutOfRange { index: rows.len(), cells: cells.len() });
        }
        let mut counts = Vec::with_capacity(rows.len() * grid.bin_count);
        for row in rows {
            if row.len() != grid.bin_count {
                return Err(Error::LagOutOfRange { lag: row.len(), bins: grid.bin_count });
            }
            counts.extend_from_slice(row);
        }
        Ok(SpatioTemporalField { grid, cells, counts, category_filter: None, source_filter: None })
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn bin_count(&self) -> usize {
        self.grid.bin_count
    }

    pub fn row(&self, cell: usize) -> &[u32] {
        let t = self.grid.bin_count;
        &self.counts[cell * t..(cell + 1) * t]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Column sums.
    pub fn totals_per_bin(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.grid.bin_count];
        for row in self.counts.chunks_exact(self.grid.bin_count.max(1)) {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c as u64;
            }
        }
        out
    }

    /// Multiply every count by `k`.
    pub fn scaled(&self, k: u32) -> Self {
        let mut out = self.clone();
        out.counts.iter_mut().for_each(|c| *c *= k);
        out
    }
}

fn passes(r: &EventRecord, categories: Option<&BTreeSet<CategoryId>>, source: Option<SourceChannel>) -> bool {
    source.is_none_or(|s| r.source == s) && categories.is_none_or(|c| c.contains(&r.category))
}

pub fn build_field(
    dataset: &EventDataset,
    bin_width: BinWidth,
    category_filter: Option<&BTreeSet<CategoryId>>,
    source_filter: Option<SourceChannel>,
) -> SpatioTemporalField {
    let grid = TimeGrid::covering(&dataset.window(), bin_width);
    let t = grid.bin_count;
    let mut counts = vec![0u32; dataset.cells().len() * t];
    for (r, &cell) in dataset.records().iter().zip(dataset.record_cells()) {
        if !passes(r, category_filter, source_filter) {
            continue;
        }
        if let Some(k) = grid.bin_index(r.reported_at) {
            counts[cell as usize * t + k] += 1;
        }
    }
    SpatioTemporalField {
        grid,
        cells: dataset.cells().to_vec(),
        counts,
        category_filter: category_filter.cloned(),
        source_filter,
    }
}

/// Keep only the records matching `keep`; cells and window are unchanged.
pub fn restrict(dataset: &EventDataset, keep: impl Fn(&EventRecord) -> bool) -> EventDataset {
    let (records, record_cells): (Vec<_>, Vec<_>) = dataset
        .records()
        .iter()
        .zip(dataset.record_cells())
        .filter(|(r, _)| keep(r))
        .map(|(r, c)| (r.clone(), *c))
        .unzip();
    EventDataset::from_parts(
        records,
        dataset.cells().to_vec(),
        record_cells,
        dataset.window(),
        dataset.rejected_count(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub grid: TimeGrid,
    pub category: Option<CategoryId>,
    pub values: Vec<u64>,
}

/// Events per week for one category, summed over all cells.
pub fn weekly_histogram(dataset: &EventDataset, category: &CategoryId) -> TrendSeries {
    let filter = BTreeSet::from([category.clone()]);
    trend_series(dataset, BinWidth::Week, Some(&filter), Some(category.clone()))
}

/// Events per bin for an optional category set.
pub fn trend_series(
    dataset: &EventDataset,
    bin_width: BinWidth,
    categories: Option<&BTreeSet<CategoryId>>,
    label: Option<CategoryId>,
) -> TrendSeries {
    let grid = TimeGrid::covering(&dataset.window(), bin_width);
    let mut values = vec![0u64; grid.bin_count];
    for r in dataset.records() {
        if !passes(r, categories, None) {
            continue;
        }
        if let Some(k) = grid.bin_index(r.reported_at) {
            values[k] += 1;
        }
    }
    TrendSeries { grid, category: label, values }
}

impl TrendSeries {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "bin_start", "value"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), crate::ingest::format_timestamp(self.grid.bin_start(k)), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

/// Max-normalized 2-D histogram. `values` is row-major with latitude rows:
/// `values[iy * nx + ix]`. `bounds` is `None` when no event contributed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub resolution: (usize, usize),
    pub bounds: Option<Bounds>,
    pub event_count: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.resolution.0 + ix]
    }

    /// `(ix, iy)` of the first maximal cell in row-major order.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let nx = self.resolution.0;
        let (idx, max) =
            self.values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (max > 0.0).then_some((idx % nx, idx / nx))
    }

    pub fn is_degenerate(&self) -> bool {
        self.bounds.is_none()
    }

    /// Long format `ix,iy,x,y,value`; `x`, `y` are normalized bin centers.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (nx, ny) = self.resolution;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ix", "iy", "x", "y", "value"])?;
        for iy in 0..ny {
            for ix in 0..nx {
                w.write_record([
                    ix.to_string(),
                    iy.to_string(),
                    ((ix as f64 + 0.5) / nx as f64).to_string(),
                    ((iy as f64 + 0.5) / ny as f64).to_string(),
                    self.value(ix, iy).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn axis_bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let k = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
    // Events on the upper bound belong to the last bin.
    k.min(n - 1)
}

pub fn spatial_density(
    dataset: &EventDataset,
    category: Option<&CategoryId>,
    nx: usize,
    ny: usize,
) -> Result<DensityGrid> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidResolution { nx, ny });
    }
    let selected: Vec<&EventRecord> =
        dataset.records().iter().filter(|r| category.is_none_or(|c| &r.category == c)).collect();
    let mut values = vec![0.0; nx * ny];
    if selected.is_empty() {
        return Ok(DensityGrid { resolution: (nx, ny), bounds: None, event_count: 0, values });
    }
    let mut b = Bounds {
        min_lon: f64::INFINITY,
        max_lon: f64::NEG_INFINITY,
        min_lat: f64::INFINITY,
        max_lat: f64::NEG_INFINITY,
    };
    for r in &selected {
        b.min_lon = b.min_lon.min(r.longitude);
        b.max_lon = b.max_lon.max(r.longitude);
        b.min_lat = b.min_lat.min(r.latitude);
        b.max_lat = b.max_lat.max(r.latitude);
    }
    let mut counts = vec![0u64; nx * ny];
    for r in &selected {
        let ix = axis_bin(r.longitude, b.min_lon, b.max_lon, nx);
        let iy = axis_bin(r.latitude, b.min_lat, b.max_lat, ny);
        counts[iy * nx + ix] += 1;
    }
    let max = *counts.iter().max().unwrap_or(&0) as f64;
    for (v, &c) in values.iter_mut().zip(&counts) {
        *v = c as f64 / max;
    }
    Ok(DensityGrid { resolution: (nx, ny), bounds: Some(b), event_count: selected.len(), values })
}
