//! Temporal and spatial relevance of per-cell event-count series.
//!
//! With `Y(s, t)` the field counts and `mu(s)` the mean of a cell's row over
//! all `T` bins:
//!
//! * cell self-relevance at lag `tau`:
//!   `C(s, tau) = mean over t in [tau, T) of (Y(s,t) - mu(s)) (Y(s,t-tau) - mu(s))`
//! * global temporal relevance:
//!   `C(tau) = sum_s mu(s) C(s, tau) / sum_s mu(s)`
//! * pair relevance:
//!   `C(s_i, s_j) = mean over t of (Y(s_i,t) - mu(s_i)) (Y(s_j,t) - mu(s_j))`
//! * global spatial relevance in distance bin `k`:
//!   `C(d_k) = sum mu_i mu_j C(s_i, s_j) / sum mu_i mu_j` over unordered
//!   distinct cell pairs whose great-circle distance falls in bin `k`.
//!
//! Counts are non-negative so `|mu| = mu` throughout.
//!
//! Normalized curves drop cells whose row is constant (zero variance). The
//! temporal curve is then divided by its lag-0 value; the spatial curve by
//! the mu-weighted mean cell variance, so two co-located identical cells
//! score 1.
//!
//! All reductions run in a fixed order, so results do not depend on the
//! size of the rayon pool.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::SpatioTemporalField;
use crate::error::{Error, Result};
use crate::model::{GridCell, EARTH_RADIUS_M};

/// Default distance bin width in meters.
pub const DEFAULT_DISTANCE_BIN_M: f64 = 1_000.0;

/// Spatial curve coordinates are also reported in units of 10 km.
pub const REPORT_DISTANCE_UNIT_M: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveAxis {
    LagDays,
    DistanceMeters,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coordinate: f64,
    /// `None` when no term contributed (`support == 0`) or the curve is degenerate.
    pub score: Option<f64>,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lower: f64,
    pub upper: f64,
    pub representative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCurve {
    pub axis: CurveAxis,
    pub normalized: bool,
    /// Set when no cell could contribute (all-zero means, or every cell
    /// constant for a normalized curve).
    pub degenerate: bool,
    pub points: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distance_bins: Vec<DistanceBin>,
}

impl RelevanceCurve {
    pub fn scores(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.score).collect()
    }

    pub fn score_at(&self, index: usize) -> Option<f64> {
        self.points.get(index).and_then(|p| p.score)
    }

    /// Index of the point whose coordinate bin contains `x`.
    pub fn index_containing(&self, x: f64) -> Option<usize> {
        if self.distance_bins.is_empty() {
            self.points.iter().position(|p| p.coordinate == x)
        } else {
            self.distance_bins.iter().position(|b| b.lower <= x && x < b.upper)
        }
    }

    /// Interior points whose score is at least that of both present
    /// neighbours. Missing neighbours are skipped over.
    pub fn local_maxima(&self) -> Vec<usize> {
        let present: Vec<(usize, f64)> =
            self.points.iter().enumerate().filter_map(|(i, p)| p.score.map(|s| (i, s))).collect();
        present.windows(3).filter(|w| w[1].1 >= w[0].1 && w[1].1 >= w[2].1).map(|w| w[1].0).collect()
    }

    /// Columns: `coordinate,score,support`, plus `lower_m,upper_m,distance_10km`
    /// for spatial curves. Missing scores are written as `null`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fmt = |s: Option<f64>| s.map_or_else(|| "null".to_string(), |v| v.to_string());
        match self.axis {
            CurveAxis::LagDays => {
                w.write_record(["lag_days", "score", "support"])?;
                for p in &self.points {
                    w.write_record([p.coordinate.to_string(), fmt(p.score), p.support.to_string()])?;
                }
            }
            CurveAxis::DistanceMeters => {
                w.write_record(["distance_m", "lower_m", "upper_m", "distance_10km", "score", "support"])?;
                for (p, b) in self.points.iter().zip(&self.distance_bins) {
                    w.write_record([
                        p.coordinate.to_string(),
                        b.lower.to_string(),
                        b.upper.to_string(),
                        (p.coordinate / REPORT_DISTANCE_UNIT_M).to_string(),
                        fmt(p.score),
                        p.support.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub cell: GridCell,
    /// Events per time bin.
    pub mean: f64,
}

/// Dot product with eight independent accumulators. The lane layout is
/// fixed, so the result is reproducible for a given input.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn row_mean(row: &[u32]) -> f64 {
    let sum: u64 = row.iter().map(|&c| c as u64).sum();
    sum as f64 / row.len() as f64
}

fn is_constant(row: &[u32]) -> bool {
    row.windows(2).all(|w| w[0] == w[1])
}

fn centered(row: &[u32], mean: f64) -> Vec<f64> {
    row.iter().map(|&c| c as f64 - mean).collect()
}

fn check_cell(field: &SpatioTemporalField, index: usize) -> Result<()> {
    if index >= field.cell_count() {
        return Err(Error::CellOutOfRange { index, cells: field.cell_count() });
    }
    Ok(())
}

pub fn cell_mean(field: &SpatioTemporalField, cell: usize) -> Result<CellStats> {
    check_cell(field, cell)?;
    Ok(CellStats { cell: field.cells[cell].clone(), mean: row_mean(field.row(cell)) })
}

fn lagged(z: &[f64], lag: usize) -> f64 {
    let t = z.len();
    dot(&z[lag..], &z[..t - lag]) / (t - lag) as f64
}

pub fn temporal_self_relevance(field: &SpatioTemporalField, cell: usize, lag: usize) -> Result<f64> {
    check_cell(field, cell)?;
    let bins = field.bin_count();
    if lag >= bins {
        return Err(Error::LagOutOfRange { lag, bins });
    }
    let row = field.row(cell);
    Ok(lagged(&centered(row, row_mean(row)), lag))
}

pub fn global_temporal_relevance(
    field: &SpatioTemporalField,
    max_lag: usize,
    normalize: bool,
) -> Result<RelevanceCurve> {
    let bins = field.bin_count();
    if max_lag >= bins {
        return Err(Error::LagOutOfRange { lag: max_lag, bins });
    }
    let lags = max_lag + 1;

    // (mean, self-relevance per lag) for every contributing cell, in cell order.
    let per_cell: Vec<Option<(f64, Vec<f64>)>> = (0..field.cell_count())
        .into_par_iter()
        .map(|i| {
            let row = field.row(i);
            let mean = row_mean(row);
            if mean <= 0.0 || (normalize && is_constant(row)) {
                return None;
            }
            let z = centered(row, mean);
            Some((mean, (0..lags).map(|lag| lagged(&z, lag)).collect()))
        })
        .collect();

    let mut weight = 0.0;
    let mut cells = 0u64;
    let mut numer = vec![0.0; lags];
    for (mean, c) in per_cell.iter().flatten() {
        weight += mean;
        cells += 1;
        for (n, v) in numer.iter_mut().zip(c) {
            *n += mean * v;
        }
    }

    let step = field.grid.bin_width.days() as f64;
    let degenerate = cells == 0 || (normalize && numer[0] <= 0.0);
    let anchor = if normalize { numer[0] / weight } else { 1.0 };
    let points = (0..lags)
        .map(|lag| {
            let support = cells * (bins - lag) as u64;
            let score = (!degenerate && support > 0).then(|| numer[lag] / weight / anchor);
            CurvePoint { coordinate: lag as f64 * step, score, support }
        })
        .collect();
    Ok(RelevanceCurve {
        axis: CurveAxis::LagDays,
        normalized: normalize,
        degenerate,
        points,
        distance_bins: Vec::new(),
    })
}

pub fn pair_spatial_relevance(field: &SpatioTemporalField, i: usize, j: usize) -> Result<f64> {
    check_cell(field, i)?;
    check_cell(field, j)?;
    let (ri, rj) = (field.row(i), field.row(j));
    let (zi, zj) = (centered(ri, row_mean(ri)), centered(rj, row_mean(rj)));
    Ok(dot(&zi, &zj) / field.bin_count() as f64)
}

/// Contiguous fixed-width bins covering `[0, max_distance)`; the last bin is
/// truncated at `max_distance`.
pub fn distance_bins(bin_width: f64, max_distance: f64) -> Result<Vec<DistanceBin>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidBinWidth(bin_width));
    }
    if !(max_distance > 0.0 && max_distance.is_finite()) {
        return Err(Error::InvalidBinWidth(max_distance));
    }
    let n = (max_distance / bin_width).ceil() as usize;
    Ok((0..n)
        .map(|k| {
            let lower = k as f64 * bin_width;
            let upper = ((k + 1) as f64 * bin_width).min(max_distance);
            DistanceBin { lower, upper, representative: 0.5 * (lower + upper) }
        })
        .collect())
}

struct Site {
    lat: f64,
    lon: f64,
    cos_lat: f64,
}

impl Site {
    fn new(cell: &GridCell) -> Self {
        let lat = cell.centroid_lat.to_radians();
        Site { lat, lon: cell.centroid_lon, cos_lat: lat.cos() }
    }

    /// Same arithmetic as [`crate::model::haversine_m`].
    fn distance(&self, other: &Site) -> f64 {
        let half_dlat = (other.lat - self.lat) * 0.5;
        let half_dlon = (other.lon - self.lon).to_radians() * 0.5;
        let a = half_dlat.sin().powi(2) + self.cos_lat * other.cos_lat * half_dlon.sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.min(1.0).sqrt().asin()
    }
}

#[derive(Clone, Copy, Default)]
struct BinAcc {
    numer: f64,
    weight: f64,
    pairs: u64,
}

pub fn global_spatial_relevance(
    field: &SpatioTemporalField,
    bin_width: f64,
    max_distance: f64,
    normalize: bool,
) -> Result<RelevanceCurve> {
    let bins = distance_bins(bin_width, max_distance)?;
    let t = field.bin_count();

    let mut active: Vec<usize> = (0..field.cell_count())
        .filter(|&i| {
            let row = field.row(i);
            row_mean(row) > 0.0 && !(normalize && is_constant(row))
        })
        .collect();
    // Sorting by latitude lets the pair sweep stop once the latitude gap
    // alone exceeds max_distance.
    active.sort_by(|&a, &b| {
        let (ca, cb) = (&field.cells[a], &field.cells[b]);
        ca.centroid_lat.total_cmp(&cb.centroid_lat).then(ca.centroid_lon.total_cmp(&cb.centroid_lon)).then(a.cmp(&b))
    });

    let means: Vec<f64> = active.iter().map(|&i| row_mean(field.row(i))).collect();
    let mut z = Vec::with_capacity(active.len() * t);
    for (&i, &m) in active.iter().zip(&means) {
        z.extend(field.row(i).iter().map(|&c| c as f64 - m));
    }
    let sites: Vec<Site> = active.iter().map(|&i| Site::new(&field.cells[i])).collect();
    let lat_limit = max_distance / EARTH_RADIUS_M;
    let nbins = bins.len();

    let partials: Vec<Vec<BinAcc>> = (0..active.len())
        .into_par_iter()
        .map(|a| {
            let mut acc = vec![BinAcc::default(); nbins];
            let za = &z[a * t..(a + 1) * t];
            for b in a + 1..active.len() {
                if sites[b].lat - sites[a].lat >= lat_limit {
                    break;
                }
                let d = sites[a].distance(&sites[b]);
                if d >= max_distance {
                    continue;
                }
                let k = ((d / bin_width) as usize).min(nbins - 1);
                let w = means[a] * means[b];
                let c = dot(za, &z[b * t..(b + 1) * t]) / t as f64;
                acc[k].numer += w * c;
                acc[k].weight += w;
                acc[k].pairs += 1;
            }
            acc
        })
        .collect();

    let mut total = vec![BinAcc::default(); nbins];
    for part in &partials {
        for (tot, p) in total.iter_mut().zip(part) {
            tot.numer += p.numer;
            tot.weight += p.weight;
            tot.pairs += p.pairs;
        }
    }

    let scale = if normalize {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, &m) in means.iter().enumerate() {
            let za = &z[a * t..(a + 1) * t];
            num += m * dot(za, za) / t as f64;
            den += m;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    } else {
        1.0
    };
    let degenerate = active.len() < 2 || scale <= 0.0;

    let points = bins
        .iter()
        .zip(&total)
        .map(|(bin, acc)| CurvePoint {
            coordinate: bin.representative,
            score: (!degenerate && acc.pairs > 0).then(|| acc.numer / acc.weight / scale),
            support: acc.pairs * t as u64,
        })
        .collect();
    Ok(RelevanceCurve {
        axis: CurveAxis::DistanceMeters,
        normalized: normalize,
        degenerate,
        points,
        distance_bins: bins,
    })
}
