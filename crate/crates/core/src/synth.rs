//! Seeded generator of grid-management style event logs.
//!
//! Every event draws, in order: source channel, category (among those the
//! source may report), report day from the category's seasonal rate, and a
//! location. Locations come from a Gaussian hotspot mixture in a local
//! tangent plane around `center` and are snapped to a square lattice of
//! `cell_size_m`; the event sits at its cell centre. Coupled categories
//! place a `strength` fraction of their events on a shared set of anchor
//! cells, which is what makes them co-occur.
//!
//! Events are produced in blocks of [`BLOCK_EVENTS`]; block `b` uses its own
//! ChaCha8 stream `b + 1` of `seed`, so output is a pure function of the
//! config regardless of how many threads generate it.

use std::f64::consts::PI;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::clean;
use crate::model::{
    valid_coordinates, CategoryId, EventDataset, EventRecord, SourceChannel, TimeWindow, EARTH_RADIUS_M,
};

pub const BLOCK_EVENTS: usize = 1 << 16;

/// Recorded in run manifests so regenerated fixtures can be checked.
pub const RNG_DESCRIPTION: &str = "rand_chacha 0.9 ChaCha8Rng; stream 0 setup, stream b+1 for event block b of 65536";

fn default_center() -> LatLon {
    LatLon { lat: 31.23, lon: 121.47 }
}

fn default_cell_size() -> f64 {
    100.0
}

fn default_period() -> f64 {
    365.0
}

fn default_anchor_cells() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelShift {
    /// First week (0-based from the window start) at the new level.
    pub week: u32,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: CategoryId,
    pub weight: f64,
    /// Restrict the category to one source channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceChannel>,
    #[serde(default)]
    pub seasonal_amplitude: f64,
    #[serde(default = "default_period")]
    pub seasonal_period_days: f64,
    /// Shifts the seasonal wave; with a 365-day period a phase of 91 days
    /// puts the peak at day 182.
    #[serde(default)]
    pub seasonal_phase_days: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_shift: Option<LevelShift>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub lat: f64,
    pub lon: f64,
    pub sigma_m: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub category_a: CategoryId,
    pub category_b: CategoryId,
    pub strength: f64,
    #[serde(default = "default_anchor_cells")]
    pub anchor_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_events: usize,
    pub window: TimeWindow,
    /// Probability that an event comes from a mobile device.
    pub source_mix: f64,
    pub categories: Vec<CategorySpec>,
    pub hotspots: Vec<Hotspot>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    #[serde(default = "default_cell_size")]
    pub cell_size_m: f64,
    #[serde(default = "default_center")]
    pub center: LatLon,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl GeneratorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 {
            return Err(config_err("n_events must be positive"));
        }
        if self.window.start >= self.window.end {
            return Err(config_err("window is empty"));
        }
        if self.categories.is_empty() {
            return Err(config_err("at least one category is required"));
        }
        if !unit(self.source_mix) {
            return Err(config_err("source_mix must lie in [0, 1]"));
        }
        if !positive(self.cell_size_m) {
            return Err(config_err("cell_size_m must be positive"));
        }
        if !valid_coordinates(self.center.lat, self.center.lon) || self.center.lat.abs() > 80.0 {
            return Err(config_err("center must be a valid coordinate below 80 degrees latitude"));
        }
        for c in &self.categories {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(config_err(format!("category {}: weight must be non-negative", c.name)));
            }
            if !unit(c.seasonal_amplitude) {
                return Err(config_err(format!("category {}: seasonal_amplitude must lie in [0, 1]", c.name)));
            }
            if !positive(c.seasonal_period_days) || !c.seasonal_phase_days.is_finite() {
                return Err(config_err(format!("category {}: invalid seasonal period or phase", c.name)));
            }
            if let Some(shift) = c.level_shift {
                if !positive(shift.factor) {
                    return Err(config_err(format!("category {}: level shift factor must be positive", c.name)));
                }
            }
        }
        // The same name may appear once per source (or once unrestricted).
        for (i, a) in self.categories.iter().enumerate() {
            for b in &self.categories[i + 1..] {
                let overlap = match (a.source, b.source) {
                    (Some(x), Some(y)) => x == y,
                    _ => true,
                };
                if a.name == b.name && overlap {
                    return Err(config_err(format!("category {} is listed twice for one source", a.name)));
                }
            }
        }
        for source in SourceChannel::ALL {
            let p = match source {
                SourceChannel::MobileDevice => self.source_mix,
                SourceChannel::Hotline => 1.0 - self.source_mix,
            };
            let mass: f64 =
                self.categories.iter().filter(|c| c.source.is_none_or(|s| s == source)).map(|c| c.weight).sum();
            if p > 0.0 && mass <= 0.0 {
                return Err(config_err(format!("no weighted category can be reported by {source}")));
            }
        }
        if self.hotspots.is_empty() {
            return Err(config_err("at least one hotspot is required"));
        }
        for h in &self.hotspots {
            if !valid_coordinates(h.lat, h.lon) {
                return Err(config_err("hotspot coordinates out of range"));
            }
            if !positive(h.sigma_m) || h.sigma_m > 500_000.0 {
                return Err(config_err("hotspot sigma_m must lie in (0, 500 km]"));
            }
            if !(h.weight.is_finite() && h.weight >= 0.0) {
                return Err(config_err("hotspot weight must be non-negative"));
            }
        }
        if self.hotspots.iter().map(|h| h.weight).sum::<f64>() <= 0.0 {
            return Err(config_err("hotspot weights sum to zero"));
        }
        for c in &self.couplings {
            for name in [&c.category_a, &c.category_b] {
                if !self.categories.iter().any(|s| &s.name == name) {
                    return Err(config_err(format!("coupling refers to unknown category {name}")));
                }
            }
            if !unit(c.strength) {
                return Err(config_err("coupling strength must lie in [0, 1]"));
            }
            if c.anchor_cells == 0 {
                return Err(config_err("coupling anchor_cells must be positive"));
            }
        }
        Ok(())
    }
}

/// Cumulative weights for inverse-CDF sampling.
struct Cdf(Vec<f64>);

impl Cdf {
    fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        Cdf(weights
            .into_iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect())
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.0.last().expect("non-empty cdf");
        let u = rng.random::<f64>() * total;
        self.0.partition_point(|&c| c <= u).min(self.0.len() - 1)
    }
}

/// Local tangent plane around the configured centre.
struct Plane {
    center: LatLon,
    cos_lat: f64,
    cell: f64,
}

impl Plane {
    fn offset_of(&self, lat: f64, lon: f64) -> (f64, f64) {
        let east = (lon - self.center.lon).to_radians() * EARTH_RADIUS_M * self.cos_lat;
        let north = (lat - self.center.lat).to_radians() * EARTH_RADIUS_M;
        (east, north)
    }

    fn snap(&self, east: f64, north: f64) -> (i64, i64) {
        ((east / self.cell).floor() as i64, (north / self.cell).floor() as i64)
    }

    fn cell_center(&self, ix: i64, iy: i64) -> (f64, f64) {
        let east = (ix as f64 + 0.5) * self.cell;
        let north = (iy as f64 + 0.5) * self.cell;
        let lat = self.center.lat + (north / EARTH_RADIUS_M).to_degrees();
        let lon = self.center.lon + (east / (EARTH_RADIUS_M * self.cos_lat)).to_degrees();
        (lat, lon)
    }
}

struct Sampler<'a> {
    cfg: &'a GeneratorConfig,
    plane: Plane,
    /// Category indices each source may report, with their CDF.
    by_source: [(Vec<usize>, Option<Cdf>); 2],
    day_cdfs: Vec<Cdf>,
    days: i64,
    hotspot_cdf: Cdf,
    hotspot_offsets: Vec<(f64, f64)>,
    /// For each category, the couplings it takes part in.
    anchors: Vec<Vec<Anchors>>,
}

/// Coupling strength and the shared lattice cells.
type Anchors = (f64, std::sync::Arc<Vec<(i64, i64)>>);

impl<'a> Sampler<'a> {
    fn new(cfg: &'a GeneratorConfig) -> Self {
        let plane = Plane { center: cfg.center, cos_lat: cfg.center.lat.to_radians().cos(), cell: cfg.cell_size_m };
        let by_source = SourceChannel::ALL.map(|source| {
            let idx: Vec<usize> = cfg
                .categories
                .iter()
                .enumerate()
                .filter(|(_, c)| c.source.is_none_or(|s| s == source) && c.weight > 0.0)
                .map(|(i, _)| i)
                .collect();
            let cdf = (!idx.is_empty()).then(|| Cdf::new(idx.iter().map(|&i| cfg.categories[i].weight)));
            (idx, cdf)
        });
        let span = (cfg.window.end - cfg.window.start).num_seconds();
        let days = (span + 86_399) / 86_400;
        let day_cdfs = cfg
            .categories
            .iter()
            .map(|c| {
                Cdf::new((0..days).map(|d| {
                    let mid = d as f64 + 0.5;
                    let wave = (2.0 * PI * (mid - c.seasonal_phase_days) / c.seasonal_period_days).sin();
                    let mut rate = (1.0 + c.seasonal_amplitude * wave).max(0.0);
                    if let Some(shift) = c.level_shift {
                        if d / 7 >= shift.week as i64 {
                            rate *= shift.factor;
                        }
                    }
                    // A truncated final day only covers part of its rate.
                    let covered = (span - d * 86_400).min(86_400) as f64 / 86_400.0;
                    rate * covered
                }))
            })
            .collect();
        let hotspot_cdf = Cdf::new(cfg.hotspots.iter().map(|h| h.weight));
        let hotspot_offsets = cfg.hotspots.iter().map(|h| plane.offset_of(h.lat, h.lon)).collect();

        let mut sampler = Sampler {
            cfg,
            plane,
            by_source,
            day_cdfs,
            days,
            hotspot_cdf,
            hotspot_offsets,
            anchors: vec![Vec::new(); cfg.categories.len()],
        };

        let mut setup = ChaCha8Rng::seed_from_u64(cfg.seed);
        setup.set_stream(0);
        for coupling in &cfg.couplings {
            let cells: Vec<(i64, i64)> = (0..coupling.anchor_cells).map(|_| sampler.mixture_cell(&mut setup)).collect();
            let cells = std::sync::Arc::new(cells);
            for (k, spec) in cfg.categories.iter().enumerate() {
                if spec.name == coupling.category_a || spec.name == coupling.category_b {
                    sampler.anchors[k].push((coupling.strength, cells.clone()));
                }
            }
        }
        sampler
    }

    fn mixture_cell(&self, rng: &mut impl Rng) -> (i64, i64) {
        let h = self.hotspot_cdf.sample(rng);
        let (east, north) = self.hotspot_offsets[h];
        let normal = Normal::new(0.0, self.cfg.hotspots[h].sigma_m).expect("validated sigma");
        let dx = normal.sample(rng);
        let dy = normal.sample(rng);
        self.plane.snap(east + dx, north + dy)
    }

    fn event(&self, index: usize, rng: &mut impl Rng) -> EventRecord {
        let source = if rng.random::<f64>() < self.cfg.source_mix {
            SourceChannel::MobileDevice
        } else {
            SourceChannel::Hotline
        };
        let (eligible, cdf) = &self.by_source[source as usize];
        let category = eligible[cdf.as_ref().expect("validated source categories").sample(rng)];

        let day = self.day_cdfs[category].sample(rng) as i64;
        let day_start = day * 86_400;
        let span = (self.cfg.window.end - self.cfg.window.start).num_seconds();
        let day_len = (span - day_start).min(86_400);
        let secs = day_start + rng.random_range(0..day_len);
        debug_assert!(day < self.days);

        let mut cell = None;
        for (strength, anchors) in &self.anchors[category] {
            if rng.random::<f64>() < *strength {
                cell = Some(anchors[rng.random_range(0..anchors.len())]);
                break;
            }
        }
        let (ix, iy) = cell.unwrap_or_else(|| self.mixture_cell(rng));
        let (latitude, longitude) = self.plane.cell_center(ix, iy);

        EventRecord {
            event_id: format!("ev{index:09}"),
            cell_id: format!("x{ix}y{iy}"),
            reported_at: self.cfg.window.start + Duration::seconds(secs),
            resolved_at: None,
            latitude,
            longitude,
            source,
            category: self.cfg.categories[category].name.clone(),
            priority: None,
            description: None,
        }
    }
}

/// Generate the raw event list in index order.
pub fn generate_records(config: &GeneratorConfig) -> Result<Vec<EventRecord>> {
    config.validate()?;
    let sampler = Sampler::new(config);
    let blocks = config.n_events.div_ceil(BLOCK_EVENTS);
    let parts: Vec<Vec<EventRecord>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64 + 1);
            let lo = b * BLOCK_EVENTS;
            let hi = (lo + BLOCK_EVENTS).min(config.n_events);
            (lo..hi).map(|i| sampler.event(i, &mut rng)).collect()
        })
        .collect();
    let mut records = Vec::with_capacity(config.n_events);
    for part in parts {
        records.extend(part);
    }
    if let Some(bad) = records.iter().find(|r| !r.has_valid_coordinates()) {
        return Err(config_err(format!("generated coordinate out of range for {}", bad.event_id)));
    }
    Ok(records)
}

pub fn generate(config: &GeneratorConfig) -> Result<EventDataset> {
    let records = generate_records(config)?;
    Ok(clean(records, config.window))
}
