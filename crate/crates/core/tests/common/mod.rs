//! Brute-force reference implementations and fixture builders shared by the
//! integration and acceptance tests.
//!
//! The oracles work from raw records and plain loops. They share no code
//! with the library beyond the record types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbangrid::ingest::clean;
use urbangrid::{CategoryId, EventDataset, EventRecord, SourceChannel, TimeWindow};

/// A value together with the magnitude of the terms that produced it.
///
/// `m` is the same expression evaluated on absolute values, so cancellation
/// does not shrink it. Relative errors are taken against `max(|v|, m)`.
#[derive(Clone, Copy, Debug)]
pub struct Mag {
    pub v: f64,
    pub m: f64,
}

impl Mag {
    pub fn exact(v: f64) -> Self {
        Mag { v, m: v.abs() }
    }

    pub fn add(self, o: Mag) -> Mag {
        Mag { v: self.v + o.v, m: self.m + o.m }
    }

    pub fn mul(self, o: Mag) -> Mag {
        Mag { v: self.v * o.v, m: self.m * o.m }
    }

    pub fn div(self, d: f64) -> Mag {
        Mag { v: self.v / d, m: self.m / d.abs() }
    }

    pub fn zero() -> Mag {
        Mag { v: 0.0, m: 0.0 }
    }

    /// Relative error of `got` against this reference.
    pub fn rel_err(self, got: f64) -> f64 {
        let scale = self.v.abs().max(self.m);
        if scale == 0.0 {
            got.abs()
        } else {
            (got - self.v).abs() / scale
        }
    }
}

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap()
}

/// Great-circle distance, written with `atan2` so it does not mirror the
/// library's arcsine form.
pub fn oracle_distance(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const R: f64 = 6_371_000.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * a.sqrt().atan2((1.0 - a).sqrt())
}

/// Cell ids, centroids and `counts[cell][bin]`, rebuilt directly from records.
pub struct OracleField {
    pub ids: Vec<String>,
    pub centroids: Vec<(f64, f64)>,
    pub counts: Vec<Vec<f64>>,
}

impl OracleField {
    pub fn build(records: &[EventRecord], start: DateTime<Utc>, bin_seconds: i64, bins: usize) -> Self {
        let mut members: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in records {
            members.entry(r.cell_id.clone()).or_default().push((r.latitude, r.longitude));
        }
        let ids: Vec<String> = members.keys().cloned().collect();
        let centroids = members
            .values()
            .map(|pts| {
                let n = pts.len() as f64;
                (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n)
            })
            .collect();
        let mut counts = vec![vec![0.0; bins]; ids.len()];
        for r in records {
            let i = ids.iter().position(|id| *id == r.cell_id).unwrap();
            let k = ((r.reported_at - start).num_seconds() / bin_seconds) as usize;
            if k < bins {
                counts[i][k] += 1.0;
            }
        }
        OracleField { ids, centroids, counts }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.counts[i].iter().sum::<f64>() / self.counts[i].len() as f64
    }

    fn constant(&self, i: usize) -> bool {
        let row = &self.counts[i];
        row.iter().all(|v| *v == row[0])
    }

    fn z(&self, i: usize) -> Vec<Mag> {
        let mu = self.mean(i);
        self.counts[i].iter().map(|y| Mag::exact(y - mu)).collect()
    }

    pub fn self_relevance(&self, i: usize, lag: usize) -> Mag {
        let z = self.z(i);
        let t = z.len();
        let mut acc = Mag::zero();
        for s in lag..t {
            acc = acc.add(z[s].mul(z[s - lag]));
        }
        acc.div((t - lag) as f64)
    }

    pub fn pair(&self, i: usize, j: usize) -> Mag {
        let (zi, zj) = (self.z(i), self.z(j));
        let mut acc = Mag::zero();
        for s in 0..zi.len() {
            acc = acc.add(zi[s].mul(zj[s]));
        }
        acc.div(zi.len() as f64)
    }

    fn contributes(&self, i: usize, normalize: bool) -> bool {
        self.mean(i) > 0.0 && !(normalize && self.constant(i))
    }

    /// Global temporal curve for lags `0..=max_lag`; `None` where undefined.
    pub fn global_temporal(&self, max_lag: usize, normalize: bool) -> Vec<Option<Mag>> {
        let cells: Vec<usize> = (0..self.ids.len()).filter(|&i| self.contributes(i, normalize)).collect();
        if cells.is_empty() {
            return vec![None; max_lag + 1];
        }
        let weight: f64 = cells.iter().map(|&i| self.mean(i)).sum();
        let raw: Vec<Mag> = (0..=max_lag)
            .map(|lag| {
                let mut acc = Mag::zero();
                for &i in &cells {
                    acc = acc.add(Mag::exact(self.mean(i)).mul(self.self_relevance(i, lag)));
                }
                acc.div(weight)
            })
            .collect();
        if !normalize {
            return raw.into_iter().map(Some).collect();
        }
        let anchor = raw[0].v;
        if anchor <= 0.0 {
            return vec![None; max_lag + 1];
        }
        raw.into_iter().map(|c| Some(c.div(anchor))).collect()
    }

    /// Global spatial curve over `[0, max_distance)` in bins of `bin_width`.
    pub fn global_spatial(&self, bin_width: f64, max_distance: f64, normalize: bool) -> Vec<Option<Mag>> {
        let nbins = (max_distance / bin_width).ceil() as usize;
        let cells: Vec<usize> = (0..self.ids.len()).filter(|&i| self.contributes(i, normalize)).collect();
        let mut numer = vec![Mag::zero(); nbins];
        let mut weight = vec![0.0; nbins];
        let mut pairs = vec![0usize; nbins];
        for (a, &i) in cells.iter().enumerate() {
            for &j in &cells[a + 1..] {
                let (ci, cj) = (self.centroids[i], self.centroids[j]);
                let d = oracle_distance(ci.0, ci.1, cj.0, cj.1);
                if d >= max_distance {
                    continue;
                }
                let k = ((d / bin_width).floor() as usize).min(nbins - 1);
                let w = self.mean(i) * self.mean(j);
                numer[k] = numer[k].add(Mag::exact(w).mul(self.pair(i, j)));
                weight[k] += w;
                pairs[k] += 1;
            }
        }
        let scale = if normalize {
            let den: f64 = cells.iter().map(|&i| self.mean(i)).sum();
            let mut num = Mag::zero();
            for &i in &cells {
                num = num.add(Mag::exact(self.mean(i)).mul(self.pair(i, i)));
            }
            if den > 0.0 {
                num.div(den).v
            } else {
                0.0
            }
        } else {
            1.0
        };
        if cells.len() < 2 || scale <= 0.0 {
            return vec![None; nbins];
        }
        (0..nbins).map(|k| (pairs[k] > 0).then(|| numer[k].div(weight[k]).div(scale))).collect()
    }
}

pub fn oracle_entropy(p: &[f64]) -> Mag {
    let mut acc = Mag::zero();
    for &x in p {
        if x > 0.0 {
            acc = acc.add(Mag::exact(-x * x.ln()));
        }
    }
    acc
}

/// `(MI, H(U), H(V))` of a dense table given as rows.
pub fn oracle_mi(table: &[Vec<f64>]) -> (Mag, Mag, Mag) {
    let n: f64 = table.iter().flatten().sum();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / n).collect();
    let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut mi = Mag::zero();
    for (i, row) in table.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                let p = w / n;
                mi = mi.add(Mag::exact(p * (p / (rows[i] * cols[j])).ln()));
            }
        }
    }
    (mi, oracle_entropy(&rows), oracle_entropy(&cols))
}

pub fn oracle_nmi(table: &[Vec<f64>]) -> Mag {
    let (mi, hu, hv) = oracle_mi(table);
    if hu.v <= 0.0 || hv.v <= 0.0 {
        return Mag::exact(0.0);
    }
    mi.div((hu.v * hv.v).sqrt())
}

pub fn combine(mode: urbangrid::category_mi::CooccurrenceMode, a: u64, b: u64) -> f64 {
    use urbangrid::category_mi::CooccurrenceMode::*;
    match mode {
        PairProduct => (a * b) as f64,
        MinCount => a.min(b) as f64,
        Presence => ((a > 0) && (b > 0)) as u8 as f64,
    }
}

/// Per-cell counts of each category for one source.
pub fn source_counts(records: &[EventRecord], source: SourceChannel) -> BTreeMap<String, BTreeMap<String, u64>> {
    let mut out: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.source == source) {
        *out.entry(r.cell_id.clone()).or_default().entry(r.category.as_str().to_string()).or_default() += 1;
    }
    out
}

pub fn source_categories(records: &[EventRecord], source: SourceChannel) -> Vec<String> {
    records
        .iter()
        .filter(|r| r.source == source)
        .map(|r| r.category.as_str().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Full category-by-category co-occurrence table, summed over cells.
pub fn oracle_cooccurrence(
    records: &[EventRecord],
    row_source: SourceChannel,
    col_source: SourceChannel,
    mode: urbangrid::category_mi::CooccurrenceMode,
) -> Vec<Vec<f64>> {
    let (rs, cs) = (source_categories(records, row_source), source_categories(records, col_source));
    let (rc, cc) = (source_counts(records, row_source), source_counts(records, col_source));
    let mut table = vec![vec![0.0; cs.len()]; rs.len()];
    for (cell, rcounts) in &rc {
        let Some(ccounts) = cc.get(cell) else { continue };
        for (i, a) in rs.iter().enumerate() {
            for (j, b) in cs.iter().enumerate() {
                let x = rcounts.get(a).copied().unwrap_or(0);
                let y = ccounts.get(b).copied().unwrap_or(0);
                table[i][j] += combine(mode, x, y);
            }
        }
    }
    table
}

/// 2x2 table for one category pair, with "not i" pooling the other events
/// of the same source in the cell.
pub fn oracle_pair_table(
    records: &[EventRecord],
    row: &str,
    row_source: SourceChannel,
    col: &str,
    col_source: SourceChannel,
    mode: urbangrid::category_mi::CooccurrenceMode,
) -> Vec<Vec<f64>> {
    let (rc, cc) = (source_counts(records, row_source), source_counts(records, col_source));
    let mut t = vec![vec![0.0; 2]; 2];
    for (cell, rcounts) in &rc {
        let Some(ccounts) = cc.get(cell) else { continue };
        let a = rcounts.get(row).copied().unwrap_or(0);
        let na = rcounts.values().sum::<u64>() - a;
        let b = ccounts.get(col).copied().unwrap_or(0);
        let nb = ccounts.values().sum::<u64>() - b;
        t[0][0] += combine(mode, a, b);
        t[0][1] += combine(mode, a, nb);
        t[1][0] += combine(mode, na, b);
        t[1][1] += combine(mode, na, nb);
    }
    t
}

pub fn record(
    id: usize,
    cell: &str,
    at: DateTime<Utc>,
    lat: f64,
    lon: f64,
    source: SourceChannel,
    category: &str,
) -> EventRecord {
    EventRecord {
        event_id: format!("e{id}"),
        cell_id: cell.to_string(),
        reported_at: at,
        resolved_at: None,
        latitude: lat,
        longitude: lon,
        source,
        category: CategoryId::new(category).unwrap(),
        priority: None,
        description: None,
    }
}

/// A small random dataset: up to 5 cells, up to 12 daily bins, up to 4
/// categories, both sources.
pub struct SmallInstance {
    pub records: Vec<EventRecord>,
    pub window: TimeWindow,
    pub bins: usize,
    pub dataset: EventDataset,
}

pub fn small_instance(seed: u64) -> SmallInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = rng.random_range(1..=5usize);
    let bins = rng.random_range(1..=12usize);
    let cats = rng.random_range(1..=4usize);
    let start = epoch();
    let window = TimeWindow::new(start, start + Duration::days(bins as i64)).unwrap();
    let sites: Vec<(f64, f64)> =
        (0..cells).map(|_| (31.2 + rng.random_range(0.0..0.05), 121.4 + rng.random_range(0.0..0.05))).collect();
    // Uneven cell and bin weights so rows are rarely constant.
    let cell_w: Vec<f64> = (0..cells).map(|_| rng.random_range(0.1..1.0)).collect();
    let n = rng.random_range(0..=60usize);
    let mut records = Vec::with_capacity(n);
    for id in 0..n {
        let mut c = 0;
        let mut u = rng.random_range(0.0..cell_w.iter().sum::<f64>());
        while u > cell_w[c] && c + 1 < cells {
            u -= cell_w[c];
            c += 1;
        }
        let at = start + Duration::seconds(rng.random_range(0..bins as i64 * 86_400));
        let source = if rng.random_bool(0.6) { SourceChannel::MobileDevice } else { SourceChannel::Hotline };
        let cat = format!("k{}", rng.random_range(0..cats));
        records.push(record(id, &format!("s{c}"), at, sites[c].0, sites[c].1, source, &cat));
    }
    let dataset = clean(records.clone(), window);
    SmallInstance { records, window, bins, dataset }
}
