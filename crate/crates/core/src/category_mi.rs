//! Entropy, mutual information and normalized mutual information between
//! category sets, using spatial co-occurrence over grid cells.
//!
//! Events carry exactly one category, so "events of categories i and j fall
//! in the same cell" has to be turned into a contingency table. For a cell
//! with `n_i` row-source events of category `i` and `m_j` col-source events
//! of category `j` the table gains:
//!
//! | mode          | `n_ij +=`            |
//! |---------------|----------------------|
//! | `PairProduct` | `n_i * m_j`          |
//! | `MinCount`    | `min(n_i, m_j)`      |
//! | `Presence`    | `1` if both are > 0  |
//!
//! `PairProduct` is the default: it is the joint distribution of a random
//! (row event, col event) pair conditioned on sharing a cell.
//!
//! All logarithms are natural.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CategoryId, EventDataset, SourceChannel};

/// Tolerance on the sum of a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CooccurrenceMode {
    #[default]
    PairProduct,
    MinCount,
    Presence,
}

impl CooccurrenceMode {
    pub const ALL: [CooccurrenceMode; 3] =
        [CooccurrenceMode::PairProduct, CooccurrenceMode::MinCount, CooccurrenceMode::Presence];

    pub fn combine(self, a: u64, b: u64) -> f64 {
        match self {
            CooccurrenceMode::PairProduct => (a as f64) * (b as f64),
            CooccurrenceMode::MinCount => a.min(b) as f64,
            CooccurrenceMode::Presence => {
                if a > 0 && b > 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            CooccurrenceMode::PairProduct => "product",
            CooccurrenceMode::MinCount => "min",
            CooccurrenceMode::Presence => "presence",
        }
    }
}

impl fmt::Display for CooccurrenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for CooccurrenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "product" | "pairproduct" | "pair-product" => Ok(CooccurrenceMode::PairProduct),
            "min" | "mincount" | "min-count" => Ok(CooccurrenceMode::MinCount),
            "presence" => Ok(CooccurrenceMode::Presence),
            other => Err(format!("unknown mode {other:?}; expected product, min or presence")),
        }
    }
}

/// Row-major table of non-negative co-occurrence weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<CategoryId>,
    pub col_labels: Vec<CategoryId>,
    weights: Vec<f64>,
    total: f64,
    pub mode: CooccurrenceMode,
}

impl ContingencyTable {
    pub fn new(
        row_labels: Vec<CategoryId>,
        col_labels: Vec<CategoryId>,
        weights: Vec<f64>,
        mode: CooccurrenceMode,
    ) -> Result<Self> {
        if weights.len() != row_labels.len() * col_labels.len() {
            return Err(Error::InvalidTable(format!(
                "{} weights for a {}x{} table",
                weights.len(),
                row_labels.len(),
                col_labels.len()
            )));
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidTable(format!("weight {bad} is not a finite non-negative number")));
        }
        let total = weights.iter().sum();
        Ok(ContingencyTable { row_labels, col_labels, weights, total, mode })
    }

    /// Table with generated labels `r0..`, `c0..`; for tests and bindings.
    pub fn from_matrix(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        let label = |p: &str, i: usize| CategoryId::new(format!("{p}{i}")).expect("non-empty label");
        ContingencyTable::new(
            (0..rows).map(|i| label("r", i)).collect(),
            (0..cols).map(|j| label("c", j)).collect(),
            weights,
            CooccurrenceMode::PairProduct,
        )
    }

    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols() + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// No co-occurring mass anywhere; MI and NMI reject such tables.
    pub fn is_empty(&self) -> bool {
        self.total <= 0.0
    }

    /// Row sums, each accumulated in column order.
    pub fn row_marginals(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| (0..self.cols()).map(|j| self.weight(i, j)).sum()).collect()
    }

    /// Column sums, each accumulated in row order.
    pub fn col_marginals(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| (0..self.rows()).map(|i| self.weight(i, j)).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut weights = Vec::with_capacity(self.weights.len());
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                weights.push(self.weight(i, j));
            }
        }
        ContingencyTable {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            weights,
            total: self.total,
            mode: self.mode,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ContingencyTable::new(
            self.row_labels.clone(),
            self.col_labels.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
            self.mode,
        )
    }
}

/// Neumaier-compensated sum of terms taken in ascending order, so any
/// permutation of the same terms gives the same bits.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probabilities: &[f64]) -> Result<f64> {
    if let Some(bad) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::InvalidProbability(*bad));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::NotNormalized(sum));
    }
    Ok(entropy_unchecked(probabilities))
}

fn entropy_unchecked(probabilities: &[f64]) -> f64 {
    let terms = probabilities.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).collect();
    canonical_sum(terms)
}

fn marginal_probabilities(table: &ContingencyTable) -> (Vec<f64>, Vec<f64>) {
    let n = table.total();
    let rows = table.row_marginals().into_iter().map(|m| m / n).collect();
    let cols = table.col_marginals().into_iter().map(|m| m / n).collect();
    (rows, cols)
}

/// `H(U)` and `H(V)` of the table's row and column marginals.
pub fn marginal_entropies(table: &ContingencyTable) -> Result<(f64, f64)> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (p, q) = marginal_probabilities(table);
    Ok((entropy_unchecked(&p), entropy_unchecked(&q)))
}

/// `sum_ij P(i,j) ln(P(i,j) / (P(i) P'(j)))` with `P = n / N`.
pub fn mutual_information(table: &ContingencyTable) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = table.total();
    let (p, q) = marginal_probabilities(table);
    let mut terms = Vec::with_capacity(table.weights.len());
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let w = table.weight(i, j);
            if w > 0.0 {
                let pij = w / n;
                terms.push(pij * (pij / (pi * qj)).ln());
            }
        }
    }
    Ok(canonical_sum(terms))
}

/// The set-cardinality form:
/// `sum_ij (|U_i ∩ V_j| / N) ln(N |U_i ∩ V_j| / (|U_i| |V_j|))`.
pub fn mutual_information_cardinality(table: &ContingencyTable) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = table.total();
    let (rows, cols) = (table.row_marginals(), table.col_marginals());
    let mut terms = Vec::with_capacity(table.weights.len());
    for (i, ui) in rows.iter().enumerate() {
        for (j, vj) in cols.iter().enumerate() {
            let w = table.weight(i, j);
            if w > 0.0 {
                terms.push(w / n * (n * w / (ui * vj)).ln());
            }
        }
    }
    Ok(canonical_sum(terms))
}

/// `MI / sqrt(H(U) H(V))`; defined as 0 when either marginal entropy is 0.
pub fn normalized_mutual_information(table: &ContingencyTable) -> Result<f64> {
    let (hu, hv) = marginal_entropies(table)?;
    if hu <= 0.0 || hv <= 0.0 {
        return Ok(0.0);
    }
    Ok(mutual_information(table)? / (hu * hv).sqrt())
}

/// Per-cell category counts for one source: `counts[cell][category]`.
struct CellCounts {
    labels: Vec<CategoryId>,
    /// (cell index, per-category counts, row total), cells in index order.
    cells: BTreeMap<u32, (Vec<u64>, u64)>,
}

fn cell_counts(dataset: &EventDataset, source: SourceChannel, labels: Option<&[CategoryId]>) -> CellCounts {
    let labels: Vec<CategoryId> = match labels {
        Some(l) => l.to_vec(),
        None => dataset
            .records()
            .iter()
            .filter(|r| r.source == source)
            .map(|r| r.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let index: HashMap<&CategoryId, usize> = labels.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut cells: BTreeMap<u32, (Vec<u64>, u64)> = BTreeMap::new();
    for (r, &cell) in dataset.records().iter().zip(dataset.record_cells()) {
        if r.source != source {
            continue;
        }
        let entry = cells.entry(cell).or_insert_with(|| (vec![0; labels.len()], 0));
        // Events outside an explicit label list still count towards the
        // cell total so "not i" includes them.
        if let Some(&k) = index.get(&r.category) {
            entry.0[k] += 1;
        }
        entry.1 += 1;
    }
    CellCounts { labels, cells }
}

fn require_source(dataset: &EventDataset, source: SourceChannel) -> Result<()> {
    if dataset.records().iter().any(|r| r.source == source) {
        Ok(())
    } else {
        Err(Error::MissingSource(source))
    }
}

/// Full category-by-category co-occurrence table over all cells.
pub fn cooccurrence_table(
    dataset: &EventDataset,
    row_source: SourceChannel,
    col_source: SourceChannel,
    mode: CooccurrenceMode,
) -> Result<ContingencyTable> {
    require_source(dataset, row_source)?;
    require_source(dataset, col_source)?;
    let rows = cell_counts(dataset, row_source, None);
    let cols = cell_counts(dataset, col_source, None);
    let (nr, nc) = (rows.labels.len(), cols.labels.len());
    let mut weights = vec![0.0; nr * nc];
    for (cell, (n, _)) in &rows.cells {
        let Some((m, _)) = cols.cells.get(cell) else { continue };
        for i in 0..nr {
            for j in 0..nc {
                weights[i * nc + j] += mode.combine(n[i], m[j]);
            }
        }
    }
    ContingencyTable::new(rows.labels, cols.labels, weights, mode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMatrix {
    pub rows: Vec<CategoryId>,
    pub cols: Vec<CategoryId>,
    pub row_source: SourceChannel,
    pub col_source: SourceChannel,
    pub mode: CooccurrenceMode,
    /// Row-major NMI scores.
    pub scores: Vec<f64>,
    /// Row categories with no events of the row source.
    pub empty_rows: Vec<CategoryId>,
    pub empty_cols: Vec<CategoryId>,
}

impl RelevanceMatrix {
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols.len() + j]
    }

    /// `(row, col)` of the largest score; ties resolve to the first in
    /// row-major order.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let c = self.cols.len();
        let mut best: Option<(usize, f64)> = None;
        for (k, &s) in self.scores.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        best.map(|(k, _)| (k / c, k % c))
    }

    /// Long format `row_category,col_category,nmi`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_category", "col_category", "nmi"])?;
        for (i, r) in self.rows.iter().enumerate() {
            for (j, c) in self.cols.iter().enumerate() {
                w.write_record([r.as_str(), c.as_str(), &self.score(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The 2x2 table `{(i,j), (i,¬j), (¬i,j), (¬i,¬j)}` for one category pair,
/// where `¬i` pools every other row-source event in the cell.
pub fn pair_table(
    dataset: &EventDataset,
    row: &CategoryId,
    row_source: SourceChannel,
    col: &CategoryId,
    col_source: SourceChannel,
    mode: CooccurrenceMode,
) -> Result<ContingencyTable> {
    let rows = cell_counts(dataset, row_source, Some(std::slice::from_ref(row)));
    let cols = cell_counts(dataset, col_source, Some(std::slice::from_ref(col)));
    collapse(&rows, 0, &cols, 0, mode)
}

fn collapse(
    rows: &CellCounts,
    i: usize,
    cols: &CellCounts,
    j: usize,
    mode: CooccurrenceMode,
) -> Result<ContingencyTable> {
    let mut w = [0.0f64; 4];
    for (cell, (n, n_total)) in &rows.cells {
        let Some((m, m_total)) = cols.cells.get(cell) else { continue };
        let (a, not_a) = (n[i], n_total - n[i]);
        let (b, not_b) = (m[j], m_total - m[j]);
        w[0] += mode.combine(a, b);
        w[1] += mode.combine(a, not_b);
        w[2] += mode.combine(not_a, b);
        w[3] += mode.combine(not_a, not_b);
    }
    let not = |c: &CategoryId| CategoryId::new(format!("not {c}")).expect("non-empty label");
    let (ri, cj) = (&rows.labels[i], &cols.labels[j]);
    ContingencyTable::new(vec![ri.clone(), not(ri)], vec![cj.clone(), not(cj)], w.to_vec(), mode)
}

/// Per-pair NMI between row-source and col-source categories.
pub fn relevance_matrix(
    dataset: &EventDataset,
    row_source: SourceChannel,
    col_source: SourceChannel,
    mode: CooccurrenceMode,
) -> Result<RelevanceMatrix> {
    relevance_matrix_for(dataset, None, None, row_source, col_source, mode)
}

/// [`relevance_matrix`] with explicit category lists. Categories without
/// events of their source get zero scores and are listed in
/// `empty_rows` / `empty_cols`.
pub fn relevance_matrix_for(
    dataset: &EventDataset,
    row_labels: Option<&[CategoryId]>,
    col_labels: Option<&[CategoryId]>,
    row_source: SourceChannel,
    col_source: SourceChannel,
    mode: CooccurrenceMode,
) -> Result<RelevanceMatrix> {
    require_source(dataset, row_source)?;
    require_source(dataset, col_source)?;
    let rows = cell_counts(dataset, row_source, row_labels);
    let cols = cell_counts(dataset, col_source, col_labels);
    let present = |counts: &CellCounts, k: usize| counts.cells.values().any(|(c, _)| c[k] > 0);
    let row_present: Vec<bool> = (0..rows.labels.len()).map(|i| present(&rows, i)).collect();
    let col_present: Vec<bool> = (0..cols.labels.len()).map(|j| present(&cols, j)).collect();

    let mut scores = Vec::with_capacity(rows.labels.len() * cols.labels.len());
    let mut any_mass = false;
    for (i, &row_ok) in row_present.iter().enumerate() {
        for (j, &col_ok) in col_present.iter().enumerate() {
            if !(row_ok && col_ok) {
                scores.push(0.0);
                continue;
            }
            let table = collapse(&rows, i, &cols, j, mode)?;
            if table.is_empty() {
                scores.push(0.0);
                continue;
            }
            any_mass = true;
            scores.push(normalized_mutual_information(&table)?);
        }
    }
    if !any_mass && row_present.iter().any(|p| *p) && col_present.iter().any(|p| *p) {
        return Err(Error::EmptyTable);
    }
    let missing = |labels: &[CategoryId], present: &[bool]| {
        labels.iter().zip(present).filter(|(_, p)| !**p).map(|(l, _)| l.clone()).collect()
    };
    Ok(RelevanceMatrix {
        empty_rows: missing(&rows.labels, &row_present),
        empty_cols: missing(&cols.labels, &col_present),
        rows: rows.labels,
        cols: cols.labels,
        row_source,
        col_source,
        mode,
        scores,
    })
}
