//! Parsing, validation and cleaning of raw event files, and the
//! source/category summary table.
//!
//! Two input formats share one column set:
//!
//! ```text
//! event_id,cell_id,source,category,reported_at,resolved_at,latitude,longitude,priority,description
//! ```
//!
//! Delimited text needs a header row (RFC-4180 quoting). JSON-lines objects
//! use the same keys. Timestamps are RFC 3339 with an explicit offset; an
//! empty string marks an absent optional field.
//!
//! Row-level problems never abort a parse: every data row ends up either as
//! a record or as exactly one [`RawRecordError`]. Only stream-level failures
//! (I/O, a header without the required columns) return `Err`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    valid_coordinates, CategoryId, EventDataset, EventRecord, GridCell, SourceChannel, TimeWindow, Timestamp,
};

pub const COLUMNS: [&str; 10] = [
    "event_id",
    "cell_id",
    "source",
    "category",
    "reported_at",
    "resolved_at",
    "latitude",
    "longitude",
    "priority",
    "description",
];

const REQUIRED: [Column; 7] = [
    Column::EventId,
    Column::CellId,
    Column::Source,
    Column::Category,
    Column::ReportedAt,
    Column::Latitude,
    Column::Longitude,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    EventId = 0,
    CellId,
    Source,
    Category,
    ReportedAt,
    ResolvedAt,
    Latitude,
    Longitude,
    Priority,
    Description,
}

impl Column {
    fn name(self) -> &'static str {
        COLUMNS[self as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "jsonl")]
    JsonLines,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "json-lines" | "ndjson" => Ok(InputFormat::JsonLines),
            other => Err(format!("unknown input format {other:?}; expected csv or jsonl")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    MalformedRow,
    BadTimestamp,
    BadCoordinate,
    DuplicateId,
    OutOfWindow,
    MissingField,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Why one input row was rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecordError {
    pub line_number: usize,
    pub reason: RejectReason,
    pub detail: String,
}

impl RawRecordError {
    fn new(line_number: usize, reason: RejectReason, detail: impl Into<String>) -> Self {
        RawRecordError { line_number, reason, detail: detail.into() }
    }
}

/// Result of parsing one input stream.
///
/// `line_numbers[i]` is the input line on which `records[i]` started.
#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<EventRecord>,
    pub line_numbers: Vec<usize>,
    pub errors: Vec<RawRecordError>,
}

impl ParseOutcome {
    pub fn rows(&self) -> usize {
        self.records.len() + self.errors.len()
    }
}

pub fn parse_events<R: Read>(input: R, format: InputFormat) -> Result<ParseOutcome> {
    match format {
        InputFormat::Csv => parse_csv(input),
        InputFormat::JsonLines => parse_jsonl(input),
    }
}

/// Per-row validation state: interned categories and ids already accepted.
#[derive(Default)]
struct RowBuilder {
    categories: HashMap<String, CategoryId>,
    seen_ids: HashSet<String>,
    out: ParseOutcome,
}

impl RowBuilder {
    fn push(&mut self, line: usize, fields: [Option<&str>; 10]) {
        match self.build(fields) {
            Ok(record) => {
                if self.seen_ids.contains(&record.event_id) {
                    let detail = format!("event_id {:?} already seen", record.event_id);
                    self.reject(RawRecordError::new(line, RejectReason::DuplicateId, detail));
                } else {
                    self.seen_ids.insert(record.event_id.clone());
                    self.out.records.push(record);
                    self.out.line_numbers.push(line);
                }
            }
            Err((reason, detail)) => self.reject(RawRecordError::new(line, reason, detail)),
        }
    }

    fn reject(&mut self, err: RawRecordError) {
        self.out.errors.push(err);
    }

    fn build(&mut self, fields: [Option<&str>; 10]) -> std::result::Result<EventRecord, (RejectReason, String)> {
        let get = |c: Column| fields[c as usize].filter(|v| !v.is_empty());
        if let Some(missing) = REQUIRED.iter().find(|c| get(**c).is_none()) {
            return Err((RejectReason::MissingField, format!("required field {} is empty", missing.name())));
        }
        let required = |c: Column| get(c).unwrap_or_default();

        let source = SourceChannel::from_str(required(Column::Source))
            .map_err(|e| (RejectReason::MalformedRow, e.to_string()))?;

        let category_name = required(Column::Category);
        let category = match self.categories.get(category_name) {
            Some(c) => c.clone(),
            None => {
                let c = CategoryId::new(category_name).map_err(|e| (RejectReason::MalformedRow, e.to_string()))?;
                self.categories.insert(category_name.to_string(), c.clone());
                c
            }
        };

        let reported_at = parse_timestamp(required(Column::ReportedAt))
            .map_err(|d| (RejectReason::BadTimestamp, format!("reported_at: {d}")))?;
        let resolved_at = get(Column::ResolvedAt)
            .map(parse_timestamp)
            .transpose()
            .map_err(|d| (RejectReason::BadTimestamp, format!("resolved_at: {d}")))?;
        if let Some(resolved) = resolved_at {
            if resolved < reported_at {
                return Err((RejectReason::BadTimestamp, "resolved_at precedes reported_at".to_string()));
            }
        }

        let latitude = parse_coordinate(required(Column::Latitude), "latitude")?;
        let longitude = parse_coordinate(required(Column::Longitude), "longitude")?;
        if !valid_coordinates(latitude, longitude) {
            return Err((RejectReason::BadCoordinate, format!("({latitude}, {longitude}) outside WGS84 bounds")));
        }

        let priority = get(Column::Priority)
            .map(|p| p.trim().parse::<u8>())
            .transpose()
            .map_err(|e| (RejectReason::MalformedRow, format!("priority: {e}")))?;

        Ok(EventRecord {
            event_id: required(Column::EventId).to_string(),
            cell_id: required(Column::CellId).to_string(),
            reported_at,
            resolved_at,
            latitude,
            longitude,
            source,
            category,
            priority,
            description: get(Column::Description).map(str::to_string),
        })
    }
}

fn parse_coordinate(raw: &str, name: &str) -> std::result::Result<f64, (RejectReason, String)> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err((RejectReason::BadCoordinate, format!("{name}: {raw:?} is not a number"))),
    }
}

/// RFC 3339 with an explicit offset, normalized to UTC and truncated to
/// whole seconds.
pub fn parse_timestamp(raw: &str) -> std::result::Result<Timestamp, String> {
    let ts = DateTime::parse_from_rfc3339(raw.trim()).map_err(|e| format!("{raw:?}: {e}"))?;
    let utc = ts.with_timezone(&Utc);
    Ok(utc.with_nanosecond(0).unwrap_or(utc))
}

pub fn format_timestamp(ts: Timestamp) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_csv<R: Read>(input: R) -> Result<ParseOutcome> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).buffer_capacity(1 << 20).from_reader(input);

    let headers = reader.byte_headers()?.clone();
    let mut positions = [None; 10];
    for (idx, raw) in headers.iter().enumerate() {
        let name = String::from_utf8_lossy(raw);
        let name = name.trim_start_matches('\u{feff}').trim();
        if let Some(col) = COLUMNS.iter().position(|c| *c == name) {
            positions[col].get_or_insert(idx);
        }
    }
    if let Some(missing) = REQUIRED.iter().find(|c| positions[**c as usize].is_none()) {
        return Err(Error::MissingColumn(missing.name().to_string()));
    }
    let width = headers.len();

    let mut builder = RowBuilder::default();
    let mut row = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(e.into());
                }
                let line = e.position().map_or(0, |p| p.line() as usize);
                builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, e.to_string()));
                continue;
            }
        }
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != width {
            let detail = format!("expected {width} fields, found {}", row.len());
            builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, detail));
            continue;
        }
        let mut fields: [Option<&str>; 10] = [None; 10];
        let mut utf8_error = None;
        for (col, pos) in positions.iter().enumerate() {
            if let Some(idx) = pos {
                match std::str::from_utf8(&row[*idx]) {
                    Ok(s) => fields[col] = Some(s),
                    Err(e) => utf8_error = Some(format!("{}: {e}", COLUMNS[col])),
                }
            }
        }
        match utf8_error {
            Some(detail) => builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, detail)),
            None => builder.push(line, fields),
        }
    }
    Ok(builder.out)
}

fn parse_jsonl<R: Read>(input: R) -> Result<ParseOutcome> {
    let mut reader = BufReader::with_capacity(1 << 20, input);
    let mut builder = RowBuilder::default();
    let mut buf = Vec::new();
    let mut line = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = match std::str::from_utf8(&buf) {
            Ok(t) => t.trim(),
            Err(e) => {
                builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, e.to_string()));
                continue;
            }
        };
        if text.is_empty() {
            continue;
        }
        let object = match serde_json::from_str::<serde_json::Value>(text) {
            Ok(serde_json::Value::Object(map)) => map,
            Ok(_) => {
                builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, "line is not a JSON object"));
                continue;
            }
            Err(e) => {
                builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, e.to_string()));
                continue;
            }
        };
        // Numbers and booleans are rendered to text so both formats share
        // one validation path.
        let mut owned: [Option<String>; 10] = Default::default();
        let mut bad_value = None;
        for (col, name) in COLUMNS.iter().enumerate() {
            match object.get(*name) {
                None | Some(serde_json::Value::Null) => {}
                Some(serde_json::Value::String(s)) => owned[col] = Some(s.clone()),
                Some(serde_json::Value::Number(n)) => owned[col] = Some(n.to_string()),
                Some(other) => bad_value = Some(format!("{name}: unexpected value {other}")),
            }
        }
        if let Some(detail) = bad_value {
            builder.reject(RawRecordError::new(line, RejectReason::MalformedRow, detail));
            continue;
        }
        let fields: [Option<&str>; 10] = std::array::from_fn(|i| owned[i].as_deref());
        builder.push(line, fields);
    }
    Ok(builder.out)
}

/// Whole UTC days covering every report; one day from the epoch when there
/// are none.
pub fn day_window(times: impl Iterator<Item = DateTime<Utc>>) -> TimeWindow {
    let (mut lo, mut hi) = (None::<DateTime<Utc>>, None::<DateTime<Utc>>);
    for t in times {
        lo = Some(lo.map_or(t, |l| l.min(t)));
        hi = Some(hi.map_or(t, |h| h.max(t)));
    }
    let floor = |t: DateTime<Utc>| t.date_naive().and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    match (lo, hi) {
        (Some(lo), Some(hi)) => TimeWindow::new(floor(lo), floor(hi) + Duration::days(1)).expect("non-empty"),
        _ => TimeWindow::new(DateTime::UNIX_EPOCH, DateTime::UNIX_EPOCH + Duration::days(1)).expect("non-empty"),
    }
}

/// Filter records to a window and derive grid cells.
///
/// Keeps records with valid coordinates, consistent timestamps, `reported_at`
/// inside the window and an unseen `event_id` (first occurrence wins).
pub fn clean(records: Vec<EventRecord>, window: TimeWindow) -> EventDataset {
    clean_records(records, None, window, None, 0).0
}

/// [`clean`] over a parse result, with an optional cell registry.
///
/// Returns the dataset and every rejection (parse errors plus cleaning
/// rejections) ordered by line number. `rejected_count` covers both.
pub fn clean_parsed(
    parsed: ParseOutcome,
    window: TimeWindow,
    registry: Option<&[GridCell]>,
) -> (EventDataset, Vec<RawRecordError>) {
    let ParseOutcome { records, line_numbers, mut errors } = parsed;
    let (dataset, rejections) = clean_records(records, Some(&line_numbers), window, registry, errors.len());
    errors.extend(rejections);
    errors.sort_by_key(|e| e.line_number);
    (dataset, errors)
}

fn clean_records(
    records: Vec<EventRecord>,
    line_numbers: Option<&[usize]>,
    window: TimeWindow,
    registry: Option<&[GridCell]>,
    prior_rejected: usize,
) -> (EventDataset, Vec<RawRecordError>) {
    let total = records.len();
    let mut seen = HashSet::with_capacity(total);
    let mut kept = Vec::with_capacity(total);
    let mut rejections = Vec::new();

    for (i, record) in records.into_iter().enumerate() {
        let line = line_numbers.and_then(|l| l.get(i).copied()).unwrap_or(i + 1);
        let verdict = if !record.has_valid_coordinates() {
            Some((RejectReason::BadCoordinate, "coordinates outside WGS84 bounds".to_string()))
        } else if !record.has_consistent_times() {
            Some((RejectReason::BadTimestamp, "resolved_at precedes reported_at".to_string()))
        } else if !window.contains(record.reported_at) {
            Some((
                RejectReason::OutOfWindow,
                format!("reported_at {} outside window", format_timestamp(record.reported_at)),
            ))
        } else if !seen.insert(record.event_id.clone()) {
            Some((RejectReason::DuplicateId, format!("event_id {:?} already seen", record.event_id)))
        } else {
            None
        };
        match verdict {
            Some((reason, detail)) => rejections.push(RawRecordError::new(line, reason, detail)),
            None => kept.push(record),
        }
    }

    let (cells, record_cells) = derive_cells(&kept, registry);
    let rejected = total - kept.len() + prior_rejected;
    (EventDataset::from_parts(kept, cells, record_cells, window, rejected), rejections)
}

/// Group records by `cell_id`. Centroids come from the registry when it
/// lists the cell, otherwise from the mean of member coordinates.
fn derive_cells(records: &[EventRecord], registry: Option<&[GridCell]>) -> (Vec<GridCell>, Vec<u32>) {
    struct Acc {
        first: (f64, f64),
        offset: (f64, f64),
        n: usize,
    }
    let mut acc: HashMap<&str, Acc> = HashMap::new();
    for r in records {
        let entry =
            acc.entry(r.cell_id.as_str()).or_insert(Acc { first: (r.latitude, r.longitude), offset: (0.0, 0.0), n: 0 });
        // Accumulate offsets from the first member so identical points
        // average back to themselves exactly.
        entry.offset.0 += r.latitude - entry.first.0;
        entry.offset.1 += r.longitude - entry.first.1;
        entry.n += 1;
    }
    let known: HashMap<&str, &GridCell> =
        registry.unwrap_or_default().iter().map(|c| (c.cell_id.as_str(), c)).collect();

    let mut ids: Vec<&str> = acc.keys().copied().collect();
    ids.sort_unstable();
    let cells: Vec<GridCell> = ids
        .iter()
        .map(|id| match known.get(id) {
            Some(c) => (*c).clone(),
            None => {
                let a = &acc[id];
                let n = a.n as f64;
                GridCell {
                    cell_id: (*id).to_string(),
                    centroid_lat: a.first.0 + a.offset.0 / n,
                    centroid_lon: a.first.1 + a.offset.1 / n,
                }
            }
        })
        .collect();
    let index: HashMap<&str, u32> = ids.iter().enumerate().map(|(i, id)| (*id, i as u32)).collect();
    let record_cells = records.iter().map(|r| index[r.cell_id.as_str()]).collect();
    (cells, record_cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceShare {
    pub source: SourceChannel,
    pub count: usize,
    pub percent_of_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: SourceChannel,
    pub category: CategoryId,
    pub count: usize,
    pub percent_of_total: f64,
}

/// Source/category breakdown in the layout of a dataset description table.
/// Percentages are of the grand total, rounded half-up to one decimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceCategorySummary {
    pub total: usize,
    pub sources: Vec<SourceShare>,
    pub rows: Vec<SummaryRow>,
}

/// `100 * count / total` rounded half-up to one decimal, in exact integer
/// arithmetic.
pub fn percent_one_decimal(count: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (c, t) = (count as u128, total as u128);
    let tenths = (2000 * c + t) / (2 * t);
    tenths as f64 / 10.0
}

pub fn summarize(dataset: &EventDataset) -> SourceCategorySummary {
    let total = dataset.len();
    let mut counts: HashMap<(SourceChannel, &CategoryId), usize> = HashMap::new();
    let mut per_source = [0usize; 2];
    for r in dataset.records() {
        *counts.entry((r.source, &r.category)).or_default() += 1;
        per_source[r.source as usize] += 1;
    }
    let sources = SourceChannel::ALL
        .iter()
        .filter(|s| per_source[**s as usize] > 0)
        .map(|s| SourceShare {
            source: *s,
            count: per_source[*s as usize],
            percent_of_total: percent_one_decimal(per_source[*s as usize], total),
        })
        .collect();
    let mut rows: Vec<SummaryRow> = counts
        .into_iter()
        .map(|((source, category), count)| SummaryRow {
            source,
            category: category.clone(),
            count,
            percent_of_total: percent_one_decimal(count, total),
        })
        .collect();
    rows.sort_by(|a, b| a.source.cmp(&b.source).then(b.count.cmp(&a.count)).then(a.category.cmp(&b.category)));
    SourceCategorySummary { total, sources, rows }
}

impl SourceCategorySummary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "category", "count", "percent_of_total"])?;
        for r in &self.rows {
            w.write_record([
                r.source.as_str(),
                r.category.as_str(),
                &r.count.to_string(),
                &format!("{:.1}", r.percent_of_total),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width text table for terminals.
    pub fn render_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.category.as_str().chars().count()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<14} {:>7}  {:<width$} {:>7}\n", "Source", "%", "Category", "%");
        for share in &self.sources {
            let mut first = true;
            for row in self.rows.iter().filter(|r| r.source == share.source) {
                let (src, pct) = if first {
                    (share.source.as_str().to_string(), format!("{:.1}", share.percent_of_total))
                } else {
                    (String::new(), String::new())
                };
                first = false;
                s.push_str(&format!(
                    "{:<14} {:>7}  {:<width$} {:>7.1}\n",
                    src,
                    pct,
                    row.category.as_str(),
                    row.percent_of_total
                ));
            }
        }
        s.push_str(&format!("total records: {}\n", self.total));
        s
    }
}

/// Write records in the canonical delimited-text schema.
pub fn write_events_csv<W: Write>(records: &[EventRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().buffer_capacity(1 << 20).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        w.write_record(canonical_fields(r).iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_jsonl<W: Write>(records: &[EventRecord], mut out: W) -> Result<()> {
    for r in records {
        let fields = canonical_fields(r);
        let mut map = serde_json::Map::new();
        for (name, value) in COLUMNS.iter().zip(fields) {
            map.insert(name.to_string(), serde_json::Value::String(value));
        }
        serde_json::to_writer(&mut out, &map)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn canonical_fields(r: &EventRecord) -> [String; 10] {
    [
        r.event_id.clone(),
        r.cell_id.clone(),
        r.source.as_str().to_string(),
        r.category.to_string(),
        format_timestamp(r.reported_at),
        r.resolved_at.map(format_timestamp).unwrap_or_default(),
        r.latitude.to_string(),
        r.longitude.to_string(),
        r.priority.map(|p| p.to_string()).unwrap_or_default(),
        r.description.clone().unwrap_or_default(),
    ]
}

pub fn write_rejects_csv<W: Write>(errors: &[RawRecordError], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line_number", "reason", "detail"])?;
    for e in errors {
        w.write_record([e.line_number.to_string(), e.reason.to_string(), e.detail.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cell registry: `cell_id,latitude,longitude` with a header.
pub fn read_cell_registry<R: Read>(input: R) -> Result<Vec<GridCell>> {
    #[derive(Deserialize)]
    struct Row {
        cell_id: String,
        latitude: f64,
        longitude: f64,
    }
    let mut reader = csv::Reader::from_reader(input);
    let mut cells = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        cells.push(GridCell { cell_id: row.cell_id, centroid_lat: row.latitude, centroid_lon: row.longitude });
    }
    Ok(cells)
}
