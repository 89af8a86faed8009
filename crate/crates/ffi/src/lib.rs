//! C ABI over the `urbangrid` library.
//!
//! Every fallible call returns a [`UgStatus`]; on failure the message is kept
//! per thread and read back with [`ug_last_error_message`]. Results that are
//! not plain numbers come back as NUL-terminated UTF-8 JSON owned by the
//! caller and released with [`ug_string_free`]. Datasets are opaque handles
//! released with [`ug_dataset_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Serialize;
use urbangrid::aggregate::build_field;
use urbangrid::category_mi::{
    entropy, mutual_information, normalized_mutual_information, relevance_matrix, ContingencyTable, CooccurrenceMode,
};
use urbangrid::ingest::{clean_parsed, day_window, parse_events, parse_timestamp, summarize, InputFormat};
use urbangrid::relevance::{global_spatial_relevance, global_temporal_relevance};
use urbangrid::synth::{generate, GeneratorConfig};
use urbangrid::{BinWidth, Error, EventDataset, SourceChannel, TimeWindow};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidWindow = 5,
    OutOfRange = 6,
    InvalidTable = 7,
    EmptyTable = 8,
    MissingSource = 9,
    Config = 10,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgFormat {
    /// Chosen from the file extension: `.jsonl`/`.ndjson` or CSV.
    Infer = 0,
    Csv = 1,
    JsonLines = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgBin {
    Day = 0,
    Week = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgSource {
    MobileDevice = 0,
    Hotline = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UgMode {
    PairProduct = 0,
    MinCount = 1,
    Presence = 2,
}

/// Opaque cleaned event dataset.
pub struct UgDataset {
    inner: EventDataset,
}

struct Failure {
    status: UgStatus,
    message: String,
}

impl Failure {
    fn new(status: UgStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => UgStatus::Io,
            Error::Csv(_) | Error::Json(_) | Error::MissingColumn(_) => UgStatus::Parse,
            Error::InvalidWindow { .. } => UgStatus::InvalidWindow,
            Error::LagOutOfRange { .. } | Error::CellOutOfRange { .. } => UgStatus::OutOfRange,
            Error::InvalidTable(_) | Error::InvalidProbability(_) | Error::NotNormalized(_) => UgStatus::InvalidTable,
            Error::EmptyTable => UgStatus::EmptyTable,
            Error::MissingSource(_) => UgStatus::MissingSource,
            Error::Config(_) => UgStatus::Config,
            Error::InvalidCategory(_) | Error::InvalidBinWidth(_) | Error::InvalidResolution { .. } => {
                UgStatus::InvalidArgument
            }
        };
        Failure::new(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

/// Run `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> UgStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => UgStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            UgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(UgStatus::NullPointer, format!("{name} is null")));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::new(UgStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn dataset_arg<'a>(p: *const UgDataset) -> Result<&'a EventDataset, Failure> {
    unsafe { p.as_ref() }.map(|d| &d.inner).ok_or_else(|| Failure::new(UgStatus::NullPointer, "dataset is null"))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(UgStatus::NullPointer, format!("{name} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(UgStatus::NullPointer, "output pointer is null"));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn put_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string(value).map_err(Error::from)?;
    let c = CString::new(text).expect("JSON has no NUL");
    unsafe { put(out, c.into_raw()) }
}

fn table(weights: &[f64], rows: usize, cols: usize) -> Result<ContingencyTable, Failure> {
    if rows.checked_mul(cols) != Some(weights.len()) {
        return Err(Failure::new(
            UgStatus::InvalidArgument,
            format!("{} weights do not fill a {rows}x{cols} table", weights.len()),
        ));
    }
    Ok(ContingencyTable::from_matrix(rows, cols, weights.to_vec())?)
}

// Enumerations cross the boundary as plain integers so that an
// out-of-range value from C is an error rather than undefined behaviour.

fn bad_enum(name: &str, value: u32) -> Failure {
    Failure::new(UgStatus::InvalidArgument, format!("{name} {value} is out of range"))
}

fn bin_arg(v: u32) -> Result<BinWidth, Failure> {
    match v {
        x if x == UgBin::Day as u32 => Ok(BinWidth::Day),
        x if x == UgBin::Week as u32 => Ok(BinWidth::Week),
        _ => Err(bad_enum("bin", v)),
    }
}

fn source_arg(v: u32) -> Result<SourceChannel, Failure> {
    match v {
        x if x == UgSource::MobileDevice as u32 => Ok(SourceChannel::MobileDevice),
        x if x == UgSource::Hotline as u32 => Ok(SourceChannel::Hotline),
        _ => Err(bad_enum("source", v)),
    }
}

fn mode_arg(v: u32) -> Result<CooccurrenceMode, Failure> {
    match v {
        x if x == UgMode::PairProduct as u32 => Ok(CooccurrenceMode::PairProduct),
        x if x == UgMode::MinCount as u32 => Ok(CooccurrenceMode::MinCount),
        x if x == UgMode::Presence as u32 => Ok(CooccurrenceMode::Presence),
        _ => Err(bad_enum("mode", v)),
    }
}

fn format_arg(v: u32, path: &str) -> Result<InputFormat, Failure> {
    match v {
        x if x == UgFormat::Csv as u32 => Ok(InputFormat::Csv),
        x if x == UgFormat::JsonLines as u32 => Ok(InputFormat::JsonLines),
        x if x == UgFormat::Infer as u32 => Ok(if path.ends_with(".jsonl") || path.ends_with(".ndjson") {
            InputFormat::JsonLines
        } else {
            InputFormat::Csv
        }),
        _ => Err(bad_enum("format", v)),
    }
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ug_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ug_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parse and clean an event log. `format` is a `ug_format`.
///
/// `window_start`/`window_end` are RFC 3339 timestamps; pass both as null to
/// use whole UTC days covering every report.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_load(
    path: *const c_char,
    format: u32,
    window_start: *const c_char,
    window_end: *const c_char,
    out: *mut *mut UgDataset,
) -> UgStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let format = format_arg(format, path)?;
        let parsed = parse_events(BufReader::new(File::open(path)?), format)?;
        let window = match (window_start.is_null(), window_end.is_null()) {
            (true, true) => day_window(parsed.records.iter().map(|r| r.reported_at)),
            (false, false) => {
                let ts = |p, name| {
                    parse_timestamp(unsafe { str_arg(p, name) }?)
                        .map_err(|e| Failure::new(UgStatus::InvalidWindow, format!("{name}: {e}")))
                };
                TimeWindow::new(ts(window_start, "window_start")?, ts(window_end, "window_end")?)?
            }
            _ => return Err(Failure::new(UgStatus::InvalidWindow, "give both window bounds or neither")),
        };
        let (dataset, _) = clean_parsed(parsed, window, None);
        unsafe { put(out, Box::into_raw(Box::new(UgDataset { inner: dataset }))) }
    })
}

/// Generate a synthetic dataset from a JSON generator config.
///
/// # Safety
/// `config_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_generate(config_json: *const c_char, out: *mut *mut UgDataset) -> UgStatus {
    guard(|| {
        let config = GeneratorConfig::from_json(unsafe { str_arg(config_json, "config_json") }?)?;
        let dataset = generate(&config)?;
        unsafe { put(out, Box::into_raw(Box::new(UgDataset { inner: dataset }))) }
    })
}

/// Release a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_free(dataset: *mut UgDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Number of retained events, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_len(dataset: *const UgDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Number of grid cells, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_cell_count(dataset: *const UgDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.inner.cells().len())
}

/// Number of rows dropped while cleaning, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ug_dataset_rejected(dataset: *const UgDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.inner.rejected_count())
}

/// Per source and category counts and percentages as JSON.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_summary_json(dataset: *const UgDataset, out: *mut *mut c_char) -> UgStatus {
    guard(|| {
        let ds = unsafe { dataset_arg(dataset) }?;
        unsafe { put_json(out, &summarize(ds)) }
    })
}

/// Global temporal relevance curve for lags `0..=max_lag` bins, as JSON.
/// `bin` is a `ug_bin`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_temporal_relevance_json(
    dataset: *const UgDataset,
    bin: u32,
    max_lag: usize,
    normalize: bool,
    out: *mut *mut c_char,
) -> UgStatus {
    guard(|| {
        let ds = unsafe { dataset_arg(dataset) }?;
        let field = build_field(ds, bin_arg(bin)?, None, None);
        let curve = global_temporal_relevance(&field, max_lag, normalize)?;
        unsafe { put_json(out, &curve) }
    })
}

/// Global spatial relevance curve over distance bins of `bin_width_m`
/// up to `max_distance_m`, as JSON. `bin` is a `ug_bin`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_spatial_relevance_json(
    dataset: *const UgDataset,
    bin: u32,
    bin_width_m: f64,
    max_distance_m: f64,
    normalize: bool,
    out: *mut *mut c_char,
) -> UgStatus {
    guard(|| {
        let ds = unsafe { dataset_arg(dataset) }?;
        let field = build_field(ds, bin_arg(bin)?, None, None);
        let curve = global_spatial_relevance(&field, bin_width_m, max_distance_m, normalize)?;
        unsafe { put_json(out, &curve) }
    })
}

/// Category relevance matrix between two sources, as JSON. Sources are
/// `ug_source` values and `mode` is a `ug_mode`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_relevance_matrix_json(
    dataset: *const UgDataset,
    row_source: u32,
    col_source: u32,
    mode: u32,
    out: *mut *mut c_char,
) -> UgStatus {
    guard(|| {
        let ds = unsafe { dataset_arg(dataset) }?;
        let m = relevance_matrix(ds, source_arg(row_source)?, source_arg(col_source)?, mode_arg(mode)?)?;
        unsafe { put_json(out, &m) }
    })
}

/// Shannon entropy in nats of a probability vector.
///
/// # Safety
/// `p` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_entropy(p: *const f64, len: usize, out: *mut f64) -> UgStatus {
    guard(|| {
        let p = unsafe { slice_arg(p, len, "p") }?;
        unsafe { put(out, entropy(p)?) }
    })
}

/// Mutual information in nats of a row-major `rows` x `cols` table of
/// non-negative weights.
///
/// # Safety
/// `weights` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_mutual_information(
    weights: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> UgStatus {
    guard(|| {
        let w = unsafe { slice_arg(weights, rows.saturating_mul(cols), "weights") }?;
        unsafe { put(out, mutual_information(&table(w, rows, cols)?)?) }
    })
}

/// Normalized mutual information of a row-major table; 0 when either
/// marginal is concentrated on one value.
///
/// # Safety
/// `weights` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ug_normalized_mutual_information(
    weights: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> UgStatus {
    guard(|| {
        let w = unsafe { slice_arg(weights, rows.saturating_mul(cols), "weights") }?;
        unsafe { put(out, normalized_mutual_information(&table(w, rows, cols)?)?) }
    })
}
