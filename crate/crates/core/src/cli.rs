//! Command-line front end.
//!
//! Every run writes into its own output directory: the command's data files
//! plus `manifest.json`. Nothing is written until all results are computed,
//! so a failing run leaves no partial output behind.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{build_field, restrict, spatial_density, trend_series};
use crate::category_mi::{relevance_matrix, CooccurrenceMode};
use crate::error::Error;
use crate::ingest::{
    clean_parsed, day_window, format_timestamp, parse_events, parse_timestamp, read_cell_registry, summarize,
    write_events_csv, write_rejects_csv, InputFormat, RawRecordError,
};
use crate::model::{BinWidth, CategoryId, EventDataset, SourceChannel, TimeWindow};
use crate::relevance::{global_spatial_relevance, global_temporal_relevance, DEFAULT_DISTANCE_BIN_M};
use crate::synth::{generate_records, GeneratorConfig, RNG_DESCRIPTION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset.json";
pub const CELLS_CSV: &str = "cells.csv";
pub const REJECTS_CSV: &str = "rejects.csv";

#[derive(Debug, Parser)]
#[command(name = "urbangrid", version, about = "Spatiotemporal analytics for urban grid event logs")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Output directory for this run.
    #[arg(long, global = true, default_value = "urbangrid-out")]
    pub out: PathBuf,

    /// Overwrite files in an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, validate and clean an event log into a dataset archive.
    Ingest(IngestArgs),
    /// Source and category breakdown.
    Summary(InputArgs),
    /// Trend series and global temporal relevance curve.
    Temporal(TemporalArgs),
    /// Density grid and global spatial relevance curve.
    Spatial(SpatialArgs),
    /// Category relevance matrix between two sources.
    Categories(CategoriesArgs),
    /// Generate a synthetic event log from a JSON config.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => InputFormat::Csv,
            FormatArg::Jsonl => InputFormat::JsonLines,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BinArg {
    Day,
    Week,
}

impl From<BinArg> for BinWidth {
    fn from(b: BinArg) -> Self {
        match b {
            BinArg::Day => BinWidth::Day,
            BinArg::Week => BinWidth::Week,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Product,
    Min,
    Presence,
}

impl From<ModeArg> for CooccurrenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Product => CooccurrenceMode::PairProduct,
            ModeArg::Min => CooccurrenceMode::MinCount,
            ModeArg::Presence => CooccurrenceMode::Presence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SourceArg {
    #[value(name = "mobile")]
    MobileDevice,
    #[value(name = "hotline")]
    Hotline,
}

impl From<SourceArg> for SourceChannel {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::MobileDevice => SourceChannel::MobileDevice,
            SourceArg::Hotline => SourceChannel::Hotline,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct InputArgs {
    /// Event log (CSV or JSON lines) or a directory written by `ingest`.
    #[arg(long)]
    pub input: PathBuf,

    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Half-open analysis window, RFC 3339 timestamps or dates.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    pub window: Option<Vec<String>>,

    /// Cell registry CSV (cell_id,latitude,longitude) overriding centroids.
    #[arg(long)]
    pub cells: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TemporalArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_enum, default_value_t = BinArg::Week)]
    pub bin: BinArg,

    /// Largest lag in bins; defaults to half the number of bins.
    #[arg(long)]
    pub max_lag: Option<usize>,

    /// Restrict to these categories (repeatable).
    #[arg(long)]
    pub category: Vec<String>,

    /// Divide by the lag-0 value.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SpatialArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Time binning of the count field.
    #[arg(long, value_enum, default_value_t = BinArg::Week)]
    pub bin: BinArg,

    #[arg(long, default_value_t = DEFAULT_DISTANCE_BIN_M)]
    pub bin_width_m: f64,

    #[arg(long, default_value_t = 30_000.0)]
    pub max_dist_m: f64,

    #[arg(long)]
    pub category: Vec<String>,

    /// Density grid resolution.
    #[arg(long, num_args = 2, value_names = ["NX", "NY"], default_values_t = [100, 100])]
    pub resolution: Vec<usize>,

    /// Divide by the variance-weighted baseline.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CategoriesArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_enum, default_value_t = SourceArg::MobileDevice)]
    pub row_source: SourceArg,

    #[arg(long, value_enum, default_value_t = SourceArg::Hotline)]
    pub col_source: SourceArg,

    #[arg(long, value_enum, default_value_t = ModeArg::Product)]
    pub mode: ModeArg,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Generator config (JSON).
    #[arg(long)]
    pub config: PathBuf,

    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_)
            | Error::LagOutOfRange { .. }
            | Error::MissingSource(_)
            | Error::InvalidBinWidth(_)
            | Error::InvalidResolution { .. }
            | Error::InvalidWindow { .. }
            | Error::InvalidCategory(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command_line: Vec<String>,
    /// Digest of the effective parameters, excluding thread count and paths
    /// of outputs.
    pub config_digest: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

/// Window and counts stored next to an ingested dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub window: TimeWindow,
    pub records: usize,
    pub cells: usize,
    pub rejected: usize,
}

#[derive(Default)]
struct RunOutput {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<FileDigest>,
    warnings: Vec<String>,
    stdout: String,
}

impl RunOutput {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path, out: &mut RunOutput) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    out.inputs.push(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    });
    Ok(bytes)
}

fn parse_instant(raw: &str) -> CliResult<DateTime<Utc>> {
    if let Ok(ts) = parse_timestamp(raw) {
        return Ok(ts);
    }
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| CliError::usage(format!("invalid timestamp {raw:?}; expected RFC 3339 or YYYY-MM-DD")))
}

fn parse_window(raw: &[String]) -> CliResult<TimeWindow> {
    let start = parse_instant(&raw[0])?;
    let end = parse_instant(&raw[1])?;
    Ok(TimeWindow::new(start, end)?)
}

fn infer_format(path: &Path, explicit: Option<FormatArg>) -> InputFormat {
    if let Some(f) = explicit {
        return f.into();
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jsonl") | Some("ndjson") => InputFormat::JsonLines,
        _ => InputFormat::Csv,
    }
}

/// Load an event log or ingest archive, returning the cleaned dataset and
/// every rejected row.
fn load(args: &InputArgs, out: &mut RunOutput) -> CliResult<(EventDataset, Vec<RawRecordError>)> {
    let (data_path, format, stored_window, registry_path) = if args.input.is_dir() {
        let meta_path = args.input.join(DATASET_META);
        let meta: DatasetMeta = serde_json::from_slice(&read_input(&meta_path, out)?)
            .map_err(|e| CliError::data(format!("{}: {e}", meta_path.display())))?;
        let cells = args.cells.clone().or_else(|| Some(args.input.join(CELLS_CSV)).filter(|p| p.exists()));
        (args.input.join(DATASET_CSV), InputFormat::Csv, Some(meta.window), cells)
    } else {
        (args.input.clone(), infer_format(&args.input, args.format), None, args.cells.clone())
    };

    let bytes = read_input(&data_path, out)?;
    let parsed = parse_events(bytes.as_slice(), format)?;
    drop(bytes);
    let registry = match registry_path {
        Some(p) => Some(read_cell_registry(read_input(&p, out)?.as_slice())?),
        None => None,
    };
    let window = match (&args.window, stored_window) {
        (Some(raw), _) => parse_window(raw)?,
        (None, Some(w)) => w,
        (None, None) => day_window(parsed.records.iter().map(|r| r.reported_at)),
    };
    Ok(clean_parsed(parsed, window, registry.as_deref()))
}

fn category_set(names: &[String]) -> CliResult<Option<BTreeSet<CategoryId>>> {
    if names.is_empty() {
        return Ok(None);
    }
    Ok(Some(names.iter().map(CategoryId::new).collect::<Result<_, _>>()?))
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn cmd_ingest(args: &IngestArgs, out: &mut RunOutput) -> CliResult<()> {
    let (dataset, rejects) = load(&args.input, out)?;
    let meta = DatasetMeta {
        window: dataset.window(),
        records: dataset.len(),
        cells: dataset.cells().len(),
        rejected: dataset.rejected_count(),
    };
    out.add(DATASET_CSV, csv_bytes(|b| write_events_csv(dataset.records(), b))?);
    out.add_json(DATASET_META, &meta)?;
    out.add(REJECTS_CSV, csv_bytes(|b| write_rejects_csv(&rejects, b))?);
    let mut cells = csv::Writer::from_writer(Vec::new());
    cells.write_record(["cell_id", "latitude", "longitude"]).map_err(Error::from)?;
    for c in dataset.cells() {
        cells
            .write_record([c.cell_id.as_str(), &c.centroid_lat.to_string(), &c.centroid_lon.to_string()])
            .map_err(Error::from)?;
    }
    out.add(CELLS_CSV, cells.into_inner().map_err(|e| CliError::usage(e.to_string()))?);
    out.stdout = format!("ingested {} records into {} cells; {} rejected\n", meta.records, meta.cells, meta.rejected);
    Ok(())
}

fn cmd_summary(args: &InputArgs, out: &mut RunOutput) -> CliResult<()> {
    let (dataset, _) = load(args, out)?;
    let summary = summarize(&dataset);
    out.add_json("summary.json", &summary)?;
    out.add("summary.csv", csv_bytes(|b| summary.write_csv(b))?);
    out.stdout = summary.render_table();
    Ok(())
}

fn cmd_temporal(args: &TemporalArgs, out: &mut RunOutput) -> CliResult<()> {
    let (dataset, _) = load(&args.input, out)?;
    let categories = category_set(&args.category)?;
    let width = BinWidth::from(args.bin);
    let label = match &categories {
        Some(set) if set.len() == 1 => set.iter().next().cloned(),
        _ => None,
    };
    let trend = trend_series(&dataset, width, categories.as_ref(), label);
    let field = build_field(&dataset, width, categories.as_ref(), None);
    let max_lag = args.max_lag.unwrap_or(field.bin_count() / 2);
    let curve = global_temporal_relevance(&field, max_lag, args.normalize)?;
    if curve.degenerate {
        out.warn("temporal relevance curve is degenerate: no cell has a non-constant count series");
    }
    out.add("trend.csv", csv_bytes(|b| trend.write_csv(b))?);
    out.add_json("trend.json", &trend)?;
    out.add("temporal_relevance.csv", csv_bytes(|b| curve.write_csv(b))?);
    out.add_json("temporal_relevance.json", &curve)?;
    Ok(())
}

fn cmd_spatial(args: &SpatialArgs, out: &mut RunOutput) -> CliResult<()> {
    let (dataset, _) = load(&args.input, out)?;
    let categories = category_set(&args.category)?;
    let selected = match &categories {
        Some(set) => restrict(&dataset, |r| set.contains(&r.category)),
        None => dataset,
    };
    let (nx, ny) = (args.resolution[0], args.resolution[1]);
    let density = spatial_density(&selected, None, nx, ny)?;
    let field = build_field(&selected, args.bin.into(), None, None);
    let curve = global_spatial_relevance(&field, args.bin_width_m, args.max_dist_m, args.normalize)?;
    let occupied = (0..field.cell_count()).filter(|&i| field.row(i).iter().any(|&v| v > 0)).count();
    if occupied < 2 {
        out.warn(format!("only {occupied} occupied cell(s); spatial relevance has no cell pairs"));
    } else if curve.degenerate {
        out.warn("spatial relevance curve is degenerate: no cell pair contributes");
    }
    if density.is_degenerate() {
        out.warn("density grid is empty: no events selected");
    }
    out.add("density.csv", csv_bytes(|b| density.write_csv(b))?);
    out.add_json("density.json", &density)?;
    out.add("spatial_relevance.csv", csv_bytes(|b| curve.write_csv(b))?);
    out.add_json("spatial_relevance.json", &curve)?;
    Ok(())
}

fn cmd_categories(args: &CategoriesArgs, out: &mut RunOutput) -> CliResult<()> {
    let (dataset, _) = load(&args.input, out)?;
    let matrix = relevance_matrix(&dataset, args.row_source.into(), args.col_source.into(), args.mode.into())?;
    out.add("relevance_matrix.csv", csv_bytes(|b| matrix.write_csv(b))?);
    out.add_json("relevance_matrix.json", &matrix)?;
    if let Some((i, j)) = matrix.argmax() {
        out.stdout = format!("strongest pair: {} / {} (nmi {})\n", matrix.rows[i], matrix.cols[j], matrix.score(i, j));
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    rng: &'a str,
    records: usize,
    config: &'a GeneratorConfig,
}

fn cmd_synth(args: &SynthArgs, out: &mut RunOutput) -> CliResult<GeneratorConfig> {
    let text = read_input(&args.config, out)?;
    let text = String::from_utf8(text).map_err(|_| CliError::data("config is not valid UTF-8"))?;
    let mut config: GeneratorConfig =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("config: {e}")))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let records = generate_records(&config)?;
    out.add(DATASET_CSV, csv_bytes(|b| write_events_csv(&records, b))?);
    out.add_json("synth.json", &SynthMeta { rng: RNG_DESCRIPTION, records: records.len(), config: &config })?;
    out.stdout = format!("generated {} events\n", records.len());
    Ok(config)
}

fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::usage(format!("{} exists and is not a directory", dir.display())));
        }
        let occupied = fs::read_dir(dir).map_err(Error::from)?.next().is_some();
        if occupied && !force {
            return Err(CliError::usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(())
}

fn execute(cli: &Cli, command_line: Vec<String>) -> CliResult<String> {
    let started = Utc::now();
    // Refuse early so a long computation is not wasted on an occupied dir.
    if cli.out.exists() && !cli.force {
        prepare_out_dir(&cli.out, false)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))?;

    let mut out = RunOutput::default();
    let parameters = pool.install(|| -> CliResult<serde_json::Value> {
        let value = match &cli.command {
            Command::Ingest(a) => {
                cmd_ingest(a, &mut out)?;
                serde_json::json!({ "command": "ingest", "args": a })
            }
            Command::Summary(a) => {
                cmd_summary(a, &mut out)?;
                serde_json::json!({ "command": "summary", "args": a })
            }
            Command::Temporal(a) => {
                cmd_temporal(a, &mut out)?;
                serde_json::json!({ "command": "temporal", "args": a })
            }
            Command::Spatial(a) => {
                cmd_spatial(a, &mut out)?;
                serde_json::json!({ "command": "spatial", "args": a })
            }
            Command::Categories(a) => {
                cmd_categories(a, &mut out)?;
                serde_json::json!({ "command": "categories", "args": a })
            }
            Command::Synth(a) => {
                let config = cmd_synth(a, &mut out)?;
                serde_json::json!({ "command": "synth", "config": config })
            }
        };
        Ok(value)
    })?;

    prepare_out_dir(&cli.out, cli.force)?;
    let mut outputs = Vec::with_capacity(out.files.len());
    for (name, bytes) in &out.files {
        fs::write(cli.out.join(name), bytes).map_err(Error::from)?;
        outputs.push(FileDigest { path: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command_line,
        config_digest: sha256_hex(parameters.to_string().as_bytes()),
        parameters,
        inputs: out.inputs,
        started_at: format_timestamp(started),
        finished_at: format_timestamp(Utc::now()),
        outputs,
        warnings: out.warnings,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(cli.out.join(MANIFEST_FILE), bytes).map_err(Error::from)?;
    Ok(out.stdout)
}

/// Run the CLI over `args` (including the program name) and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let command_line = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, command_line) {
        Ok(stdout) => {
            print!("{stdout}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
