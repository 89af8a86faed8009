use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const HEADER: &str = "event_id,cell_id,source,category,reported_at,resolved_at,latitude,longitude,priority,description";

fn urbangrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbangrid")).args(args).output().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn out(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn events(rows: &[&str]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

const GOOD: [&str; 3] = [
    "e1,c1,MobileDevice,Greening,2015-01-01T08:00:00+08:00,,31.20,121.50,2,",
    "e2,c1,Hotline,Housing,2015-01-02T10:00:00Z,2015-01-03T10:00:00Z,31.20,121.50,,\"noise, at night\"",
    "e3,c2,MobileDevice,Street Order,2015-01-05T00:00:00Z,,31.25,121.55,1,",
];

#[test]
fn ingest_writes_archive_and_manifest() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.csv", &events(&GOOD));
    let o = out(&dir, "run");
    let r =
        urbangrid(&["--out", o.to_str().unwrap(), "ingest", "--input", &input, "--window", "2015-01-01", "2015-02-01"]);
    assert!(r.status.success(), "{}", stderr(&r));

    let meta = json(&o.join("dataset.json"));
    assert_eq!(meta["records"], 3);
    assert_eq!(meta["cells"], 2);
    assert_eq!(meta["rejected"], 0);
    assert_eq!(fs::read_to_string(o.join("rejects.csv")).unwrap().lines().count(), 1);

    let manifest = json(&o.join("manifest.json"));
    let outputs: Vec<&str> =
        manifest["outputs"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(outputs, ["dataset.csv", "dataset.json", "rejects.csv", "cells.csv"]);
    assert_eq!(manifest["inputs"][0]["path"], input.as_str());
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["started_at"].as_str().unwrap().ends_with('Z'));
    assert_eq!(manifest["command_line"][3], "ingest");
}

#[test]
fn ingest_reports_bad_rows() {
    let dir = TempDir::new().unwrap();
    let mut rows = GOOD.to_vec();
    rows.push("e4,c1,MobileDevice,Greening,2015-01-01T00:00:00Z,,95.0,121.5,,");
    rows.push("e1,c1,MobileDevice,Greening,2015-01-01T00:00:00Z,,31.2,121.5,,");
    let input = write(&dir, "in.csv", &events(&rows));
    let o = out(&dir, "run");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "ingest", "--input", &input]);
    assert!(r.status.success(), "{}", stderr(&r));
    let rejects = fs::read_to_string(o.join("rejects.csv")).unwrap();
    let lines: Vec<&str> = rejects.lines().collect();
    assert_eq!(lines.len(), 3, "{rejects}");
    assert!(lines[1].starts_with("5,BadCoordinate"));
    assert!(lines[2].starts_with("6,DuplicateId"));
    assert_eq!(json(&o.join("dataset.json"))["rejected"], 2);
}

#[test]
fn missing_input_is_an_io_error_without_output() {
    let dir = TempDir::new().unwrap();
    let o = out(&dir, "run");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "ingest", "--input", "/nonexistent/events.csv"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!o.exists());
}

#[test]
fn missing_column_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.csv", "event_id,cell_id\ne1,c1\n");
    let r = urbangrid(&["--out", out(&dir, "run").to_str().unwrap(), "ingest", "--input", &input]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn bad_flags_are_usage_errors() {
    let r = urbangrid(&["temporal", "--input", "x.csv", "--bin", "month"]);
    assert_eq!(r.status.code(), Some(2));
    let r = urbangrid(&["frobnicate"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn output_directory_requires_force() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.csv", &events(&GOOD));
    let o = out(&dir, "run");
    let o = o.to_str().unwrap();
    assert!(urbangrid(&["--out", o, "summary", "--input", &input]).status.success());
    let again = urbangrid(&["--out", o, "summary", "--input", &input]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));
    assert!(urbangrid(&["--out", o, "--force", "summary", "--input", &input]).status.success());
}

#[test]
fn summary_reports() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.csv", &events(&[]));
    let o = out(&dir, "empty");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "summary", "--input", &empty]);
    assert!(r.status.success(), "{}", stderr(&r));
    let s = json(&o.join("summary.json"));
    assert_eq!(s["total"], 0);
    assert!(s["rows"].as_array().unwrap().is_empty());

    let single = write(&dir, "one.csv", &events(&[GOOD[0]]));
    let o = out(&dir, "one");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "summary", "--input", &single]);
    assert!(r.status.success());
    let s = json(&o.join("summary.json"));
    assert_eq!(s["rows"].as_array().unwrap().len(), 1);
    assert_eq!(s["rows"][0]["percent_of_total"], 100.0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("100.0"));
}

#[test]
fn jsonl_input_matches_csv() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "in.csv", &events(&GOOD));
    let jsonl = write(
        &dir,
        "in.jsonl",
        concat!(
            r#"{"event_id":"e1","cell_id":"c1","source":"MobileDevice","category":"Greening","reported_at":"2015-01-01T08:00:00+08:00","latitude":31.2,"longitude":121.5,"priority":2}"#,
            "\n",
            r#"{"event_id":"e2","cell_id":"c1","source":"Hotline","category":"Housing","reported_at":"2015-01-02T10:00:00Z","resolved_at":"2015-01-03T10:00:00Z","latitude":31.2,"longitude":121.5,"description":"noise, at night"}"#,
            "\n\n",
            r#"{"event_id":"e3","cell_id":"c2","source":"MobileDevice","category":"Street Order","reported_at":"2015-01-05T00:00:00Z","latitude":31.25,"longitude":121.55,"priority":1}"#,
            "\n"
        ),
    );
    let (a, b) = (out(&dir, "a"), out(&dir, "b"));
    assert!(urbangrid(&["--out", a.to_str().unwrap(), "ingest", "--input", &csv]).status.success());
    assert!(urbangrid(&["--out", b.to_str().unwrap(), "ingest", "--input", &jsonl]).status.success());
    for f in ["dataset.csv", "dataset.json", "cells.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn temporal_lag_bounds_and_degenerate_warning() {
    let dir = TempDir::new().unwrap();
    // One event per day in one cell: a constant series.
    let rows: Vec<String> =
        (1..=9).map(|d| format!("e{d},c1,MobileDevice,Greening,2015-01-0{d}T12:00:00Z,,31.2,121.5,,")).collect();
    let input = write(&dir, "flat.csv", &events(&rows.iter().map(String::as_str).collect::<Vec<_>>()));

    let r = urbangrid(&[
        "--out",
        out(&dir, "a").to_str().unwrap(),
        "temporal",
        "--input",
        &input,
        "--bin",
        "day",
        "--max-lag",
        "9",
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", stderr(&r));

    let o = out(&dir, "b");
    let r = urbangrid(&[
        "--out",
        o.to_str().unwrap(),
        "temporal",
        "--input",
        &input,
        "--bin",
        "day",
        "--max-lag",
        "3",
        "--normalize",
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stderr(&r).contains("degenerate"));
    let curve = json(&o.join("temporal_relevance.json"));
    assert_eq!(curve["degenerate"], true);
    assert!(curve["points"].as_array().unwrap().iter().all(|p| p["score"].is_null()));
    let text = fs::read_to_string(o.join("temporal_relevance.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "0,null,0");
    assert_eq!(json(&o.join("manifest.json"))["warnings"].as_array().unwrap().len(), 1);
    let trend = fs::read_to_string(o.join("trend.csv")).unwrap();
    assert_eq!(trend.lines().count(), 10);
}

#[test]
fn spatial_single_cell_warns_and_reports_missing_bins() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.csv", &events(&GOOD[..2]));
    let o = out(&dir, "run");
    let r = urbangrid(&[
        "--out",
        o.to_str().unwrap(),
        "spatial",
        "--input",
        &input,
        "--bin",
        "day",
        "--resolution",
        "4",
        "3",
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stderr(&r).contains("warning"));
    let curve = json(&o.join("spatial_relevance.json"));
    assert_eq!(curve["points"].as_array().unwrap().len(), 30);
    assert!(curve["points"].as_array().unwrap().iter().all(|p| p["score"].is_null()));
    let density = json(&o.join("density.json"));
    assert_eq!(density["values"].as_array().unwrap().len(), 12);
    let csv = fs::read_to_string(o.join("spatial_relevance.csv")).unwrap();
    assert!(csv.starts_with("distance_m,lower_m,upper_m,distance_10km,score,support\n500,0,1000,0.05,null,0\n"));
}

#[test]
fn categories_need_both_sources() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "in.csv", &events(&[GOOD[0], GOOD[2]]));
    let r = urbangrid(&["--out", out(&dir, "a").to_str().unwrap(), "categories", "--input", &input]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("Hotline"));

    let input = write(&dir, "both.csv", &events(&GOOD));
    let o = out(&dir, "b");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "categories", "--input", &input, "--mode", "min"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let m = json(&o.join("relevance_matrix.json"));
    assert_eq!(m["mode"], "MinCount");
    assert_eq!(fs::read_to_string(o.join("relevance_matrix.csv")).unwrap().lines().count(), 3);
}

fn small_config(dir: &TempDir, n: usize) -> String {
    write(
        dir,
        "config.json",
        &format!(
            r#"{{
  "seed": 99, "n_events": {n},
  "window": {{"start": "2015-01-01T00:00:00Z", "end": "2015-03-01T00:00:00Z"}},
  "source_mix": 0.79,
  "categories": [
    {{"name": "Environment", "weight": 3, "source": "MobileDevice"}},
    {{"name": "Housing", "weight": 1, "source": "Hotline"}}
  ],
  "hotspots": [{{"lat": 31.23, "lon": 121.47, "sigma_m": 800, "weight": 1}}]
}}"#
        ),
    )
}

#[test]
fn synth_is_reproducible_and_validated() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir, 5_000);
    let (a, b) = (out(&dir, "a"), out(&dir, "b"));
    assert!(urbangrid(&["--out", a.to_str().unwrap(), "synth", "--config", &config]).status.success());
    assert!(urbangrid(&["--out", b.to_str().unwrap(), "--threads", "3", "synth", "--config", &config])
        .status
        .success());
    assert_eq!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
    let text = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 5_001);
    assert_eq!(text.lines().next().unwrap(), HEADER);
    assert!(json(&a.join("synth.json"))["rng"].as_str().unwrap().contains("ChaCha8"));
    assert_eq!(json(&a.join("manifest.json"))["config_digest"], json(&b.join("manifest.json"))["config_digest"]);

    let c = out(&dir, "c");
    assert!(urbangrid(&["--out", c.to_str().unwrap(), "synth", "--config", &config, "--seed", "100"]).status.success());
    assert_ne!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(c.join("dataset.csv")).unwrap());

    let zero = small_config(&dir, 0);
    let r = urbangrid(&["--out", out(&dir, "d").to_str().unwrap(), "synth", "--config", &zero]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stderr(&r).contains("n_events"));
}

#[test]
fn synth_at_reference_scale_writes_every_row() {
    let dir = TempDir::new().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference.json");
    let o = out(&dir, "run");
    let r = urbangrid(&["--out", o.to_str().unwrap(), "synth", "--config", config.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    let bytes = fs::read(o.join("dataset.csv")).unwrap();
    let rows = bytes.iter().filter(|&&b| b == b'\n').count() - 1;
    assert_eq!(rows, 1_131_423);
}

#[test]
fn analyses_accept_an_ingest_archive() {
    let dir = TempDir::new().unwrap();
    let config = small_config(&dir, 3_000);
    let s = out(&dir, "synth");
    assert!(urbangrid(&["--out", s.to_str().unwrap(), "synth", "--config", &config]).status.success());
    let archive = out(&dir, "ingest");
    let data = s.join("dataset.csv");
    assert!(urbangrid(&["--out", archive.to_str().unwrap(), "ingest", "--input", data.to_str().unwrap()])
        .status
        .success());

    // Reading the archive and the raw file with the archive's window agree.
    let window: Value = json(&archive.join("dataset.json"))["window"].clone();
    let (start, end) = (window["start"].as_str().unwrap(), window["end"].as_str().unwrap());
    let (a, b) = (out(&dir, "a"), out(&dir, "b"));
    let r =
        urbangrid(&["--out", a.to_str().unwrap(), "temporal", "--input", archive.to_str().unwrap(), "--bin", "day"]);
    assert!(r.status.success(), "{}", stderr(&r));
    let r = urbangrid(&[
        "--out",
        b.to_str().unwrap(),
        "temporal",
        "--input",
        data.to_str().unwrap(),
        "--bin",
        "day",
        "--window",
        start,
        end,
    ]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(
        fs::read(a.join("temporal_relevance.csv")).unwrap(),
        fs::read(b.join("temporal_relevance.csv")).unwrap()
    );
}
