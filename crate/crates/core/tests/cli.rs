//! The `colorcap` binary: exit codes and output schemas.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_colorcap");
const METRICS_HEADER: &str = include_str!("golden/metrics_header.csv");
const CORPUS_HEADER: &str = include_str!("golden/corpus_header.csv");

fn colorcap(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("COLORCAP_OUT_DIR").output().unwrap()
}

fn traces() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/traces"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_generator_prints_json() {
    let o = colorcap(&["run", "--scheme", "picasso", "--gen", "churn:n=1000,live=10,seed=1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.join(","), METRICS_HEADER.trim_end());
    assert_eq!(v["scheme"], "picasso");
    assert_eq!(v["frees"], 1000);
    assert_eq!(v["allocations"], 1010);
}

#[test]
fn run_trace_exit_follows_expectations() {
    let bad = traces().join("bad_uaf.trace");
    let bad = bad.to_str().unwrap();
    let o = colorcap(&["run", "--scheme", "picasso", "--trace", bad]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"fault_provenance_retracted\": 1"));
    let o = colorcap(&["run", "--scheme", "cornucopia", "--trace", bad]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn errors_exit_two() {
    assert_eq!(colorcap(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(colorcap(&["run", "--gen", "churn:n=5", "--color-bits", "40"]).status.code(), Some(2));
    assert_eq!(colorcap(&["run", "--gen", "wobble"]).status.code(), Some(2));
    assert_eq!(colorcap(&["run", "--trace", "/nonexistent.trace"]).status.code(), Some(2));
    assert_eq!(colorcap(&["compare", "--schemes", "picasso,nope", "--gen", "churn"]).status.code(), Some(2));
    let o = colorcap(&["run", "--trace", "-", "--gen", "churn"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn compare_rows_and_header() {
    let o = colorcap(&["compare", "--schemes", "none,picasso", "--gen", "churn:n=200,live=20,seed=4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER.trim_end());
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("picasso,") && lines[2].starts_with("none,"));
}

#[test]
fn compare_empty_trace_gives_zero_rows() {
    let dir = std::env::temp_dir().join(format!("colorcap-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let empty = dir.join("empty.trace");
    std::fs::write(&empty, "# nothing\n").unwrap();
    let o = colorcap(&["compare", "--trace", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let mut cells = row.split(',');
        cells.next();
        assert!(cells.all(|c| c.chars().all(|ch| ch == '0')), "{row}");
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn single_scheme_compare_equals_run() {
    let gen = "churn:n=300,live=12,seed=2";
    let cmp = stdout(&colorcap(&["compare", "--schemes", "versioning", "--gen", gen]));
    let run = stdout(&colorcap(&["run", "--scheme", "versioning", "--gen", gen, "--format", "csv"]));
    assert_eq!(cmp, run);
}

#[test]
fn corpus_writes_matrix_to_out_dir() {
    let dir = std::env::temp_dir().join(format!("colorcap-corpus-{}", std::process::id()));
    let o = Command::new(BIN)
        .args(["corpus", "--schemes", "picasso,cornucopia"])
        .env("COLORCAP_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("picasso"));
    let matrix = std::fs::read_to_string(dir.join("corpus_matrix.csv")).unwrap();
    assert_eq!(matrix.lines().next().unwrap(), CORPUS_HEADER.trim_end());
    assert_eq!(matrix.lines().count(), 1 + 2 * 90);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn corpus_always_includes_picasso() {
    // The exit status is decided by picasso, so it runs even when not asked for.
    let o = colorcap(&["corpus", "--schemes", "none", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let schemes: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["scheme"].as_str().unwrap()).collect();
    assert_eq!(schemes, ["picasso", "none"]);
}
