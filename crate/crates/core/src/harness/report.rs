//! Flat metric documents: JSON object, CSV row, aligned text.

use std::fmt::Write as _;
use std::io;

use serde_json::{Map, Value};

use crate::machine::FaultKind;

use super::corpus::{CorpusResult, CorpusSummary};
use super::run::Metrics;

fn snake(name: &str) -> String {
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

/// Column names in output order.
pub fn metric_header() -> Vec<String> {
    metric_columns(&Metrics::zero(crate::config::SchemeKind::None))
        .into_iter()
        .map(|(k, _)| k)
        .collect()
}

/// `(name, value)` pairs in output order. The digest is a hex string so it
/// survives JSON consumers that read numbers as doubles.
pub fn metric_columns(m: &Metrics) -> Vec<(String, Value)> {
    let mut cols: Vec<(String, Value)> = vec![
        ("scheme".into(), m.scheme.name().into()),
        ("ops".into(), m.ops.into()),
        ("allocations".into(), m.allocations.into()),
        ("frees".into(), m.frees.into()),
        ("live_allocations".into(), m.live_allocations.into()),
        ("alloc_failures".into(), m.alloc_failures.into()),
        ("revocations".into(), m.revocations.into()),
        ("swept_tags".into(), m.swept_tags.into()),
        ("revoked_caps".into(), m.revoked_caps.into()),
        ("reclaimed".into(), m.reclaimed.into()),
    ];
    for k in FaultKind::ALL {
        cols.push((format!("fault_{}", snake(k.name())), m.faults.get(k).into()));
    }
    cols.extend([
        ("faults_total".into(), m.faults.total().into()),
        ("violations".into(), m.violations.into()),
        ("detected".into(), m.detected.into()),
        ("uaf_escapes".into(), m.uaf_escapes.into()),
        ("df_escapes".into(), m.df_escapes.into()),
        ("false_positives".into(), m.false_positives.into()),
        ("expectation_mismatches".into(), m.expectation_mismatches.into()),
        ("peak_resident_bytes".into(), m.peak_resident_bytes.into()),
        ("peak_live_bytes".into(), m.peak_live_bytes.into()),
        ("peak_quarantine_bytes".into(), m.peak_quarantine_bytes.into()),
        ("peak_metadata_bytes".into(), m.peak_metadata_bytes.into()),
        ("pvt_lookups".into(), m.pvt_lookups.into()),
        ("pvt_buffer_hits".into(), m.pvt_buffer_hits.into()),
        ("pvt_buffer_misses".into(), m.pvt_buffer_misses.into()),
        ("pvt_buffer_invalidations".into(), m.pvt_buffer_invalidations.into()),
        ("data_digest".into(), format!("{:016x}", m.data_digest).into()),
    ]);
    cols
}

pub fn metrics_json(m: &Metrics) -> Value {
    Value::Object(metric_columns(m).into_iter().collect::<Map<_, _>>())
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One CSV row per run, preceded by the header.
pub fn write_metrics_csv<W: io::Write>(rows: &[Metrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metric_header())?;
    for m in rows {
        w.write_record(metric_columns(m).iter().map(|(_, v)| cell(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_human(m: &Metrics) -> String {
    let cols = metric_columns(m);
    let width = cols.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in cols {
        let _ = writeln!(out, "{k:<width$}  {}", cell(&v));
    }
    out
}

pub const CORPUS_HEADER: [&str; 7] =
    ["scheme", "case", "category", "variant", "result", "first_fault", "expectations_met"];

/// Detection matrix, one row per (scheme, case).
pub fn write_corpus_csv<W: io::Write>(results: &[CorpusResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CORPUS_HEADER)?;
    for r in results {
        w.write_record([
            r.scheme.name().to_string(),
            r.case.clone(),
            r.category.to_string(),
            r.variant.to_string(),
            r.detection.to_string(),
            r.fault.map_or_else(String::new, |k| k.name().to_string()),
            r.expectations_met.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn corpus_summary_human(rows: &[CorpusSummary]) -> String {
    let mut out = format!(
        "{:<16} {:>9} {:>9} {:>15}\n",
        "scheme", "UAF", "DF", "false-positives"
    );
    for s in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>15}",
            s.scheme.name(),
            format!("{}/{}", s.detected_uaf, s.bad_uaf),
            format!("{}/{}", s.detected_df, s.bad_df),
            format!("{}/{}", s.false_positives, s.good),
        );
    }
    out
}

pub fn corpus_summary_json(rows: &[CorpusSummary]) -> Value {
    Value::Array(
        rows.iter()
            .map(|s| {
                serde_json::json!({
                    "scheme": s.scheme.name(),
                    "bad_uaf": s.bad_uaf,
                    "detected_uaf": s.detected_uaf,
                    "bad_df": s.bad_df,
                    "detected_df": s.detected_df,
                    "good": s.good,
                    "false_positives": s.false_positives,
                })
            })
            .collect(),
    )
}
