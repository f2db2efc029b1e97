//! Replays a trace file op by op and prints what each scheme did.
//!
//! cargo run --example trace_replay [file.trace]

use colorcap::config::{RunConfig, SchemeKind};
use colorcap::harness::{parse_trace, run_trace};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/traces/bad_uaf.trace").into());
    let text = std::fs::read_to_string(&path).unwrap();
    let trace = parse_trace(&text).unwrap_or_else(|e| panic!("{path}: {e}"));

    print!("{:<28}", "op");
    for s in SchemeKind::ALL {
        print!("{:<27}", s.name());
    }
    println!();
    let runs: Vec<_> = SchemeKind::ALL
        .iter()
        .map(|&s| run_trace(&trace, &RunConfig::for_scheme(s)).unwrap())
        .collect();
    for (i, line) in trace.lines.iter().enumerate() {
        print!("{:<28}", line.op.to_string());
        for r in &runs {
            print!("{:<27}", r.records[i].outcome.to_string());
        }
        println!();
    }
    for r in &runs {
        println!(
            "{:<15} escapes={} mismatches={}",
            r.metrics.scheme.name(),
            r.metrics.escapes(),
            r.metrics.expectation_mismatches
        );
    }
}
