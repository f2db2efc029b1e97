//! A 4-bit version per granule runs out after 16 reuses. Without the
//! sweep fallback a stale pointer from 16 generations back matches again.
//!
//! cargo run --example versioning_wrap

use colorcap::config::{RunConfig, SchemeKind};
use colorcap::harness::{run_trace, Trace, TraceOp};

fn main() {
    let mut t = Trace::new();
    t.push(TraceOp::Malloc { reg: 0, size: 32 });
    t.push(TraceOp::Spill { reg: 0, slot: 0 });
    for _ in 0..16 {
        t.push(TraceOp::Free { reg: 0 });
        t.push(TraceOp::Malloc { reg: 0, size: 32 });
    }
    t.push(TraceOp::Reload { reg: 1, slot: 0 });
    t.push(TraceOp::Read { reg: 1, offset: 0, width: 8 });

    for fallback in [false, true] {
        let cfg = RunConfig { version_fallback: fallback, ..RunConfig::for_scheme(SchemeKind::Versioning) };
        let r = run_trace(&t, &cfg).unwrap();
        let last = r.records.last().unwrap();
        println!(
            "fallback={fallback:<5} stale read -> {:<24} escapes={} sweeps={}",
            last.outcome.to_string(),
            r.metrics.escapes(),
            r.metrics.revocations
        );
    }
    let p = run_trace(&t, &RunConfig::default()).unwrap();
    println!("picasso          stale read -> {}", p.records.last().unwrap().outcome);
}
