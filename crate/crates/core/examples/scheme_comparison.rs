//! The same churn workload under every scheme.
//!
//! cargo run --release --example scheme_comparison [pairs]

use colorcap::config::{RunConfig, SchemeKind};
use colorcap::harness::report::write_metrics_csv;
use colorcap::harness::{run_ops, ChurnConfig};

fn main() {
    let pairs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100_000);
    let churn = ChurnConfig { sizes: vec![32, 64, 256], stale: 4, ..ChurnConfig::new(pairs, 200, 11) };
    let mut rows = Vec::new();
    for scheme in SchemeKind::ALL {
        let cfg = RunConfig { color_bits: 14, ..RunConfig::for_scheme(scheme) };
        let m = run_ops(churn.ops(), &cfg).unwrap();
        eprintln!(
            "{:<15} revocations={:<7} swept_tags={:<10} peak_resident={}",
            scheme.name(),
            m.revocations,
            m.swept_tags,
            m.peak_resident_bytes
        );
        rows.push(m);
    }
    write_metrics_csv(&rows, std::io::stdout()).unwrap();
}
