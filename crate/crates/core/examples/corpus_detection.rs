//! Bad/good use-after-free and double-free pairs under every scheme.
//!
//! cargo run --example corpus_detection

use colorcap::config::{RunConfig, SchemeKind};
use colorcap::harness::report::corpus_summary_human;
use colorcap::harness::{gen_corpus, run_corpus, summarize, Detection};

fn main() {
    let cases = gen_corpus();
    println!("{} cases, for example:\n{}", cases.len(), cases[0].trace);
    let results = run_corpus(&cases, &SchemeKind::ALL, &RunConfig::default()).unwrap();
    let rows: Vec<_> = SchemeKind::ALL.iter().map(|&s| summarize(&results, s)).collect();
    print!("{}", corpus_summary_human(&rows));

    let escaped: Vec<_> = results
        .iter()
        .filter(|r| r.scheme == SchemeKind::Cornucopia && r.detection == Detection::Escaped)
        .map(|r| r.case.as_str())
        .take(5)
        .collect();
    println!("cornucopia escapes include {escaped:?}");
}
