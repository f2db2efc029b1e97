//! Hand-built use-after-free and double-free cases.
//!
//! These reproduce the behavioral patterns of the CWE-415 and CWE-416
//! families as traces: a behavioral analogue, not the C test suite. Every
//! pattern comes in five variants (block size, unrelated allocations,
//! spill slot, access offset) and each variant as a bad/good pair that
//! differs only in the offending op. Expectations are written for the
//! colored-capability scheme.

use std::fmt;

use crate::config::{ConfigError, RunConfig, SchemeKind};
use crate::machine::FaultKind;

use super::run::{run_trace, Metrics};
use super::trace::{Expectation, Trace, TraceOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Use after free (CWE-416).
    Uaf,
    /// Double or otherwise invalid free (CWE-415).
    Df,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Good,
    Bad,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Uaf => "UAF",
            Category::Df => "DF",
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Good => "good",
            Variant::Bad => "bad",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusCase {
    /// `<variant>:<pattern>-<n>`, e.g. `bad:uaf-spilled-2`.
    pub name: String,
    pub pattern: &'static str,
    pub category: Category,
    pub variant: Variant,
    pub trace: Trace,
    /// The fault a bad case raises under colored capabilities.
    pub expected: Option<FaultKind>,
}

pub const PATTERNS: [(&str, Category); 9] = [
    ("uaf-read", Category::Uaf),
    ("uaf-write", Category::Uaf),
    ("uaf-spilled", Category::Uaf),
    ("uaf-regcopy", Category::Uaf),
    ("uar-same-address", Category::Uaf),
    ("df-direct", Category::Df),
    ("df-copy", Category::Df),
    ("free-interior", Category::Df),
    ("free-uncolored", Category::Df),
];

pub const VARIANTS: usize = 5;

const SIZES: [u64; VARIANTS] = [16, 48, 64, 256, 1024];

struct Builder {
    trace: Trace,
    bad: bool,
    expected: Option<FaultKind>,
}

impl Builder {
    fn op(&mut self, op: TraceOp) {
        self.trace.push(op);
    }

    /// The offending op of a bad case, or its benign twin in a good case.
    fn pick(&mut self, bad: TraceOp, good: TraceOp, fault: FaultKind) {
        if self.bad {
            self.expected = Some(fault);
            self.trace.push_expect(bad, Expectation::Fault(fault));
        } else {
            self.trace.push_expect(good, Expectation::Ok);
        }
    }
}

fn build(pattern: &str, n: usize, bad: bool) -> Builder {
    use TraceOp::*;
    let size = SIZES[n];
    let off = if n % 2 == 1 { size - 8 } else { 0 };
    let slot = 3 * n as u32 + 1;
    let mut b = Builder { trace: Trace::new(), bad, expected: None };
    for i in 0..n as u8 {
        b.op(Malloc { reg: 10 + i, size: 32 });
        b.op(Write { reg: 10 + i, offset: 0, width: 8 });
    }
    let pr = FaultKind::ProvenanceRetracted;
    match pattern {
        "uaf-read" | "uaf-write" => {
            b.op(Malloc { reg: 5, size });
            b.op(Malloc { reg: 0, size });
            b.op(Write { reg: 0, offset: 0, width: 8 });
            b.op(Free { reg: 0 });
            if pattern == "uaf-read" {
                b.pick(Read { reg: 0, offset: off, width: 8 }, Read { reg: 5, offset: off, width: 8 }, pr);
            } else {
                b.pick(Write { reg: 0, offset: off, width: 8 }, Write { reg: 5, offset: off, width: 8 }, pr);
            }
            b.op(Free { reg: 5 });
        }
        "uaf-spilled" => {
            b.op(Malloc { reg: 0, size });
            b.op(Write { reg: 0, offset: 0, width: 8 });
            b.op(Spill { reg: 0, slot });
            b.op(Free { reg: 0 });
            b.op(Malloc { reg: 0, size });
            b.op(Spill { reg: 0, slot: slot + 1 });
            b.op(if bad { Reload { reg: 1, slot } } else { Reload { reg: 1, slot: slot + 1 } });
            b.pick(Read { reg: 1, offset: off, width: 8 }, Read { reg: 1, offset: off, width: 8 }, pr);
            b.op(Free { reg: 0 });
        }
        "uaf-regcopy" => {
            b.op(Malloc { reg: 5, size });
            b.op(Malloc { reg: 0, size });
            b.op(Copy { dst: 1, src: 0 });
            b.op(Free { reg: 0 });
            b.pick(Read { reg: 1, offset: off, width: 8 }, Read { reg: 5, offset: off, width: 8 }, pr);
            b.op(Free { reg: 5 });
        }
        "uar-same-address" => {
            b.op(Malloc { reg: 0, size });
            b.op(Write { reg: 0, offset: 0, width: 8 });
            b.op(Free { reg: 0 });
            b.op(Malloc { reg: 1, size });
            b.op(Write { reg: 1, offset: off, width: 8 });
            b.pick(Read { reg: 0, offset: off, width: 8 }, Read { reg: 1, offset: off, width: 8 }, pr);
            b.op(Free { reg: 1 });
        }
        "df-direct" => {
            b.op(Malloc { reg: 5, size });
            b.op(Malloc { reg: 0, size });
            b.op(Write { reg: 0, offset: 0, width: 8 });
            b.op(Free { reg: 0 });
            b.pick(Free { reg: 0 }, Free { reg: 5 }, FaultKind::DoubleFree);
        }
        "df-copy" => {
            b.op(Malloc { reg: 5, size });
            b.op(Malloc { reg: 0, size });
            b.op(Copy { dst: 1, src: 0 });
            b.op(Free { reg: 0 });
            b.pick(Free { reg: 1 }, Free { reg: 5 }, FaultKind::DoubleFree);
        }
        "free-interior" => {
            let size = size.max(32);
            b.op(Malloc { reg: 0, size });
            b.op(Derive { dst: 1, src: 0, offset: 16, len: 16 });
            b.op(Read { reg: 1, offset: 0, width: 8 });
            b.pick(Free { reg: 1 }, Free { reg: 0 }, FaultKind::MalformedFree);
        }
        "free-uncolored" => {
            b.op(Malloc { reg: 0, size });
            b.op(Stack { reg: 1, size });
            b.op(Write { reg: 1, offset: off, width: 8 });
            b.pick(Free { reg: 1 }, Free { reg: 0 }, FaultKind::MalformedFree);
        }
        _ => unreachable!("unknown pattern {pattern}"),
    }
    b
}

/// Every case: for each pattern and variant, the bad case then the good.
pub fn gen_corpus() -> Vec<CorpusCase> {
    let mut out = Vec::new();
    for (pattern, category) in PATTERNS {
        for n in 0..VARIANTS {
            for variant in [Variant::Bad, Variant::Good] {
                let b = build(pattern, n, variant == Variant::Bad);
                out.push(CorpusCase {
                    name: format!("{variant}:{pattern}-{n}"),
                    pattern,
                    category,
                    variant,
                    trace: b.trace,
                    expected: b.expected,
                });
            }
        }
    }
    out
}

/// How one case fared under one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detection {
    Detected,
    Escaped,
    FalsePositive,
    Clean,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detection::Detected => "detected",
            Detection::Escaped => "escaped",
            Detection::FalsePositive => "false-positive",
            Detection::Clean => "clean",
        })
    }
}

/// One cell of the detection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusResult {
    pub case: String,
    pub category: Category,
    pub variant: Variant,
    pub scheme: SchemeKind,
    pub detection: Detection,
    /// First fault raised, if any.
    pub fault: Option<FaultKind>,
    /// Whether the case's own expectations held; only meaningful for the
    /// scheme they were written for.
    pub expectations_met: bool,
}

pub fn classify(case: &CorpusCase, metrics: &Metrics) -> Detection {
    match case.variant {
        Variant::Bad if metrics.violations > 0 && metrics.escapes() == 0 => Detection::Detected,
        Variant::Bad => Detection::Escaped,
        Variant::Good if metrics.faults.total() > 0 => Detection::FalsePositive,
        Variant::Good => Detection::Clean,
    }
}

/// Runs every case under every scheme. `base` supplies all settings except
/// the scheme. Results are sorted by scheme, then case name.
pub fn run_corpus(
    cases: &[CorpusCase],
    schemes: &[SchemeKind],
    base: &RunConfig,
) -> Result<Vec<CorpusResult>, ConfigError> {
    let mut out = Vec::with_capacity(cases.len() * schemes.len());
    for &scheme in schemes {
        let cfg = RunConfig { scheme, ..base.clone() };
        for case in cases {
            let r = run_trace(&case.trace, &cfg)?;
            out.push(CorpusResult {
                case: case.name.clone(),
                category: case.category,
                variant: case.variant,
                scheme,
                detection: classify(case, &r.metrics),
                fault: r.records.iter().find_map(|x| x.outcome.fault_kind()),
                expectations_met: r.metrics.expectation_mismatches == 0,
            });
        }
    }
    out.sort_by(|a, b| (a.scheme, &a.case).cmp(&(b.scheme, &b.case)));
    Ok(out)
}

/// Per-scheme totals of the detection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub scheme: SchemeKind,
    pub bad_uaf: usize,
    pub detected_uaf: usize,
    pub bad_df: usize,
    pub detected_df: usize,
    pub good: usize,
    pub false_positives: usize,
}

impl CorpusSummary {
    pub fn all_detected(&self) -> bool {
        self.detected_uaf == self.bad_uaf && self.detected_df == self.bad_df
    }
}

pub fn summarize(results: &[CorpusResult], scheme: SchemeKind) -> CorpusSummary {
    let mut s = CorpusSummary {
        scheme,
        bad_uaf: 0,
        detected_uaf: 0,
        bad_df: 0,
        detected_df: 0,
        good: 0,
        false_positives: 0,
    };
    for r in results.iter().filter(|r| r.scheme == scheme) {
        let hit = r.detection == Detection::Detected;
        match (r.variant, r.category) {
            (Variant::Bad, Category::Uaf) => {
                s.bad_uaf += 1;
                s.detected_uaf += usize::from(hit);
            }
            (Variant::Bad, Category::Df) => {
                s.bad_df += 1;
                s.detected_df += usize::from(hit);
            }
            (Variant::Good, _) => {
                s.good += 1;
                s.false_positives += usize::from(r.detection == Detection::FalsePositive);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_differ_only_in_offending_ops() {
        let cases = gen_corpus();
        assert_eq!(cases.len(), 2 * PATTERNS.len() * VARIANTS);
        for pair in cases.chunks(2) {
            let (bad, good) = (&pair[0], &pair[1]);
            assert_eq!(bad.variant, Variant::Bad);
            assert_eq!(bad.trace.len(), good.trace.len());
            let differing = bad.trace.lines.iter().zip(&good.trace.lines).filter(|(a, b)| a.op != b.op).count();
            assert!((1..=2).contains(&differing), "{}: {differing}", bad.name);
            assert!(bad.expected.is_some() && good.expected.is_none());
        }
    }

    #[test]
    fn picasso_expectations_hold() {
        let cases = gen_corpus();
        let results = run_corpus(&cases, &[SchemeKind::Picasso], &RunConfig::default()).unwrap();
        for r in &results {
            assert!(r.expectations_met, "{}", r.case);
        }
        let s = summarize(&results, SchemeKind::Picasso);
        assert!(s.all_detected());
        assert_eq!(s.false_positives, 0);
    }

    #[test]
    fn names_are_unique() {
        let cases = gen_corpus();
        let mut names: Vec<_> = cases.iter().map(|c| c.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cases.len());
    }
}
