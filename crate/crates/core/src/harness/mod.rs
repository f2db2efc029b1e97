//! Trace language, lifetime oracle, generators, runner and reports.

pub mod corpus;
pub mod gen;
pub mod oracle;
pub mod report;
pub mod run;
pub mod trace;

pub use corpus::{gen_corpus, run_corpus, summarize, Category, CorpusCase, CorpusResult, CorpusSummary, Detection, Variant};
pub use gen::{ChurnConfig, GenSpec, GenSpecError, LocalityConfig, RandomConfig};
pub use oracle::{Oracle, Prov, Region, Verdict};
pub use run::{run_ops, run_trace, FaultCounts, Metrics, OpRecord, Outcome, RunResult, Runner};
pub use trace::{parse_trace, Expectation, ParseError, Trace, TraceLine, TraceOp};
