//! Trace interpreter binding ops to a machine and a scheme.

use std::fmt;

use serde::Serialize;

use crate::capability::{derive, CapError, Capability, Perms, CAP_BYTES};
use crate::config::{ConfigError, RunConfig, SchemeKind, SPILL_BASE};
use crate::machine::{AccessKind, Fault, FaultKind, Machine};
use crate::schemes::{self, AllocError, Scheme};

use super::oracle::{Oracle, Verdict};
use super::trace::{Expectation, Trace, TraceLine, TraceOp, SPILL_SLOTS, STACK_BYTES};

/// Base of the region handed out by `stack` ops, just above the spill slots.
pub const STACK_BASE: u64 = SPILL_BASE + SPILL_SLOTS as u64 * CAP_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Fault(Fault),
    AllocFailed(AllocError),
}

impl Outcome {
    pub fn fault_kind(&self) -> Option<FaultKind> {
        match self {
            Outcome::Fault(f) => Some(f.kind()),
            _ => None,
        }
    }

    pub fn matches(&self, e: Expectation) -> bool {
        match e {
            Expectation::Ok => *self == Outcome::Ok,
            Expectation::Fault(k) => self.fault_kind() == Some(k),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Fault(fault) => write!(f, "fault={}", fault.kind()),
            Outcome::AllocFailed(e) => write!(f, "alloc-failed={e:?}"),
        }
    }
}

/// One executed op as seen by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpRecord {
    pub op: TraceOp,
    pub outcome: Outcome,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FaultCounts(pub [u64; 8]);

impl FaultCounts {
    pub fn get(&self, k: FaultKind) -> u64 {
        self.0[FaultKind::ALL.iter().position(|&x| x == k).unwrap()]
    }

    fn bump(&mut self, k: FaultKind) {
        self.0[FaultKind::ALL.iter().position(|&x| x == k).unwrap()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Counters harvested from one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub scheme: SchemeKind,
    pub ops: u64,
    pub allocations: u64,
    pub frees: u64,
    pub live_allocations: u64,
    pub alloc_failures: u64,
    pub revocations: u64,
    pub swept_tags: u64,
    pub revoked_caps: u64,
    pub reclaimed: u64,
    pub faults: FaultCounts,
    /// Ops the oracle classified as temporal violations.
    pub violations: u64,
    /// Violations that faulted.
    pub detected: u64,
    pub uaf_escapes: u64,
    /// Double or invalid frees the scheme accepted.
    pub df_escapes: u64,
    /// Faults on ops the oracle classified as legal.
    pub false_positives: u64,
    pub expectation_mismatches: u64,
    pub peak_resident_bytes: u64,
    pub peak_live_bytes: u64,
    pub peak_quarantine_bytes: u64,
    pub peak_metadata_bytes: u64,
    pub pvt_lookups: u64,
    pub pvt_buffer_hits: u64,
    pub pvt_buffer_misses: u64,
    pub pvt_buffer_invalidations: u64,
    /// FNV-1a over every byte read; 0 when nothing was read.
    pub data_digest: u64,
}

impl Metrics {
    /// All counters zero.
    pub fn zero(scheme: SchemeKind) -> Self {
        Metrics {
            scheme,
            ops: 0,
            allocations: 0,
            frees: 0,
            live_allocations: 0,
            alloc_failures: 0,
            revocations: 0,
            swept_tags: 0,
            revoked_caps: 0,
            reclaimed: 0,
            faults: FaultCounts::default(),
            violations: 0,
            detected: 0,
            uaf_escapes: 0,
            df_escapes: 0,
            false_positives: 0,
            expectation_mismatches: 0,
            peak_resident_bytes: 0,
            peak_live_bytes: 0,
            peak_quarantine_bytes: 0,
            peak_metadata_bytes: 0,
            pvt_lookups: 0,
            pvt_buffer_hits: 0,
            pvt_buffer_misses: 0,
            pvt_buffer_invalidations: 0,
            data_digest: 0,
        }
    }

    pub fn escapes(&self) -> u64 {
        self.uaf_escapes + self.df_escapes
    }

    /// Hits over colored-access lookups that went through the buffer.
    pub fn pvt_buffer_hit_rate(&self) -> f64 {
        let n = self.pvt_buffer_hits + self.pvt_buffer_misses;
        if n == 0 {
            0.0
        } else {
            self.pvt_buffer_hits as f64 / n as f64
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Bytes written by op number `index`; identical under every scheme.
fn write_pattern(index: u64, width: u64) -> Vec<u8> {
    (0..width).map(|i| (index.wrapping_mul(31).wrapping_add(i * 7) & 0xff) as u8).collect()
}

fn cap_fault(e: CapError) -> Fault {
    match e {
        CapError::UntaggedOperand => Fault::UntaggedOperand,
        CapError::SealedOperand => Fault::SealedDereference,
        CapError::PermissionDenied => Fault::PermissionDenied,
        CapError::MonotonicityViolation | CapError::ColorOutOfRange(_) => Fault::SpatialOutOfBounds,
    }
}

/// Executes ops one at a time and accumulates metrics.
pub struct Runner {
    machine: Machine,
    scheme: Box<dyn Scheme>,
    oracle: Oracle,
    spill: Capability,
    stack: Capability,
    index: u64,
    faults: FaultCounts,
    alloc_failures: u64,
    violations: u64,
    detected: u64,
    uaf_escapes: u64,
    df_escapes: u64,
    false_positives: u64,
    mismatches: Vec<usize>,
    mismatch_count: u64,
    digest: u64,
}

impl Runner {
    pub fn new(cfg: &RunConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let machine = Machine::new(cfg.machine_config())?;
        let scheme = schemes::build(cfg, &machine);
        Ok(Runner {
            scheme,
            oracle: Oracle::new(),
            spill: Capability::root(SPILL_BASE, SPILL_SLOTS as u64 * CAP_BYTES, Perms::DATA_AND_CAPS),
            stack: Capability::root(STACK_BASE, STACK_BYTES, Perms::DATA_AND_CAPS),
            machine,
            index: 0,
            faults: FaultCounts::default(),
            alloc_failures: 0,
            violations: 0,
            detected: 0,
            uaf_escapes: 0,
            df_escapes: 0,
            false_positives: 0,
            mismatches: Vec::new(),
            mismatch_count: 0,
            digest: 0,
        })
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn scheme(&self) -> &dyn Scheme {
        self.scheme.as_ref()
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    /// Indices (0-based) of the first few ops whose expectation failed.
    pub fn mismatches(&self) -> &[usize] {
        &self.mismatches
    }

    fn exec(&mut self, op: &TraceOp) -> Outcome {
        let r = match self.exec_inner(op) {
            Ok(()) => Outcome::Ok,
            Err(Ok(f)) => Outcome::Fault(f),
            Err(Err(e)) => Outcome::AllocFailed(e),
        };
        self.scheme.background_step(&mut self.machine);
        r
    }

    fn access(&mut self, cap: &Capability, offset: u64, width: u64, kind: AccessKind) -> Result<(), Fault> {
        self.scheme.check_access(&mut self.machine, cap, offset, width, kind)
    }

    fn exec_inner(&mut self, op: &TraceOp) -> Result<(), Result<Fault, AllocError>> {
        let m = &mut self.machine;
        match *op {
            TraceOp::Malloc { reg, size } => match self.scheme.malloc(m, size) {
                Ok(cap) => m.set_reg(reg as usize, cap),
                Err(e) => {
                    m.set_reg(reg as usize, Capability::NULL);
                    return Err(Err(e));
                }
            },
            TraceOp::Free { reg } => {
                let cap = m.reg(reg as usize);
                self.scheme.free(m, &cap).map_err(Ok)?;
            }
            TraceOp::Read { reg, offset, width } => {
                let cap = m.reg(reg as usize);
                self.access(&cap, offset, width, AccessKind::Read).map_err(Ok)?;
                let bytes = self.machine.load_data(&cap, offset, width).map_err(Ok)?;
                if self.digest == 0 && !bytes.is_empty() {
                    self.digest = FNV_OFFSET;
                }
                for b in bytes {
                    self.digest = (self.digest ^ b as u64).wrapping_mul(FNV_PRIME);
                }
            }
            TraceOp::Write { reg, offset, width } => {
                let cap = m.reg(reg as usize);
                self.access(&cap, offset, width, AccessKind::Write).map_err(Ok)?;
                let data = write_pattern(self.index, width);
                self.machine.store_data(&cap, offset, &data).map_err(Ok)?;
            }
            TraceOp::Copy { dst, src } => {
                let cap = m.reg(src as usize);
                m.set_reg(dst as usize, cap);
            }
            TraceOp::Spill { reg, slot } => {
                let cap = m.reg(reg as usize);
                m.store_cap(&self.spill, slot as u64 * CAP_BYTES, &cap).map_err(Ok)?;
            }
            TraceOp::Reload { reg, slot } => {
                let cap = m.load_cap(&self.spill, slot as u64 * CAP_BYTES).map_err(Ok)?;
                m.set_reg(reg as usize, cap);
            }
            TraceOp::Derive { dst, src, offset, len } => {
                let parent = m.reg(src as usize);
                let base = parent.base.checked_add(offset).ok_or(Ok(Fault::SpatialOutOfBounds))?;
                let cap = derive(&parent, base, len, parent.perms, m.otypeth())
                    .map_err(|e| Ok(cap_fault(e)))?;
                m.set_reg(dst as usize, cap);
            }
            TraceOp::Stack { reg, size } => {
                let cap = derive(&self.stack, STACK_BASE, size, Perms::DATA_AND_CAPS, m.otypeth())
                    .expect("stack size validated by the parser");
                m.set_reg(reg as usize, cap);
            }
            TraceOp::StoreCap { auth, offset, src } => {
                let a = m.reg(auth as usize);
                let value = m.reg(src as usize);
                self.access(&a, offset, CAP_BYTES, AccessKind::WriteCap).map_err(Ok)?;
                self.machine.store_cap(&a, offset, &value).map_err(Ok)?;
            }
            TraceOp::LoadCap { dst, auth, offset } => {
                let a = m.reg(auth as usize);
                self.access(&a, offset, CAP_BYTES, AccessKind::ReadCap).map_err(Ok)?;
                let cap = self.machine.load_cap(&a, offset).map_err(Ok)?;
                self.machine.set_reg(dst as usize, cap);
            }
        }
        Ok(())
    }

    /// Runs one op, classifies it against the oracle and checks its
    /// expectation.
    pub fn step(&mut self, line: &TraceLine) -> OpRecord {
        let verdict = self.oracle.verdict(&line.op);
        let outcome = self.exec(&line.op);
        self.oracle.apply(&line.op, outcome == Outcome::Ok);
        match outcome {
            Outcome::Fault(f) => self.faults.bump(f.kind()),
            Outcome::AllocFailed(_) => self.alloc_failures += 1,
            Outcome::Ok => {}
        }
        let faulted = matches!(outcome, Outcome::Fault(_));
        match verdict {
            Verdict::Legal if faulted => self.false_positives += 1,
            v if v.is_violation() => {
                self.violations += 1;
                match (faulted, v) {
                    (true, _) => self.detected += 1,
                    (false, Verdict::UseAfterFree) => self.uaf_escapes += 1,
                    (false, _) => self.df_escapes += 1,
                }
            }
            _ => {}
        }
        if let Some(e) = line.expect {
            if !outcome.matches(e) {
                if self.mismatches.len() < 64 {
                    self.mismatches.push(self.index as usize);
                }
                self.mismatch_count += 1;
            }
        }
        self.index += 1;
        OpRecord { op: line.op, outcome, verdict }
    }

    pub fn metrics(&self) -> Metrics {
        let s = self.scheme.stats();
        let peak = self.scheme.peak();
        let buf = self.machine.buffer_stats();
        Metrics {
            scheme: self.scheme.kind(),
            ops: self.index,
            allocations: s.allocations,
            frees: s.frees,
            live_allocations: self.scheme.live_allocations() as u64,
            alloc_failures: self.alloc_failures,
            revocations: s.revocations,
            swept_tags: s.swept_tags,
            revoked_caps: s.revoked_caps,
            reclaimed: s.reclaimed,
            faults: self.faults,
            violations: self.violations,
            detected: self.detected,
            uaf_escapes: self.uaf_escapes,
            df_escapes: self.df_escapes,
            false_positives: self.false_positives,
            expectation_mismatches: self.mismatch_count,
            peak_resident_bytes: peak.resident_bytes,
            peak_live_bytes: peak.live_bytes,
            peak_quarantine_bytes: peak.quarantine_bytes,
            peak_metadata_bytes: peak.metadata_bytes,
            pvt_lookups: self.machine.pvt_lookups(),
            pvt_buffer_hits: buf.hits,
            pvt_buffer_misses: buf.misses,
            pvt_buffer_invalidations: buf.invalidations,
            data_digest: self.digest,
        }
    }
}

/// Result of [`run_trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub metrics: Metrics,
    pub records: Vec<OpRecord>,
}

/// Runs a whole trace and keeps the per-op outcomes.
pub fn run_trace(trace: &Trace, cfg: &RunConfig) -> Result<RunResult, ConfigError> {
    let mut runner = Runner::new(cfg)?;
    let records = trace.lines.iter().map(|l| runner.step(l)).collect();
    Ok(RunResult { metrics: runner.metrics(), records })
}

/// Streams ops without keeping outcomes; for generated workloads too large
/// to materialize.
pub fn run_ops(ops: impl IntoIterator<Item = TraceOp>, cfg: &RunConfig) -> Result<Metrics, ConfigError> {
    let mut runner = Runner::new(cfg)?;
    for op in ops {
        runner.step(&TraceLine { op, expect: None });
    }
    Ok(runner.metrics())
}
