//! Single-address-space machine: tagged memory, a register file, the PVT
//! and checked loads and stores.

mod memory;
mod pvt;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use memory::TaggedMemory;
pub use pvt::{BufferStats, ColorSet, Pvb, Pvt, PvtBuffer, COLORS_PER_WORD};

use crate::capability::{CapError, Capability, OtypeInterpretation, Perms, CAP_BYTES};
use crate::config::{ConfigError, MachineConfig};

pub const NUM_REGISTERS: usize = 32;

/// Architectural fault raised by a failed access or a rejected free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum Fault {
    #[error("access outside capability bounds")]
    SpatialOutOfBounds,
    #[error("capability tag is clear")]
    UntaggedOperand,
    #[error("capability lacks permission")]
    PermissionDenied,
    #[error("provenance of color {0} has been retracted")]
    ProvenanceRetracted(u32),
    #[error("dereference of a sealed capability")]
    SealedDereference,
    #[error("free of a capability that does not denote a live allocation")]
    MalformedFree,
    #[error("allocation already freed")]
    DoubleFree,
    #[error("PVT word is not mapped")]
    PvtUnmapped,
}

/// Payload-free fault discriminant, used for histograms and expectations.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum FaultKind {
    SpatialOutOfBounds,
    UntaggedOperand,
    PermissionDenied,
    ProvenanceRetracted,
    SealedDereference,
    MalformedFree,
    DoubleFree,
    PvtUnmapped,
}

impl FaultKind {
    pub const ALL: [FaultKind; 8] = [
        FaultKind::SpatialOutOfBounds,
        FaultKind::UntaggedOperand,
        FaultKind::PermissionDenied,
        FaultKind::ProvenanceRetracted,
        FaultKind::SealedDereference,
        FaultKind::MalformedFree,
        FaultKind::DoubleFree,
        FaultKind::PvtUnmapped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::SpatialOutOfBounds => "SpatialOutOfBounds",
            FaultKind::UntaggedOperand => "UntaggedOperand",
            FaultKind::PermissionDenied => "PermissionDenied",
            FaultKind::ProvenanceRetracted => "ProvenanceRetracted",
            FaultKind::SealedDereference => "SealedDereference",
            FaultKind::MalformedFree => "MalformedFree",
            FaultKind::DoubleFree => "DoubleFree",
            FaultKind::PvtUnmapped => "PvtUnmapped",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown fault kind `{s}`"))
    }
}

impl Fault {
    pub fn kind(self) -> FaultKind {
        match self {
            Fault::SpatialOutOfBounds => FaultKind::SpatialOutOfBounds,
            Fault::UntaggedOperand => FaultKind::UntaggedOperand,
            Fault::PermissionDenied => FaultKind::PermissionDenied,
            Fault::ProvenanceRetracted(_) => FaultKind::ProvenanceRetracted,
            Fault::SealedDereference => FaultKind::SealedDereference,
            Fault::MalformedFree => FaultKind::MalformedFree,
            Fault::DoubleFree => FaultKind::DoubleFree,
            Fault::PvtUnmapped => FaultKind::PvtUnmapped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    ReadCap,
    WriteCap,
}

impl AccessKind {
    fn required(self) -> Perms {
        match self {
            AccessKind::Read => Perms::LOAD,
            AccessKind::Write => Perms::STORE,
            AccessKind::ReadCap => Perms::LOAD | Perms::LOAD_CAP,
            AccessKind::WriteCap => Perms::STORE | Perms::STORE_CAP,
        }
    }
}

/// Work done by (part of) a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SweepStats {
    /// Tagged memory words and registers inspected.
    pub visited: u64,
    /// Tags cleared.
    pub cleared: u64,
}

impl std::ops::AddAssign for SweepStats {
    fn add_assign(&mut self, rhs: Self) {
        self.visited += rhs.visited;
        self.cleared += rhs.cleared;
    }
}

/// State of an incremental sweep. Capability stores into already-swept
/// words are remembered and rescanned in the closing phase together with
/// the registers.
#[derive(Debug, Clone)]
struct SweepCursor {
    next: u64,
    dirty: BTreeSet<u64>,
}

#[derive(Debug, Clone)]
pub struct Machine {
    cfg: MachineConfig,
    mem: TaggedMemory,
    regs: [Option<Capability>; NUM_REGISTERS],
    pvt: Pvt,
    buffer: PvtBuffer,
    pvt_lookups: u64,
    sweep: Option<SweepCursor>,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Machine {
            mem: TaggedMemory::new(),
            regs: [None; NUM_REGISTERS],
            pvt: Pvt::new(cfg.pvt_base, cfg.color_bits),
            buffer: PvtBuffer::new(cfg.pvt_buffer_sets, cfg.pvt_buffer_ways),
            pvt_lookups: 0,
            sweep: None,
            cfg,
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn otypeth(&self) -> u32 {
        self.cfg.otypeth
    }

    pub fn memory(&self) -> &TaggedMemory {
        &self.mem
    }

    pub fn pvt(&self) -> &Pvt {
        &self.pvt
    }

    pub fn buffer_stats(&self) -> BufferStats {
        self.buffer.stats()
    }

    /// Colored accesses that consulted the PVT.
    pub fn pvt_lookups(&self) -> u64 {
        self.pvt_lookups
    }

    pub fn reg(&self, index: usize) -> Capability {
        self.regs[index].unwrap_or(Capability::NULL)
    }

    pub fn set_reg(&mut self, index: usize, cap: Capability) {
        self.regs[index] = Some(cap);
    }

    /// Validates an access of `width` bytes at `cap.address + offset`.
    ///
    /// Faults are reported in priority order: tag, seal, permission,
    /// bounds, provenance. Colored capabilities read their PVB through the
    /// PVT buffer.
    pub fn check_access(
        &mut self,
        cap: &Capability,
        offset: u64,
        width: u64,
        kind: AccessKind,
    ) -> Result<(), Fault> {
        self.check(cap, offset, width, kind, false)
    }

    fn check(
        &mut self,
        cap: &Capability,
        offset: u64,
        width: u64,
        kind: AccessKind,
        aligned: bool,
    ) -> Result<(), Fault> {
        if !cap.tag {
            return Err(Fault::UntaggedOperand);
        }
        let interp = cap.interpretation(self.cfg.otypeth);
        if interp == OtypeInterpretation::Sealed {
            return Err(Fault::SealedDereference);
        }
        if !cap.perms.contains(kind.required()) {
            return Err(Fault::PermissionDenied);
        }
        let lo = cap.address.checked_add(offset).ok_or(Fault::SpatialOutOfBounds)?;
        let hi = lo.checked_add(width).ok_or(Fault::SpatialOutOfBounds)?;
        if !cap.covers(lo, hi) || (aligned && lo % CAP_BYTES != 0) {
            return Err(Fault::SpatialOutOfBounds);
        }
        if let OtypeInterpretation::Colored(color) = interp {
            if self.cfg.provenance_checks && self.pvb_lookup(color)? == Pvb::Retracted {
                return Err(Fault::ProvenanceRetracted(color));
            }
        }
        Ok(())
    }

    fn pvb_lookup(&mut self, color: u32) -> Result<Pvb, Fault> {
        self.pvt_lookups += 1;
        let addr = self.pvt.word_address(color);
        if let Some(mapped) = self.cfg.pvt_mapped_bytes {
            if addr - self.pvt.base() >= mapped {
                return Err(Fault::PvtUnmapped);
            }
        }
        let word = if self.cfg.pvt_buffer_enabled {
            let pvt = &self.pvt;
            self.buffer.lookup(addr, || pvt.word_at(addr))
        } else {
            self.pvt.word_at(addr)
        };
        Ok(if word >> (color % COLORS_PER_WORD) & 1 == 1 {
            Pvb::Retracted
        } else {
            Pvb::Valid
        })
    }

    pub fn load_data(&mut self, cap: &Capability, offset: u64, width: u64) -> Result<Vec<u8>, Fault> {
        self.check(cap, offset, width, AccessKind::Read, false)?;
        Ok(self.mem.read_bytes(cap.address + offset, width))
    }

    /// Writes `bytes`; every overlapped word loses its tag. Nothing is
    /// written if the check faults.
    pub fn store_data(&mut self, cap: &Capability, offset: u64, bytes: &[u8]) -> Result<(), Fault> {
        self.check(cap, offset, bytes.len() as u64, AccessKind::Write, false)?;
        self.mem.write_bytes(cap.address + offset, bytes);
        Ok(())
    }

    /// Stores `value` through `auth`. Copying a capability whose color is
    /// retracted is allowed; only the authority's provenance is checked.
    pub fn store_cap(&mut self, auth: &Capability, offset: u64, value: &Capability) -> Result<(), Fault> {
        self.check(auth, offset, CAP_BYTES, AccessKind::WriteCap, true)?;
        let addr = auth.address + offset;
        self.mem.write_cap(addr, value);
        if value.tag {
            if let Some(sweep) = &mut self.sweep {
                if addr < sweep.next {
                    sweep.dirty.insert(addr);
                }
            }
        }
        Ok(())
    }

    pub fn load_cap(&mut self, auth: &Capability, offset: u64) -> Result<Capability, Fault> {
        self.check(auth, offset, CAP_BYTES, AccessKind::ReadCap, true)?;
        Ok(self.mem.read_cap(auth.address + offset))
    }

    /// Direct PVB read, bypassing the buffer and the lookup counter.
    pub fn pvb(&self, color: u32) -> Pvb {
        self.pvt.get(color)
    }

    /// Updates one PVB and flushes the whole PVT buffer.
    pub fn pvt_set(&mut self, color: u32, state: Pvb) -> Result<(), CapError> {
        if color == 0 || color > self.cfg.pool_size() {
            return Err(CapError::ColorOutOfRange(color));
        }
        self.pvt.set(color, state);
        self.buffer.invalidate_all();
        Ok(())
    }

    /// Marks every color in `colors` valid with a single buffer flush.
    pub fn pvt_validate_all(&mut self, colors: &ColorSet) {
        self.pvt.validate_all(colors);
        self.buffer.invalidate_all();
    }

    /// Atomic sweep: clears the tag of every capability in memory or in a
    /// register for which `revoke` holds. Memory is visited in ascending
    /// address order, then registers by index.
    pub fn sweep_scan(&mut self, revoke: impl FnMut(&Capability) -> bool) -> SweepStats {
        self.begin_sweep();
        self.sweep_step(revoke, usize::MAX).stats
    }

    /// Sweep clearing capabilities colored with a member of `colors`.
    pub fn sweep_colors(&mut self, colors: &ColorSet) -> SweepStats {
        let th = self.cfg.otypeth;
        self.sweep_scan(|cap| cap.color(th).is_some_and(|c| colors.contains(c)))
    }

    pub fn begin_sweep(&mut self) {
        self.sweep = Some(SweepCursor { next: 0, dirty: BTreeSet::new() });
    }

    pub fn sweep_in_progress(&self) -> bool {
        self.sweep.is_some()
    }

    /// Advances the current sweep by at most `budget` tagged memory words.
    /// Once memory is exhausted, rescans words that received capabilities
    /// behind the cursor and then the registers, and finishes.
    pub fn sweep_step(&mut self, mut revoke: impl FnMut(&Capability) -> bool, budget: usize) -> SweepProgress {
        let Some(mut cursor) = self.sweep.take() else {
            return SweepProgress { stats: SweepStats::default(), done: true };
        };
        let mut stats = SweepStats::default();
        let batch: Vec<u64> = self.mem.tagged_from(cursor.next).take(budget).collect();
        for &addr in &batch {
            stats += self.visit_word(addr, &mut revoke);
        }
        if batch.len() == budget {
            cursor.next = batch.last().map_or(cursor.next, |a| a + CAP_BYTES);
            self.sweep = Some(cursor);
            return SweepProgress { stats, done: false };
        }
        for addr in std::mem::take(&mut cursor.dirty) {
            if self.mem.is_tagged(addr) {
                stats += self.visit_word(addr, &mut revoke);
            }
        }
        for reg in self.regs.iter_mut().flatten() {
            if reg.tag {
                stats.visited += 1;
                if revoke(reg) {
                    reg.tag = false;
                    stats.cleared += 1;
                }
            }
        }
        SweepProgress { stats, done: true }
    }

    fn visit_word(&mut self, addr: u64, revoke: &mut impl FnMut(&Capability) -> bool) -> SweepStats {
        let cap = self.mem.read_cap(addr);
        if revoke(&cap) {
            self.mem.clear_tag(addr);
            SweepStats { visited: 1, cleared: 1 }
        } else {
            SweepStats { visited: 1, cleared: 0 }
        }
    }

    /// Every tagged capability currently held, memory first then registers.
    pub fn tagged_capabilities(&self) -> Vec<Capability> {
        let mut out: Vec<_> = self.mem.tagged_from(0).map(|a| self.mem.read_cap(a)).collect();
        out.extend(self.regs.iter().flatten().filter(|c| c.tag).copied());
        out
    }

    pub fn dump_memory(&self) -> String {
        self.mem.dump()
    }

    pub fn dump_pvt(&self) -> String {
        self.pvt.dump()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepProgress {
    pub stats: SweepStats,
    pub done: bool,
}
