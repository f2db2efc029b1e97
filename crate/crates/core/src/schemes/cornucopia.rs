//! Quarantine-and-sweep revocation.
//!
//! Freed blocks sit in quarantine, unreachable by malloc, until a sweep has
//! cleared every capability overlapping them. Dangling capabilities keep
//! working until that sweep. The revoke-on-free variant sweeps on every
//! free, which closes the gap at the cost of one full sweep per free.

use crate::capability::{derive, Capability, Perms};
use crate::config::SchemeKind;
use crate::heap::{round_up, FirstFitHeap};
use crate::machine::{Fault, Machine};

use super::{AllocError, Block, Footprint, LiveSet, PeakFootprint, Quarantine, Scheme, SchemeStats};

#[derive(Debug, Clone)]
pub struct Cornucopia {
    heap: FirstFitHeap,
    authority: Capability,
    otypeth: u32,
    live: LiveSet,
    quarantine: Quarantine,
    limit_fraction: f64,
    min_bytes: u64,
    revoke_on_free: bool,
    stats: SchemeStats,
    peak: PeakFootprint,
}

impl Cornucopia {
    pub fn new(m: &Machine, limit_fraction: f64, min_bytes: u64, revoke_on_free: bool) -> Self {
        let cfg = m.config();
        Cornucopia {
            heap: FirstFitHeap::new(cfg.heap_base, cfg.heap_size),
            authority: Capability::root(cfg.heap_base, cfg.heap_size, Perms::all()),
            otypeth: cfg.otypeth,
            live: LiveSet::default(),
            quarantine: Quarantine::new(cfg.heap_base, cfg.heap_size),
            limit_fraction,
            min_bytes,
            revoke_on_free,
            stats: SchemeStats::default(),
            peak: PeakFootprint::default(),
        }
    }

    pub fn quarantine(&self) -> &Quarantine {
        &self.quarantine
    }

    /// Quarantine size that triggers a sweep: a fraction of the bytes taken
    /// from the heap (live plus quarantined), never below `min_bytes`.
    pub fn limit(&self) -> u64 {
        let held = self.live.bytes() + self.quarantine.bytes();
        ((self.limit_fraction * held as f64).ceil() as u64).max(self.min_bytes)
    }

    /// Sweeps and empties the quarantine. Returns the bytes reclaimed.
    pub fn revoke(&mut self, m: &mut Machine) -> u64 {
        self.peak.observe(self.footprint());
        self.stats.revocations += 1;
        let (sweep, blocks) = self.quarantine.sweep(m);
        self.stats.swept_tags += sweep.visited;
        self.stats.revoked_caps += sweep.cleared;
        let mut bytes = 0;
        for (base, size) in blocks {
            self.heap.release(base, size);
            bytes += size;
        }
        self.stats.reclaimed += bytes;
        bytes
    }
}

impl Scheme for Cornucopia {
    fn kind(&self) -> SchemeKind {
        if self.revoke_on_free {
            SchemeKind::CornucopiaRof
        } else {
            SchemeKind::Cornucopia
        }
    }

    fn malloc(&mut self, _m: &mut Machine, size: u64) -> Result<Capability, AllocError> {
        if size == 0 {
            return Err(AllocError::InvalidSize);
        }
        let size = round_up(size);
        let addr = self.heap.alloc(size).ok_or(AllocError::OutOfMemory)?;
        debug_assert!(!self.quarantine.intersects(addr, addr + size));
        let cap = derive(&self.authority, addr, size, Perms::DATA_AND_CAPS, self.otypeth)
            .expect("heap block inside authority");
        self.live.insert(addr, Block { size, tag: None });
        self.stats.allocations += 1;
        self.peak.observe(self.footprint());
        Ok(cap)
    }

    fn free(&mut self, m: &mut Machine, cap: &Capability) -> Result<(), Fault> {
        if !cap.tag {
            return Err(Fault::MalformedFree);
        }
        if self.quarantine.is_shadowed(cap.base) {
            return Err(Fault::DoubleFree);
        }
        let block = self.live.matching(cap).ok_or(Fault::MalformedFree)?;
        self.live.remove(cap.base);
        self.quarantine.insert(cap.base, block.size);
        self.stats.frees += 1;
        if self.revoke_on_free || self.quarantine.bytes() >= self.limit() {
            self.revoke(m);
        }
        Ok(())
    }

    fn stats(&self) -> SchemeStats {
        self.stats
    }

    fn footprint(&self) -> Footprint {
        Footprint {
            live_bytes: self.live.bytes(),
            quarantine_bytes: self.quarantine.bytes(),
            metadata_bytes: self.quarantine.shadow_bytes(),
        }
    }

    fn peak(&self) -> PeakFootprint {
        self.peak
    }

    fn live_allocations(&self) -> usize {
        self.live.len()
    }
}
