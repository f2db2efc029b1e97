use crate::capability::{derive, Capability, Perms};
use crate::config::SchemeKind;
use crate::heap::{round_up, FirstFitHeap};
use crate::machine::{Fault, Machine};

use super::{AllocError, Block, Footprint, LiveSet, PeakFootprint, Scheme, SchemeStats};

/// Plain first-fit heap with no temporal protection. Frees are still
/// validated so malformed input is reported the same way everywhere.
#[derive(Debug, Clone)]
pub struct Unprotected {
    heap: FirstFitHeap,
    authority: Capability,
    otypeth: u32,
    live: LiveSet,
    stats: SchemeStats,
    peak: PeakFootprint,
}

impl Unprotected {
    pub fn new(m: &Machine) -> Self {
        let cfg = m.config();
        Unprotected {
            heap: FirstFitHeap::new(cfg.heap_base, cfg.heap_size),
            authority: Capability::root(cfg.heap_base, cfg.heap_size, Perms::all()),
            otypeth: cfg.otypeth,
            live: LiveSet::default(),
            stats: SchemeStats::default(),
            peak: PeakFootprint::default(),
        }
    }
}

impl Scheme for Unprotected {
    fn kind(&self) -> SchemeKind {
        SchemeKind::None
    }

    fn malloc(&mut self, _m: &mut Machine, size: u64) -> Result<Capability, AllocError> {
        if size == 0 {
            return Err(AllocError::InvalidSize);
        }
        let size = round_up(size);
        let addr = self.heap.alloc(size).ok_or(AllocError::OutOfMemory)?;
        let cap = derive(&self.authority, addr, size, Perms::DATA_AND_CAPS, self.otypeth)
            .expect("heap block inside authority");
        self.live.insert(addr, Block { size, tag: None });
        self.stats.allocations += 1;
        self.peak.observe(self.footprint());
        Ok(cap)
    }

    fn free(&mut self, _m: &mut Machine, cap: &Capability) -> Result<(), Fault> {
        if !cap.tag {
            return Err(Fault::MalformedFree);
        }
        let block = self.live.matching(cap).ok_or(Fault::MalformedFree)?;
        self.live.remove(cap.base);
        self.heap.release(cap.base, block.size);
        self.stats.frees += 1;
        Ok(())
    }

    fn stats(&self) -> SchemeStats {
        self.stats
    }

    fn footprint(&self) -> Footprint {
        Footprint {
            live_bytes: self.live.bytes(),
            ..Default::default()
        }
    }

    fn peak(&self) -> PeakFootprint {
        self.peak
    }

    fn live_allocations(&self) -> usize {
        self.live.len()
    }
}
