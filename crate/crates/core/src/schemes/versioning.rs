//! Capabilities combined with 4-bit memory versioning.
//!
//! Every 16-byte heap granule carries a version; a capability carries the
//! version of its allocation in the low bits of its otype. A dereference
//! faults when the two disagree. Free "recolors" the block so stale
//! capabilities stop matching, and memory is reused at once.
//!
//! With only 16 versions a granule eventually hands out a version some
//! stale capability still holds. With the fallback enabled, each granule
//! remembers which versions it has handed out since its last sweep; a free
//! that finds no unused version left quarantines the block and sweeps it
//! before reuse. Without the fallback versions simply wrap and collisions
//! go undetected.

use crate::capability::{derive, Capability, Otype, Perms};
use crate::config::SchemeKind;
use crate::heap::{round_up, FirstFitHeap, GRANULE};
use crate::machine::{AccessKind, Fault, Machine};

use super::{AllocError, Block, Footprint, LiveSet, PeakFootprint, Quarantine, Scheme, SchemeStats};

/// Distinct versions per granule.
pub const VERSIONS: u32 = 16;

const ALL_USED: u16 = u16::MAX;

#[derive(Debug, Clone)]
pub struct Versioning {
    heap: FirstFitHeap,
    authority: Capability,
    otypeth: u32,
    live: LiveSet,
    version: Vec<u8>,
    /// Per granule, versions handed out since the granule was last swept.
    used: Vec<u16>,
    fallback: bool,
    quarantine: Quarantine,
    stats: SchemeStats,
    peak: PeakFootprint,
}

fn lowest_unused(used: u16) -> Option<u8> {
    (used != ALL_USED).then(|| used.trailing_ones() as u8)
}

/// Version carried by a capability.
pub fn version_of(cap: &Capability) -> u8 {
    match cap.otype {
        Otype::Value(v) => (v % VERSIONS) as u8,
        Otype::Unsealed => 0,
    }
}

impl Versioning {
    pub fn new(m: &Machine, fallback: bool) -> Self {
        let cfg = m.config();
        let granules = (cfg.heap_size / GRANULE) as usize;
        Versioning {
            heap: FirstFitHeap::new(cfg.heap_base, cfg.heap_size),
            authority: Capability::root(cfg.heap_base, cfg.heap_size, Perms::all()),
            otypeth: cfg.otypeth,
            live: LiveSet::default(),
            version: vec![0; granules],
            used: vec![0; granules],
            fallback,
            quarantine: Quarantine::new(cfg.heap_base, cfg.heap_size),
            stats: SchemeStats::default(),
            peak: PeakFootprint::default(),
        }
    }

    fn granules(&self, base: u64, size: u64) -> std::ops::Range<usize> {
        let first = ((base - self.heap.base()) / GRANULE) as usize;
        first..first + (size / GRANULE) as usize
    }

    /// Current version of the granule holding `addr`.
    pub fn granule_version(&self, addr: u64) -> u8 {
        self.version[((addr - self.heap.base()) / GRANULE) as usize]
    }

    fn sweep_quarantine(&mut self, m: &mut Machine) {
        self.peak.observe(self.footprint());
        self.stats.revocations += 1;
        let (sweep, blocks) = self.quarantine.sweep(m);
        self.stats.swept_tags += sweep.visited;
        self.stats.revoked_caps += sweep.cleared;
        for (base, size) in blocks {
            for g in self.granules(base, size) {
                self.used[g] = 0;
            }
            self.heap.release(base, size);
            self.stats.reclaimed += size;
        }
    }

    /// Picks the version for a new block. If its granules have jointly
    /// used up every version, capabilities into the block are swept first.
    fn choose_version(&mut self, m: &mut Machine, base: u64, size: u64) -> u8 {
        let range = self.granules(base, size);
        if !self.fallback {
            return self.version[range.start];
        }
        let used = self.used[range.clone()].iter().fold(0, |a, &u| a | u);
        if let Some(v) = lowest_unused(used) {
            return v;
        }
        self.stats.revocations += 1;
        let hi = base + size;
        let sweep = m.sweep_scan(|c| c.base < hi && c.top() > base);
        self.stats.swept_tags += sweep.visited;
        self.stats.revoked_caps += sweep.cleared;
        self.used[range].iter_mut().for_each(|u| *u = 0);
        0
    }
}

impl Scheme for Versioning {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Versioning
    }

    fn malloc(&mut self, m: &mut Machine, size: u64) -> Result<Capability, AllocError> {
        if size == 0 {
            return Err(AllocError::InvalidSize);
        }
        let size = round_up(size);
        let addr = self.heap.alloc(size).ok_or(AllocError::OutOfMemory)?;
        let v = self.choose_version(m, addr, size);
        for g in self.granules(addr, size) {
            self.version[g] = v;
            self.used[g] |= 1 << v;
        }
        let cap = derive(&self.authority, addr, size, Perms::DATA_AND_CAPS, self.otypeth)
            .expect("heap block inside authority")
            .with_otype_unchecked(Otype::Value(v as u32));
        self.live.insert(addr, Block { size, tag: Some(v as u32) });
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
        let v = version_of(cap);
        if self.heap.contains(cap.base) && self.granule_version(cap.base) != v {
            return Err(Fault::DoubleFree);
        }
        let block = self.live.matching(cap).ok_or(Fault::MalformedFree)?;
        self.live.remove(cap.base);
        self.stats.frees += 1;
        let range = self.granules(cap.base, block.size);
        let mut exhausted = false;
        for g in range {
            let next = if self.fallback { lowest_unused(self.used[g]) } else { None };
            match next {
                Some(n) => self.version[g] = n,
                None => {
                    exhausted |= self.fallback;
                    self.version[g] = (v + 1) % VERSIONS as u8;
                }
            }
        }
        if exhausted {
            self.quarantine.insert(cap.base, block.size);
            self.sweep_quarantine(m);
        } else {
            self.heap.release(cap.base, block.size);
        }
        Ok(())
    }

    fn check_access(
        &mut self,
        m: &mut Machine,
        cap: &Capability,
        offset: u64,
        width: u64,
        kind: AccessKind,
    ) -> Result<(), Fault> {
        m.check_access(cap, offset, width, kind)?;
        let lo = cap.address + offset;
        if width == 0 || !self.heap.contains(lo) {
            return Ok(());
        }
        let v = version_of(cap);
        let first = lo - lo % GRANULE;
        let end = (lo + width).next_multiple_of(GRANULE);
        if self.granules(first, end - first).any(|g| self.version[g] != v) {
            return Err(Fault::ProvenanceRetracted(v as u32));
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
            // 4-bit tag per granule.
            metadata_bytes: self.version.len() as u64 / 2,
        }
    }

    fn peak(&self) -> PeakFootprint {
        self.peak
    }

    fn live_allocations(&self) -> usize {
        self.live.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MachineConfig;

    fn setup(fallback: bool) -> (Machine, Versioning) {
        let cfg = MachineConfig {
            provenance_checks: false,
            ..MachineConfig::default()
        };
        let m = Machine::new(cfg).unwrap();
        let v = Versioning::new(&m, fallback);
        (m, v)
    }

    fn read(m: &mut Machine, v: &mut Versioning, cap: &Capability) -> Result<(), Fault> {
        v.check_access(m, cap, 0, 8, AccessKind::Read)?;
        m.load_data(cap, 0, 8).map(|_| ())
    }

    #[test]
    fn stale_version_faults_after_reuse() {
        let (mut m, mut s) = setup(true);
        let a = s.malloc(&mut m, 32).unwrap();
        assert_eq!(version_of(&a), 0);
        s.free(&mut m, &a).unwrap();
        let b = s.malloc(&mut m, 32).unwrap();
        assert_eq!(b.base, a.base);
        assert_eq!(version_of(&b), 1);
        assert_eq!(read(&mut m, &mut s, &a), Err(Fault::ProvenanceRetracted(0)));
        assert!(read(&mut m, &mut s, &b).is_ok());
        assert_eq!(s.free(&mut m, &a), Err(Fault::DoubleFree));
    }

    #[test]
    fn freed_block_faults_before_reuse() {
        let (mut m, mut s) = setup(false);
        let a = s.malloc(&mut m, 32).unwrap();
        s.free(&mut m, &a).unwrap();
        assert_eq!(read(&mut m, &mut s, &a), Err(Fault::ProvenanceRetracted(0)));
        assert_eq!(s.free(&mut m, &a), Err(Fault::DoubleFree));
    }

    #[test]
    fn sixteen_cycles_wrap_without_fallback() {
        let (mut m, mut s) = setup(false);
        let first = s.malloc(&mut m, 16).unwrap();
        s.free(&mut m, &first).unwrap();
        let mut cur = s.malloc(&mut m, 16).unwrap();
        for _ in 0..14 {
            assert!(read(&mut m, &mut s, &first).is_err());
            s.free(&mut m, &cur).unwrap();
            cur = s.malloc(&mut m, 16).unwrap();
        }
        assert_eq!(version_of(&cur), 15);
        s.free(&mut m, &cur).unwrap();
        let fresh = s.malloc(&mut m, 16).unwrap();
        assert_eq!(fresh.base, first.base);
        assert_eq!(version_of(&fresh), 0);
        // Collision: the stale capability is accepted.
        assert!(read(&mut m, &mut s, &first).is_ok());
        assert_eq!(s.stats().revocations, 0);
    }

    #[test]
    fn exhaustion_quarantines_and_sweeps() {
        let (mut m, mut s) = setup(true);
        let first = s.malloc(&mut m, 16).unwrap();
        m.set_reg(0, first);
        s.free(&mut m, &first).unwrap();
        let mut cur = s.malloc(&mut m, 16).unwrap();
        // Colorings 2..=16 use the remaining versions.
        for _ in 0..14 {
            s.free(&mut m, &cur).unwrap();
            cur = s.malloc(&mut m, 16).unwrap();
        }
        assert_eq!(version_of(&cur), 15);
        assert_eq!(s.stats().revocations, 0);
        s.free(&mut m, &cur).unwrap();
        assert_eq!(s.stats().revocations, 1);
        assert_eq!(s.stats().reclaimed, 16);
        let fresh = s.malloc(&mut m, 16).unwrap();
        assert_eq!(version_of(&fresh), 0);
        let stale = m.reg(0);
        assert_eq!(read(&mut m, &mut s, &stale), Err(Fault::UntaggedOperand));
    }

    #[test]
    fn reallocation_with_mixed_granule_history_avoids_used_versions() {
        let (mut m, mut s) = setup(true);
        let a = s.malloc(&mut m, 16).unwrap();
        let b = s.malloc(&mut m, 16).unwrap();
        s.free(&mut m, &a).unwrap();
        let a2 = s.malloc(&mut m, 16).unwrap();
        assert_eq!(version_of(&a2), 1);
        s.free(&mut m, &a2).unwrap();
        s.free(&mut m, &b).unwrap();
        let big = s.malloc(&mut m, 32).unwrap();
        assert_eq!(big.base, a.base);
        assert_eq!(version_of(&big), 2);
        for stale in [a, a2, b] {
            assert!(read(&mut m, &mut s, &stale).is_err());
        }
    }

    #[test]
    fn interior_and_foreign_frees_are_malformed() {
        let (mut m, mut s) = setup(true);
        let a = s.malloc(&mut m, 64).unwrap();
        let inner = derive(&a, a.base + 16, 16, Perms::LOAD, m.otypeth()).unwrap();
        assert_eq!(s.free(&mut m, &inner), Err(Fault::MalformedFree));
        let stack = Capability::root(crate::config::SPILL_BASE, 64, Perms::DATA_AND_CAPS);
        assert_eq!(s.free(&mut m, &stack), Err(Fault::MalformedFree));
    }
}
