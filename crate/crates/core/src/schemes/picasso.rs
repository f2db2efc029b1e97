//! Malloc revocation shim for colored capabilities.
//!
//! Every allocation gets its own color. Free flips the color's PVB to
//! retracted and hands the memory straight back to the heap; stale copies
//! fault on their next dereference. Colors are recycled in bulk: once fewer
//! than a threshold of colors remain unclaimed, a revocation job snapshots
//! the retracted set, sweeps memory and registers for capabilities of those
//! colors, and then releases the whole set to the id allocator at once.

use crate::capability::{derive, set_color, Capability, Perms};
use crate::config::{SchemeKind, SweepMode};
use crate::heap::{round_up, FirstFitHeap};
use crate::machine::{ColorSet, Fault, Machine, Pvb};
use crate::unr::UnrState;

use super::{AllocError, Block, Footprint, LiveSet, PeakFootprint, Scheme, SchemeStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Scanning,
    Done,
}

/// One revocation in flight. `targets` is the PVT snapshot taken at job
/// start; with no other job running, the retracted PVT bits are exactly
/// the colors pending at that instant.
#[derive(Debug, Clone)]
pub struct RevocationJob {
    pub targets: ColorSet,
    pub state: JobState,
}

#[derive(Debug, Clone)]
pub struct Picasso {
    heap: FirstFitHeap,
    authority: Capability,
    otypeth: u32,
    unr: UnrState,
    /// Revocation starts when fewer than this many colors are unclaimed.
    threshold: u32,
    pending: ColorSet,
    job: Option<RevocationJob>,
    live: LiveSet,
    sweep: SweepMode,
    pvt_bytes: u64,
    stats: SchemeStats,
    peak: PeakFootprint,
}

impl Picasso {
    pub fn new(m: &Machine, threshold_fraction: f64, sweep: SweepMode) -> Self {
        let cfg = m.config();
        let pool = cfg.otypeth - 1;
        Picasso {
            heap: FirstFitHeap::new(cfg.heap_base, cfg.heap_size),
            authority: Capability::root(cfg.heap_base, cfg.heap_size, Perms::all()),
            otypeth: cfg.otypeth,
            unr: UnrState::new(pool),
            threshold: (threshold_fraction * pool as f64).ceil() as u32,
            pending: ColorSet::with_capacity(cfg.otypeth as u64),
            job: None,
            live: LiveSet::default(),
            sweep,
            pvt_bytes: m.pvt().bytes(),
            stats: SchemeStats::default(),
            peak: PeakFootprint::default(),
        }
    }

    pub fn pool(&self) -> u32 {
        self.unr.total()
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn unr(&self) -> &UnrState {
        &self.unr
    }

    /// Colors freed but not yet covered by a started revocation.
    pub fn pending(&self) -> &ColorSet {
        &self.pending
    }

    pub fn job(&self) -> Option<&RevocationJob> {
        self.job.as_ref()
    }

    /// Claimed colors equal live allocations plus pending colors plus the
    /// targets of the job in flight.
    pub fn conservation_holds(&self) -> bool {
        let in_flight = self.job.as_ref().map_or(0, |j| j.targets.len());
        self.unr.population() as usize == self.live.len() + self.pending.len() + in_flight
    }

    /// Starts a revocation if the unclaimed pool has dropped below the
    /// threshold, no job is running and there is something to reclaim.
    pub fn maybe_revoke(&mut self, m: &mut Machine) -> bool {
        if self.job.is_some() || self.pending.is_empty() || self.unr.available() >= self.threshold {
            return false;
        }
        self.start_job(m);
        true
    }

    fn start_job(&mut self, m: &mut Machine) {
        let fresh = ColorSet::with_capacity(self.pending.capacity());
        let targets = std::mem::replace(&mut self.pending, fresh);
        debug_assert_eq!(&targets, m.pvt().retracted());
        m.begin_sweep();
        self.job = Some(RevocationJob { targets, state: JobState::Scanning });
        self.stats.revocations += 1;
        self.peak.observe(self.footprint());
    }

    /// Sweeps at most `budget` tagged memory words for the job's colors.
    /// Returns `true` once the sweep is complete (or no job exists).
    pub fn revocation_step(&mut self, m: &mut Machine, budget: usize) -> bool {
        let Some(job) = &mut self.job else {
            return true;
        };
        if job.state == JobState::Done {
            return true;
        }
        let th = self.otypeth;
        let targets = &job.targets;
        let progress = m.sweep_step(|c| c.color(th).is_some_and(|x| targets.contains(x)), budget);
        self.stats.swept_tags += progress.stats.visited;
        self.stats.revoked_caps += progress.stats.cleared;
        if progress.done {
            job.state = JobState::Done;
        }
        progress.done
    }

    /// Validates the swept colors in the PVT and batch-releases them.
    /// Returns the number of colors reclaimed.
    pub fn revocation_finalize(&mut self, m: &mut Machine) -> usize {
        let job = self.job.take().expect("revocation job");
        assert_eq!(job.state, JobState::Done, "finalize before sweep completed");
        m.pvt_validate_all(&job.targets);
        let ids: Vec<u32> = job.targets.iter().collect();
        self.unr
            .batch_release(&ids)
            .expect("swept colors are claimed");
        self.stats.reclaimed += ids.len() as u64;
        ids.len()
    }

    fn complete_job(&mut self, m: &mut Machine) -> usize {
        self.revocation_step(m, usize::MAX);
        self.revocation_finalize(m)
    }

    /// `malloc` of `count * size` bytes, zero-filled. Reused blocks keep
    /// their old contents otherwise.
    pub fn calloc(&mut self, m: &mut Machine, count: u64, size: u64) -> Result<Capability, AllocError> {
        let bytes = count.checked_mul(size).ok_or(AllocError::InvalidSize)?;
        let cap = self.malloc(m, bytes)?;
        m.store_data(&cap, 0, &vec![0; cap.length as usize])
            .expect("fresh allocation is writable");
        Ok(cap)
    }

    fn claim_color(&mut self, m: &mut Machine) -> Option<u32> {
        if let Ok(c) = self.unr.alloc_first_free() {
            return Some(c);
        }
        // Pool empty: stall until a revocation hands colors back.
        if self.job.is_none() {
            if self.pending.is_empty() {
                return None;
            }
            self.start_job(m);
        }
        self.complete_job(m);
        self.unr.alloc_first_free().ok()
    }
}

impl Scheme for Picasso {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Picasso
    }

    fn malloc(&mut self, m: &mut Machine, size: u64) -> Result<Capability, AllocError> {
        if size == 0 {
            return Err(AllocError::InvalidSize);
        }
        if self.job.as_ref().is_some_and(|j| j.state == JobState::Done) {
            self.revocation_finalize(m);
        }
        if self.maybe_revoke(m) && self.sweep == SweepMode::Sync {
            self.complete_job(m);
        }
        let size = round_up(size);
        let addr = self.heap.alloc(size).ok_or(AllocError::OutOfMemory)?;
        let Some(color) = self.claim_color(m) else {
            self.heap.release(addr, size);
            return Err(AllocError::Exhausted);
        };
        let th = self.otypeth;
        let cap = derive(&self.authority, addr, size, Perms::DATA_AND_CAPS, th)
            .and_then(|c| set_color(&c, &self.authority, color, th))
            .expect("heap block inside authority");
        if m.pvb(color) == Pvb::Retracted {
            m.pvt_set(color, Pvb::Valid).expect("color in pool");
        }
        self.live.insert(addr, Block { size, tag: Some(color) });
        self.stats.allocations += 1;
        self.peak.observe(self.footprint());
        Ok(cap)
    }

    fn free(&mut self, m: &mut Machine, cap: &Capability) -> Result<(), Fault> {
        if !cap.tag {
            return Err(Fault::MalformedFree);
        }
        let color = cap.color(self.otypeth).ok_or(Fault::MalformedFree)?;
        if m.pvb(color) == Pvb::Retracted {
            return Err(Fault::DoubleFree);
        }
        let block = self
            .live
            .matching(cap)
            .filter(|b| b.tag == Some(color))
            .ok_or(Fault::MalformedFree)?;
        m.pvt_set(color, Pvb::Retracted).expect("color in pool");
        self.pending.insert(color);
        self.live.remove(cap.base);
        self.heap.release(cap.base, block.size);
        self.stats.frees += 1;
        Ok(())
    }

    fn background_step(&mut self, m: &mut Machine) {
        if let SweepMode::Windowed(budget) = self.sweep {
            if self.job.is_some() {
                self.revocation_step(m, budget);
            }
        }
    }

    fn stats(&self) -> SchemeStats {
        self.stats
    }

    fn footprint(&self) -> Footprint {
        let snapshot = self.job.as_ref().map_or(0, |j| j.targets.bytes());
        Footprint {
            live_bytes: self.live.bytes(),
            quarantine_bytes: 0,
            metadata_bytes: self.pvt_bytes + snapshot + self.unr.node_memory(),
        }
    }

    fn peak(&self) -> PeakFootprint {
        self.peak
    }

    fn live_allocations(&self) -> usize {
        self.live.len()
    }
}
