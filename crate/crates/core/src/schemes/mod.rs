//! Temporal-safety schemes layered over the same machine and heap.

mod cornucopia;
mod none;
mod picasso;
mod quarantine;
mod versioning;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

pub use cornucopia::Cornucopia;
pub use none::Unprotected;
pub use picasso::{JobState, Picasso, RevocationJob};
pub use quarantine::Quarantine;
pub use versioning::{Versioning, VERSIONS};

use crate::capability::Capability;
use crate::config::{RunConfig, SchemeKind};
use crate::machine::{AccessKind, Fault, Machine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("allocation size must be positive")]
    InvalidSize,
    #[error("heap exhausted")]
    OutOfMemory,
    #[error("provenance identifiers exhausted")]
    Exhausted,
}

/// Event counters common to every scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SchemeStats {
    pub allocations: u64,
    pub frees: u64,
    pub revocations: u64,
    /// Capabilities inspected by sweeps (memory words plus registers).
    pub swept_tags: u64,
    /// Tags cleared by sweeps.
    pub revoked_caps: u64,
    /// Colors returned to the pool, or bytes returned from quarantine.
    pub reclaimed: u64,
}

/// Bytes held by a scheme at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub live_bytes: u64,
    pub quarantine_bytes: u64,
    /// PVT and its snapshot, id-allocator nodes, shadow bitmaps, tags.
    pub metadata_bytes: u64,
}

impl Footprint {
    pub fn resident(&self) -> u64 {
        self.live_bytes + self.quarantine_bytes + self.metadata_bytes
    }
}

/// Running maxima of a scheme's footprint. Schemes feed it at every point
/// where their footprint can peak, including inside a revocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PeakFootprint {
    pub resident_bytes: u64,
    pub live_bytes: u64,
    pub quarantine_bytes: u64,
    pub metadata_bytes: u64,
}

impl PeakFootprint {
    pub fn observe(&mut self, f: Footprint) {
        self.resident_bytes = self.resident_bytes.max(f.resident());
        self.live_bytes = self.live_bytes.max(f.live_bytes);
        self.quarantine_bytes = self.quarantine_bytes.max(f.quarantine_bytes);
        self.metadata_bytes = self.metadata_bytes.max(f.metadata_bytes);
    }
}

pub trait Scheme {
    fn kind(&self) -> SchemeKind;

    fn malloc(&mut self, m: &mut Machine, size: u64) -> Result<Capability, AllocError>;

    fn free(&mut self, m: &mut Machine, cap: &Capability) -> Result<(), Fault>;

    /// Scheme-specific check run before every dereference, after the
    /// machine's own checks would pass. Only versioning needs one.
    fn check_access(
        &mut self,
        _m: &mut Machine,
        _cap: &Capability,
        _offset: u64,
        _width: u64,
        _kind: AccessKind,
    ) -> Result<(), Fault> {
        Ok(())
    }

    /// Called once after every trace op; drives windowed sweeps.
    fn background_step(&mut self, _m: &mut Machine) {}

    fn stats(&self) -> SchemeStats;

    fn footprint(&self) -> Footprint;

    fn peak(&self) -> PeakFootprint;

    fn live_allocations(&self) -> usize;
}

/// Builds the scheme selected by `cfg` for a machine created from
/// `cfg.machine_config()`.
pub fn build(cfg: &RunConfig, m: &Machine) -> Box<dyn Scheme> {
    match cfg.scheme {
        SchemeKind::Picasso => Box::new(Picasso::new(m, cfg.threshold_fraction, cfg.sweep)),
        SchemeKind::Cornucopia => Box::new(Cornucopia::new(
            m,
            cfg.quarantine_fraction,
            cfg.quarantine_min_bytes,
            false,
        )),
        SchemeKind::CornucopiaRof => Box::new(Cornucopia::new(
            m,
            cfg.quarantine_fraction,
            cfg.quarantine_min_bytes,
            true,
        )),
        SchemeKind::Versioning => Box::new(Versioning::new(m, cfg.version_fallback)),
        SchemeKind::None => Box::new(Unprotected::new(m)),
    }
}

/// A live heap block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub size: u64,
    /// Color or version, depending on the scheme.
    pub tag: Option<u32>,
}

/// Live blocks by base address.
#[derive(Debug, Clone, Default)]
pub(crate) struct LiveSet {
    blocks: HashMap<u64, Block>,
    bytes: u64,
}

impl LiveSet {
    pub fn insert(&mut self, base: u64, block: Block) {
        self.bytes += block.size;
        self.blocks.insert(base, block);
    }

    /// The block `cap` denotes exactly: same base, address at the base,
    /// same length.
    pub fn matching(&self, cap: &Capability) -> Option<Block> {
        self.blocks
            .get(&cap.base)
            .filter(|b| cap.address == cap.base && cap.length == b.size)
            .copied()
    }

    pub fn remove(&mut self, base: u64) -> Block {
        let b = self.blocks.remove(&base).expect("live block");
        self.bytes -= b.size;
        b
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}
