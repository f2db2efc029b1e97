use std::collections::{BTreeMap, VecDeque};

use crate::heap::GRANULE;
use crate::machine::{Machine, SweepStats};

/// Freed blocks awaiting a sweep, with a shadow bit per 16-byte heap word.
#[derive(Debug, Clone)]
pub struct Quarantine {
    heap_base: u64,
    heap_size: u64,
    shadow: Vec<u64>,
    fifo: VecDeque<(u64, u64)>,
    /// Same blocks keyed by base, for range-intersection queries.
    index: BTreeMap<u64, u64>,
    bytes: u64,
}

impl Quarantine {
    pub fn new(heap_base: u64, heap_size: u64) -> Self {
        let words = heap_size / GRANULE;
        Quarantine {
            heap_base,
            heap_size,
            shadow: vec![0; words.div_ceil(64) as usize],
            fifo: VecDeque::new(),
            index: BTreeMap::new(),
            bytes: 0,
        }
    }

    fn word(&self, addr: u64) -> Option<usize> {
        (addr >= self.heap_base && addr < self.heap_base + self.heap_size)
            .then(|| ((addr - self.heap_base) / GRANULE) as usize)
    }

    fn set_shadow(&mut self, base: u64, size: u64, on: bool) {
        let first = self.word(base).expect("heap block");
        for w in first..first + (size / GRANULE) as usize {
            let mask = 1u64 << (w % 64);
            if on {
                self.shadow[w / 64] |= mask;
            } else {
                self.shadow[w / 64] &= !mask;
            }
        }
    }

    pub fn insert(&mut self, base: u64, size: u64) {
        self.set_shadow(base, size, true);
        self.fifo.push_back((base, size));
        self.index.insert(base, size);
        self.bytes += size;
    }

    pub fn is_shadowed(&self, addr: u64) -> bool {
        self.word(addr)
            .is_some_and(|w| self.shadow[w / 64] >> (w % 64) & 1 == 1)
    }

    /// Whether `[lo, hi)` overlaps any quarantined block. Blocks are
    /// disjoint, so only the last one starting below `hi` can overlap.
    pub fn intersects(&self, lo: u64, hi: u64) -> bool {
        lo < hi
            && self
                .index
                .range(..hi)
                .next_back()
                .is_some_and(|(&b, &s)| b + s > lo)
    }

    /// Sweeps every capability overlapping a quarantined block, then empties
    /// the quarantine and returns its blocks in FIFO order.
    pub fn sweep(&mut self, m: &mut Machine) -> (SweepStats, Vec<(u64, u64)>) {
        let stats = m.sweep_scan(|cap| self.intersects(cap.base, cap.top()));
        let blocks: Vec<_> = self.fifo.drain(..).collect();
        for &(b, s) in &blocks {
            self.set_shadow(b, s, false);
        }
        self.index.clear();
        self.bytes = 0;
        (stats, blocks)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn shadow_bytes(&self) -> u64 {
        self.shadow.len() as u64 * 8
    }

    /// Number of set shadow bits.
    pub fn shadowed_words(&self) -> u64 {
        self.shadow.iter().map(|w| w.count_ones() as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersection() {
        let mut q = Quarantine::new(0x1000, 0x1000);
        q.insert(0x1100, 0x40);
        q.insert(0x1200, 0x10);
        assert!(q.intersects(0x1100, 0x1101));
        assert!(q.intersects(0x10f0, 0x1110));
        assert!(q.intersects(0x1000, 0x2000));
        assert!(!q.intersects(0x1140, 0x1200));
        assert!(!q.intersects(0x1100, 0x1100));
        assert!(q.is_shadowed(0x1130));
        assert!(!q.is_shadowed(0x1140));
        assert!(!q.is_shadowed(0x10));
        assert_eq!(q.shadowed_words(), 5);
        assert_eq!(q.bytes(), 0x50);
    }
}
