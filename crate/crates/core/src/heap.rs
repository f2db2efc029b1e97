use std::collections::BTreeMap;

/// Allocation granule: every block is 16-byte aligned and sized.
pub const GRANULE: u64 = 16;

pub fn round_up(size: u64) -> u64 {
    size.div_ceil(GRANULE).max(1) * GRANULE
}

/// First-fit free-list over a contiguous simulated region. Freed blocks
/// coalesce with both neighbours, so a free immediately followed by an
/// allocation of the same size returns the same address.
#[derive(Debug, Clone)]
pub struct FirstFitHeap {
    base: u64,
    size: u64,
    /// Free blocks, start address to length.
    free: BTreeMap<u64, u64>,
    free_bytes: u64,
}

impl FirstFitHeap {
    pub fn new(base: u64, size: u64) -> Self {
        debug_assert_eq!(base % GRANULE, 0);
        let size = size / GRANULE * GRANULE;
        FirstFitHeap {
            base,
            size,
            free: BTreeMap::from([(base, size)]),
            free_bytes: size,
        }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.base + self.size
    }

    pub fn free_bytes(&self) -> u64 {
        self.free_bytes
    }

    /// Lowest-addressed block that fits `size` (already granule-rounded).
    pub fn alloc(&mut self, size: u64) -> Option<u64> {
        debug_assert_eq!(size % GRANULE, 0);
        let (&start, &len) = self.free.iter().find(|(_, &len)| len >= size)?;
        self.free.remove(&start);
        if len > size {
            self.free.insert(start + size, len - size);
        }
        self.free_bytes -= size;
        Some(start)
    }

    pub fn release(&mut self, start: u64, size: u64) {
        let mut lo = start;
        let mut len = size;
        if let Some((&prev, &plen)) = self.free.range(..start).next_back() {
            debug_assert!(prev + plen <= start, "double release");
            if prev + plen == start {
                self.free.remove(&prev);
                lo = prev;
                len += plen;
            }
        }
        if let Some(&nlen) = self.free.get(&(start + size)) {
            self.free.remove(&(start + size));
            len += nlen;
        }
        self.free.insert(lo, len);
        self.free_bytes += size;
    }

    pub fn free_blocks(&self) -> usize {
        self.free.len()
    }
}
