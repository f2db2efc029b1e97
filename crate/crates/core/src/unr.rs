//! Compressed allocator for provenance identifiers.
//!
//! The identifier space `1..=total` is stored as an ordered sequence of
//! nodes. A node is either a run of identifiers sharing one state or a
//! fixed-size bitmap that replaced several short runs. Allocation always
//! returns the lowest available identifier; release comes in two flavors,
//! one id at a time or a sorted batch applied in a single forward pass.
//!
//! Canonical form, maintained after every mutation:
//! - adjacent runs never share a state,
//! - bitmaps are never uniform (a uniform bitmap dissolves into a run),
//! - a bitmap is only created where it replaces at least three runs, which
//!   is exactly where it becomes smaller than those runs.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

/// Identifiers covered by one bitmap node.
pub const BITMAP_BITS: u32 = 512;
/// Accounting cost of one list node (length, payload pointer, two links).
pub const NODE_BYTES: u64 = 40;
/// Accounting cost of the bitmap payload.
pub const BITMAP_BYTES: u64 = BITMAP_BITS as u64 / 8;

const WORDS: usize = BITMAP_BITS as usize / 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdState {
    Claimed,
    Available,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum UnrError {
    #[error("identifier pool exhausted")]
    Exhausted,
    #[error("identifier {0} is not claimed")]
    NotClaimed(u32),
    #[error("identifier {0} is outside the pool")]
    OutOfRange(u32),
    #[error("batch is not strictly ascending at {0}")]
    Unsorted(u32),
}

/// One element of the node list. Bitmap bit `i` set means the `i`-th id of
/// the node is claimed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnrNode {
    Run { state: IdState, len: u32 },
    Bitmap { bits: [u64; WORDS], len: u32 },
}

fn bit(bits: &[u64; WORDS], i: u32) -> bool {
    bits[(i / 64) as usize] >> (i % 64) & 1 == 1
}

fn put_bit(bits: &mut [u64; WORDS], i: u32, on: bool) {
    let mask = 1u64 << (i % 64);
    if on {
        bits[(i / 64) as usize] |= mask;
    } else {
        bits[(i / 64) as usize] &= !mask;
    }
}

fn ones(bits: &[u64; WORDS]) -> u32 {
    bits.iter().map(|w| w.count_ones()).sum()
}

impl UnrNode {
    /// Identifiers covered; nodes are never empty.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u32 {
        match self {
            UnrNode::Run { len, .. } | UnrNode::Bitmap { len, .. } => *len,
        }
    }

    pub fn claimed(&self) -> u32 {
        match self {
            UnrNode::Run { state: IdState::Claimed, len } => *len,
            UnrNode::Run { .. } => 0,
            UnrNode::Bitmap { bits, .. } => ones(bits),
        }
    }

    pub fn bytes(&self) -> u64 {
        match self {
            UnrNode::Run { .. } => NODE_BYTES,
            UnrNode::Bitmap { .. } => NODE_BYTES + BITMAP_BYTES,
        }
    }

    fn state_at(&self, offset: u32) -> IdState {
        match self {
            UnrNode::Run { state, .. } => *state,
            UnrNode::Bitmap { bits, .. } if bit(bits, offset) => IdState::Claimed,
            UnrNode::Bitmap { .. } => IdState::Available,
        }
    }
}

/// Streams nodes into canonical form: merges equal runs, dissolves uniform
/// bitmaps, and converts trailing short runs into a bitmap as soon as that
/// saves memory ("first good bitmap", no lookahead).
#[derive(Default)]
struct Builder {
    out: Vec<UnrNode>,
}

impl Builder {
    fn push_run(&mut self, state: IdState, len: u32) {
        if len == 0 {
            return;
        }
        match self.out.last_mut() {
            Some(UnrNode::Run { state: s, len: l }) if *s == state => *l += len,
            Some(UnrNode::Bitmap { bits, len: bl }) if *bl + len <= BITMAP_BITS => {
                if state == IdState::Claimed {
                    for i in *bl..*bl + len {
                        put_bit(bits, i, true);
                    }
                }
                *bl += len;
                return;
            }
            _ => self.out.push(UnrNode::Run { state, len }),
        }
        self.form_bitmap();
    }

    fn push_bitmap(&mut self, bits: [u64; WORDS], len: u32) {
        match ones(&bits) {
            0 => return self.push_run(IdState::Available, len),
            n if n == len => return self.push_run(IdState::Claimed, len),
            _ => {}
        }
        if let Some(UnrNode::Bitmap { bits: prev, len: pl }) = self.out.last_mut() {
            if *pl + len <= BITMAP_BITS {
                for i in 0..len {
                    put_bit(prev, *pl + i, bit(&bits, i));
                }
                *pl += len;
                return;
            }
        }
        self.out.push(UnrNode::Bitmap { bits, len });
    }

    fn push(&mut self, node: UnrNode) {
        match node {
            UnrNode::Run { state, len } => self.push_run(state, len),
            UnrNode::Bitmap { bits, len } => self.push_bitmap(bits, len),
        }
    }

    fn form_bitmap(&mut self) {
        let mut count = 0;
        let mut total = 0;
        for node in self.out.iter().rev() {
            match node {
                UnrNode::Run { len, .. } if total + len <= BITMAP_BITS => {
                    count += 1;
                    total += len;
                }
                _ => break,
            }
        }
        if count < 3 {
            return;
        }
        let mut bits = [0u64; WORDS];
        let mut pos = 0;
        for node in self.out.drain(self.out.len() - count..) {
            if let UnrNode::Run { state, len } = node {
                if state == IdState::Claimed {
                    for i in pos..pos + len {
                        put_bit(&mut bits, i, true);
                    }
                }
                pos += len;
            }
        }
        self.push_bitmap(bits, total);
    }
}

/// The allocator state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnrState {
    nodes: Vec<UnrNode>,
    total: u32,
    population: u32,
    bitmaps: usize,
    scan_passes: u64,
}

impl UnrState {
    /// Pool of identifiers `1..=total`, all available.
    pub fn new(total: u32) -> Self {
        assert!(total > 0, "empty identifier pool");
        UnrState {
            nodes: vec![UnrNode::Run { state: IdState::Available, len: total }],
            total,
            population: 0,
            bitmaps: 0,
            scan_passes: 0,
        }
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Number of claimed identifiers.
    pub fn population(&self) -> u32 {
        self.population
    }

    pub fn available(&self) -> u32 {
        self.total - self.population
    }

    pub fn nodes(&self) -> &[UnrNode] {
        &self.nodes
    }

    /// Bytes used by the node list under the fixed per-node accounting.
    pub fn node_memory(&self) -> u64 {
        self.nodes.len() as u64 * NODE_BYTES + self.bitmaps as u64 * BITMAP_BYTES
    }

    /// Full traversals of the node list performed so far.
    pub fn scan_passes(&self) -> u64 {
        self.scan_passes
    }

    /// Claims and returns the lowest available identifier.
    ///
    /// The lowest available id always lies in the first or second node: a
    /// leading claimed run is followed by something that is not claimed
    /// throughout.
    pub fn alloc_first_free(&mut self) -> Result<u32, UnrError> {
        if self.population == self.total {
            return Err(UnrError::Exhausted);
        }
        let (idx, start) = match &self.nodes[0] {
            UnrNode::Run { state: IdState::Claimed, len } => (1, *len),
            _ => (0, 0),
        };
        let (id, replacement) = match &self.nodes[idx] {
            UnrNode::Run { state: IdState::Available, len } => (
                start + 1,
                vec![
                    UnrNode::Run { state: IdState::Claimed, len: 1 },
                    UnrNode::Run { state: IdState::Available, len: len - 1 },
                ],
            ),
            UnrNode::Bitmap { bits, len } => {
                let off = (0..*len).find(|&i| !bit(bits, i)).expect("non-uniform bitmap");
                let mut bits = *bits;
                put_bit(&mut bits, off, true);
                (start + off + 1, vec![UnrNode::Bitmap { bits, len: *len }])
            }
            UnrNode::Run { .. } => unreachable!("adjacent claimed runs"),
        };
        self.splice(idx..idx + 1, replacement);
        self.population += 1;
        Ok(id)
    }

    /// Releases one identifier: locate its node, rewrite it, re-normalize
    /// the neighbourhood.
    pub fn free_one(&mut self, id: u32) -> Result<(), UnrError> {
        if id == 0 || id > self.total {
            return Err(UnrError::OutOfRange(id));
        }
        let (idx, start) = self.locate(id);
        let off = id - 1 - start;
        let replacement = match &self.nodes[idx] {
            UnrNode::Run { state: IdState::Available, .. } => return Err(UnrError::NotClaimed(id)),
            UnrNode::Run { state: IdState::Claimed, len } => vec![
                UnrNode::Run { state: IdState::Claimed, len: off },
                UnrNode::Run { state: IdState::Available, len: 1 },
                UnrNode::Run { state: IdState::Claimed, len: len - off - 1 },
            ],
            UnrNode::Bitmap { bits, len } => {
                if !bit(bits, off) {
                    return Err(UnrError::NotClaimed(id));
                }
                let mut bits = *bits;
                put_bit(&mut bits, off, false);
                vec![UnrNode::Bitmap { bits, len: *len }]
            }
        };
        self.splice(idx..idx + 1, replacement);
        self.population -= 1;
        Ok(())
    }

    /// Releases a strictly ascending batch of claimed identifiers in one
    /// forward pass over the node list. Fails without modifying the state
    /// if any id is unclaimed, out of range or out of order.
    pub fn batch_release(&mut self, ids: &[u32]) -> Result<(), UnrError> {
        self.scan_passes += 1;
        if ids.first() == Some(&0) {
            return Err(UnrError::OutOfRange(0));
        }
        let mut b = Builder::default();
        let mut pending = ids.iter().copied().peekable();
        let mut prev = 0u32;
        let mut next_id = |end: u32| -> Result<Option<u32>, UnrError> {
            match pending.peek().copied() {
                Some(id) if id <= end => {
                    pending.next();
                    if id <= prev {
                        return Err(UnrError::Unsorted(id));
                    }
                    prev = id;
                    Ok(Some(id))
                }
                Some(id) if id <= prev => Err(UnrError::Unsorted(id)),
                _ => Ok(None),
            }
        };
        let mut start = 0u32;
        for node in &self.nodes {
            let end = start + node.len();
            match node {
                UnrNode::Run { state: IdState::Available, len } => {
                    if let Some(id) = next_id(end)? {
                        return Err(UnrError::NotClaimed(id));
                    }
                    b.push_run(IdState::Available, *len);
                }
                UnrNode::Run { state: IdState::Claimed, .. } => {
                    let mut cur = start;
                    while let Some(id) = next_id(end)? {
                        b.push_run(IdState::Claimed, id - 1 - cur);
                        b.push_run(IdState::Available, 1);
                        cur = id;
                    }
                    b.push_run(IdState::Claimed, end - cur);
                }
                UnrNode::Bitmap { bits, len } => {
                    let mut bits = *bits;
                    while let Some(id) = next_id(end)? {
                        let off = id - 1 - start;
                        if !bit(&bits, off) {
                            return Err(UnrError::NotClaimed(id));
                        }
                        put_bit(&mut bits, off, false);
                    }
                    b.push_bitmap(bits, *len);
                }
            }
            start = end;
        }
        if let Some(id) = next_id(u32::MAX)? {
            return Err(UnrError::OutOfRange(id));
        }
        self.nodes = b.out;
        self.bitmaps = self.nodes.iter().filter(|n| matches!(n, UnrNode::Bitmap { .. })).count();
        self.population -= ids.len() as u32;
        Ok(())
    }

    pub fn is_claimed(&self, id: u32) -> bool {
        if id == 0 || id > self.total {
            return false;
        }
        let mut start = 0;
        for node in &self.nodes {
            if id <= start + node.len() {
                return node.state_at(id - 1 - start) == IdState::Claimed;
            }
            start += node.len();
        }
        false
    }

    /// All claimed identifiers, ascending.
    pub fn claimed_ids(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.population as usize);
        let mut start = 0;
        for node in &self.nodes {
            match node {
                UnrNode::Run { state: IdState::Claimed, len } => out.extend(start + 1..=start + len),
                UnrNode::Run { .. } => {}
                UnrNode::Bitmap { bits, len } => {
                    out.extend((0..*len).filter(|&i| bit(bits, i)).map(|i| start + 1 + i))
                }
            }
            start += node.len();
        }
        out
    }

    /// `'1'` for claimed, `'0'` for available, over ids `lo..=hi`.
    pub fn pattern(&self, lo: u32, hi: u32) -> String {
        (lo..=hi).map(|id| if self.is_claimed(id) { '1' } else { '0' }).collect()
    }

    /// One token per node: `R:c:<len>`, `R:a:<len>` or
    /// `B:len=<len>:<hex>`, where the hex digits spell the bitmap in id
    /// order, most significant bit of each nibble first.
    pub fn dump(&self) -> String {
        let mut parts = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            match node {
                UnrNode::Run { state, len } => {
                    let s = if *state == IdState::Claimed { 'c' } else { 'a' };
                    parts.push(format!("R:{s}:{len}"));
                }
                UnrNode::Bitmap { bits, len } => {
                    let mut hex = format!("B:len={len}:");
                    for nib in 0..len.div_ceil(4) {
                        let mut v = 0u8;
                        for k in 0..4 {
                            let i = nib * 4 + k;
                            v = v << 1 | u8::from(i < *len && bit(bits, i));
                        }
                        let _ = write!(hex, "{v:x}");
                    }
                    parts.push(hex);
                }
            }
        }
        parts.join(" ")
    }

    /// Checks the canonical-form and accounting invariants.
    pub fn validate(&self) -> Result<(), String> {
        let covered: u64 = self.nodes.iter().map(|n| n.len() as u64).sum();
        if covered != self.total as u64 {
            return Err(format!("nodes cover {covered} ids, pool has {}", self.total));
        }
        let claimed: u64 = self.nodes.iter().map(|n| n.claimed() as u64).sum();
        if claimed != self.population as u64 {
            return Err(format!("population {} but {claimed} claimed", self.population));
        }
        for (i, pair) in self.nodes.windows(2).enumerate() {
            if let [UnrNode::Run { state: a, .. }, UnrNode::Run { state: b, .. }] = pair {
                if a == b {
                    return Err(format!("mergeable runs at {i}"));
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                UnrNode::Run { len: 0, .. } => return Err(format!("empty run at {i}")),
                UnrNode::Bitmap { bits, len } => {
                    let n = ones(bits);
                    if *len > BITMAP_BITS || *len < 3 || n == 0 || n == *len {
                        return Err(format!("degenerate bitmap at {i}"));
                    }
                    if bits.iter().enumerate().any(|(w, &word)| {
                        let lo = w as u32 * 64;
                        let valid = len.saturating_sub(lo).min(64);
                        valid < 64 && word >> valid != 0
                    }) {
                        return Err(format!("bits past the end of bitmap {i}"));
                    }
                }
                _ => {}
            }
        }
        let bitmaps = self.nodes.iter().filter(|n| matches!(n, UnrNode::Bitmap { .. })).count();
        if bitmaps != self.bitmaps {
            return Err("stale bitmap count".into());
        }
        Ok(())
    }

    /// Index and first-id offset of the node containing `id`.
    fn locate(&mut self, id: u32) -> (usize, u32) {
        self.scan_passes += 1;
        let mut start = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if id <= start + node.len() {
                return (i, start);
            }
            start += node.len();
        }
        unreachable!("nodes cover the pool")
    }

    /// Replaces `range` with `replacement`, re-normalizing it together with
    /// one neighbour on each side.
    fn splice(&mut self, range: Range<usize>, replacement: Vec<UnrNode>) {
        let lo = range.start.saturating_sub(1);
        let hi = (range.end + 1).min(self.nodes.len());
        let mut b = Builder::default();
        for node in self.nodes[lo..range.start].iter().cloned() {
            b.push(node);
        }
        for node in replacement {
            b.push(node);
        }
        for node in self.nodes[range.end..hi].iter().cloned() {
            b.push(node);
        }
        let removed = self.nodes.splice(lo..hi, b.out.iter().cloned());
        let old = removed.filter(|n| matches!(n, UnrNode::Bitmap { .. })).count();
        let new = b.out.iter().filter(|n| matches!(n, UnrNode::Bitmap { .. })).count();
        self.bitmaps = self.bitmaps + new - old;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claimed_upto(total: u32, n: u32) -> UnrState {
        let mut u = UnrState::new(total);
        for i in 1..=n {
            assert_eq!(u.alloc_first_free(), Ok(i));
        }
        u
    }

    #[test]
    fn fresh_state() {
        let mut u = UnrState::new(1000);
        assert_eq!(u.population(), 0);
        assert_eq!(u.nodes().len(), 1);
        assert_eq!(u.alloc_first_free(), Ok(1));
    }

    #[test]
    fn sequential_claims_form_one_run() {
        let mut u = claimed_upto(1000, 50);
        assert_eq!(u.dump(), "R:c:50 R:a:950");
        assert_eq!(u.population(), 50);
        assert_eq!(u.nodes().len(), 2);
        assert_eq!(u.alloc_first_free(), Ok(51));
    }

    #[test]
    fn exhaustion() {
        let mut u = claimed_upto(10, 10);
        assert_eq!(u.alloc_first_free(), Err(UnrError::Exhausted));
        assert_eq!(u.dump(), "R:c:10");
    }

    #[test]
    fn free_inside_a_run_forms_a_bitmap() {
        let mut u = claimed_upto(1000, 8);
        u.free_one(4).unwrap();
        u.free_one(5).unwrap();
        assert_eq!(u.pattern(1, 8), "11100111");
        assert_eq!(u.dump(), "B:len=8:e7 R:a:992");
        u.validate().unwrap();
        assert_eq!(u.alloc_first_free(), Ok(4));
    }

    #[test]
    fn free_errors() {
        let mut u = claimed_upto(100, 3);
        assert_eq!(u.free_one(50), Err(UnrError::NotClaimed(50)));
        assert_eq!(u.free_one(0), Err(UnrError::OutOfRange(0)));
        assert_eq!(u.free_one(101), Err(UnrError::OutOfRange(101)));
    }

    #[test]
    fn claim_free_round_trip() {
        let fresh = UnrState::new(64);
        let mut u = fresh.clone();
        u.alloc_first_free().unwrap();
        u.free_one(1).unwrap();
        assert_eq!(u.nodes(), fresh.nodes());
        assert_eq!(u.population(), 0);
    }

    #[test]
    fn release_everything() {
        let mut u = claimed_upto(5000, 3000);
        u.free_one(17).unwrap();
        u.alloc_first_free().unwrap();
        let ids: Vec<u32> = (1..=3000).collect();
        u.batch_release(&ids).unwrap();
        assert_eq!(u.dump(), "R:a:5000");
        assert_eq!(u.population(), 0);
    }

    #[test]
    fn batch_is_atomic() {
        let mut u = claimed_upto(100, 10);
        let before = u.clone();
        assert_eq!(u.batch_release(&[2, 4, 50]), Err(UnrError::NotClaimed(50)));
        assert_eq!(u.nodes(), before.nodes());
        assert_eq!(u.batch_release(&[4, 2]), Err(UnrError::Unsorted(2)));
        assert_eq!(u.batch_release(&[2, 2]), Err(UnrError::Unsorted(2)));
        assert_eq!(u.batch_release(&[3, 101]), Err(UnrError::OutOfRange(101)));
        assert_eq!(u.nodes(), before.nodes());
        assert_eq!(u.population(), 10);
    }

    #[test]
    fn batch_is_one_pass() {
        let mut u = claimed_upto(10_000, 5000);
        let passes = u.scan_passes();
        let ids: Vec<u32> = (1..=5000).step_by(3).collect();
        u.batch_release(&ids).unwrap();
        assert_eq!(u.scan_passes() - passes, 1);
        u.validate().unwrap();
    }

    #[test]
    fn alternating_pattern_is_cheaper_as_bitmaps() {
        // Oracle: cost of the same membership stored as plain runs.
        let mut u = claimed_upto(4096, 512);
        let evens: Vec<u32> = (2..=512).step_by(2).collect();
        u.batch_release(&evens).unwrap();
        u.validate().unwrap();
        let bitmaps = u.nodes().iter().filter(|n| matches!(n, UnrNode::Bitmap { .. })).count();
        assert!(bitmaps > 0);
        // 512 alternating runs over ids 1..=512 plus the trailing available run,
        // which merges with the final released id.
        let run_only = 512 * NODE_BYTES;
        assert!(u.node_memory() < run_only, "{} vs {run_only}", u.node_memory());
        assert_eq!(u.pattern(1, 6), "101010");
    }

    #[test]
    fn bitmap_dissolves_when_uniform() {
        let mut u = claimed_upto(1000, 8);
        u.free_one(4).unwrap();
        assert!(matches!(u.nodes()[0], UnrNode::Bitmap { .. }));
        assert_eq!(u.alloc_first_free(), Ok(4));
        assert_eq!(u.dump(), "R:c:8 R:a:992");
        u.validate().unwrap();
    }
}
