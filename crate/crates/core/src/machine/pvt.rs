//! Provenance-validity table and its small set-associative buffer.
//!
//! Bit polarity: a set bit means the color is retracted. Fresh colors read
//! valid without any table write. One 128-bit PVT word holds the bits of
//! 128 consecutive colors: word index `color >> 7`, bit `color & 127`.

use std::fmt::Write as _;

use serde::Serialize;

/// Colors per 128-bit PVT word.
pub const COLORS_PER_WORD: u32 = 128;

/// Dense set of colors backed by 128-bit words, the same layout the PVT
/// uses, so a PVT snapshot is a plain clone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorSet {
    words: Vec<u128>,
    len: usize,
}

impl ColorSet {
    /// Empty set able to hold colors `0..capacity`.
    pub fn with_capacity(capacity: u64) -> Self {
        let n = capacity.div_ceil(COLORS_PER_WORD as u64).max(1) as usize;
        ColorSet { words: vec![0; n], len: 0 }
    }

    pub fn capacity(&self) -> u64 {
        self.words.len() as u64 * COLORS_PER_WORD as u64
    }

    pub fn contains(&self, color: u32) -> bool {
        self.words
            .get((color / COLORS_PER_WORD) as usize)
            .is_some_and(|w| w >> (color % COLORS_PER_WORD) & 1 == 1)
    }

    /// Returns `true` if the color was newly inserted.
    pub fn insert(&mut self, color: u32) -> bool {
        let w = &mut self.words[(color / COLORS_PER_WORD) as usize];
        let bit = 1u128 << (color % COLORS_PER_WORD);
        let fresh = *w & bit == 0;
        *w |= bit;
        self.len += usize::from(fresh);
        fresh
    }

    pub fn remove(&mut self, color: u32) -> bool {
        let w = &mut self.words[(color / COLORS_PER_WORD) as usize];
        let bit = 1u128 << (color % COLORS_PER_WORD);
        let present = *w & bit != 0;
        *w &= !bit;
        self.len -= usize::from(present);
        present
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
        self.len = 0;
    }

    pub fn word(&self, index: usize) -> u128 {
        self.words.get(index).copied().unwrap_or(0)
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros();
                rest &= rest - 1;
                Some(i as u32 * COLORS_PER_WORD + b)
            })
        })
    }

    /// Removes every member of `other` from `self`.
    pub fn subtract(&mut self, other: &ColorSet) {
        for (i, w) in self.words.iter_mut().enumerate() {
            let o = other.word(i);
            self.len -= (*w & o).count_ones() as usize;
            *w &= !o;
        }
    }

    /// Heap footprint in bytes.
    pub fn bytes(&self) -> u64 {
        self.words.len() as u64 * 16
    }
}

/// PVB state of one color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pvb {
    Valid,
    Retracted,
}

/// The table itself: one bit per color plus the base virtual address held in
/// the PVT register.
#[derive(Debug, Clone)]
pub struct Pvt {
    base: u64,
    color_bits: u32,
    retracted: ColorSet,
}

impl Pvt {
    pub fn new(base: u64, color_bits: u32) -> Self {
        Pvt {
            base,
            color_bits,
            retracted: ColorSet::with_capacity(1u64 << color_bits),
        }
    }

    /// Value of the PVT register.
    pub fn base(&self) -> u64 {
        self.base
    }

    /// Table size in bytes (`2^color_bits / 8`, at least one word).
    pub fn bytes(&self) -> u64 {
        self.retracted.bytes()
    }

    pub fn color_bits(&self) -> u32 {
        self.color_bits
    }

    /// Virtual address of the 128-bit word holding `color`'s bit.
    pub fn word_address(&self, color: u32) -> u64 {
        self.base + (color / COLORS_PER_WORD) as u64 * 16
    }

    pub fn word_at(&self, word_address: u64) -> u128 {
        self.retracted.word(((word_address - self.base) / 16) as usize)
    }

    pub fn get(&self, color: u32) -> Pvb {
        if self.retracted.contains(color) {
            Pvb::Retracted
        } else {
            Pvb::Valid
        }
    }

    pub(crate) fn set(&mut self, color: u32, state: Pvb) {
        match state {
            Pvb::Retracted => self.retracted.insert(color),
            Pvb::Valid => self.retracted.remove(color),
        };
    }

    pub(crate) fn validate_all(&mut self, colors: &ColorSet) {
        self.retracted.subtract(colors);
    }

    pub fn retracted(&self) -> &ColorSet {
        &self.retracted
    }

    /// Run-length dump over colors `1..2^color_bits`, one `lo-hi:state`
    /// line per run.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let end = (1u64 << self.color_bits) as u32;
        let mut lo = 1u32;
        while lo < end {
            let state = self.get(lo);
            let mut hi = lo;
            while hi + 1 < end && self.get(hi + 1) == state {
                hi += 1;
            }
            let name = match state {
                Pvb::Valid => "valid",
                Pvb::Retracted => "retracted",
            };
            let _ = writeln!(out, "{lo}-{hi}:{name}");
            lo = hi + 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BufferStats {
    pub hits: u64,
    pub misses: u64,
    pub invalidations: u64,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    word_address: u64,
    word: u128,
}

/// Set-associative cache of PVT words keyed by their virtual address.
///
/// Fills on every miss regardless of contents and is flushed whole on every
/// PVT write, so a hit always returns the current table word.
#[derive(Debug, Clone)]
pub struct PvtBuffer {
    ways: usize,
    entries: Vec<Option<Entry>>,
    victim: Vec<usize>,
    stats: BufferStats,
}

impl PvtBuffer {
    pub fn new(sets: usize, ways: usize) -> Self {
        PvtBuffer {
            ways,
            entries: vec![None; sets * ways],
            victim: vec![0; sets],
            stats: BufferStats::default(),
        }
    }

    pub fn sets(&self) -> usize {
        self.victim.len()
    }

    pub fn set_index(&self, word_address: u64) -> usize {
        ((word_address / 16) % self.sets() as u64) as usize
    }

    /// Returns the cached word, or reads it through `fetch` and fills a way
    /// (round-robin within the set).
    pub fn lookup(&mut self, word_address: u64, fetch: impl FnOnce() -> u128) -> u128 {
        let set = self.set_index(word_address);
        let ways = &mut self.entries[set * self.ways..(set + 1) * self.ways];
        if let Some(e) = ways.iter().flatten().find(|e| e.word_address == word_address) {
            self.stats.hits += 1;
            return e.word;
        }
        self.stats.misses += 1;
        let word = fetch();
        let v = self.victim[set];
        ways[v] = Some(Entry { word_address, word });
        self.victim[set] = (v + 1) % self.ways;
        word
    }

    pub fn invalidate_all(&mut self) {
        self.entries.iter_mut().for_each(|e| *e = None);
        self.stats.invalidations += 1;
    }

    pub fn stats(&self) -> BufferStats {
        self.stats
    }
}
