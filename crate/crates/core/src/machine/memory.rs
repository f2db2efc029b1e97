use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::capability::{self, Capability, CAP_BYTES};

/// Sparse word-granular memory with one validity tag per 16-byte word.
///
/// Unwritten words read as zero. The tagged-word index is ordered so sweeps
/// visit capabilities in ascending address order.
#[derive(Debug, Clone, Default)]
pub struct TaggedMemory {
    words: HashMap<u64, [u8; 16]>,
    tagged: BTreeSet<u64>,
}

fn word_of(addr: u64) -> u64 {
    addr / CAP_BYTES
}

impl TaggedMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read_bytes(&self, addr: u64, len: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(len as usize);
        let mut a = addr;
        let end = addr + len;
        while a < end {
            let w = word_of(a);
            let lo = (a % CAP_BYTES) as usize;
            let hi = ((end - w * CAP_BYTES).min(CAP_BYTES)) as usize;
            match self.words.get(&w) {
                Some(bytes) => out.extend_from_slice(&bytes[lo..hi]),
                None => out.resize(out.len() + (hi - lo), 0),
            }
            a = (w + 1) * CAP_BYTES;
        }
        out
    }

    /// Writes raw bytes. Every word touched loses its tag.
    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) {
        let mut a = addr;
        let mut src = data;
        while !src.is_empty() {
            let w = word_of(a);
            let lo = (a % CAP_BYTES) as usize;
            let n = (CAP_BYTES as usize - lo).min(src.len());
            let word = self.words.entry(w).or_insert([0; 16]);
            word[lo..lo + n].copy_from_slice(&src[..n]);
            self.tagged.remove(&w);
            src = &src[n..];
            a = (w + 1) * CAP_BYTES;
        }
    }

    /// Stores a capability at a 16-byte aligned address; the tag follows
    /// `cap.tag`.
    pub fn write_cap(&mut self, addr: u64, cap: &Capability) {
        debug_assert_eq!(addr % CAP_BYTES, 0);
        let w = word_of(addr);
        self.words.insert(w, capability::encode(cap));
        if cap.tag {
            self.tagged.insert(w);
        } else {
            self.tagged.remove(&w);
        }
    }

    pub fn read_cap(&self, addr: u64) -> Capability {
        let w = word_of(addr);
        let bytes = self.words.get(&w).copied().unwrap_or([0; 16]);
        capability::decode(&bytes, self.tagged.contains(&w))
    }

    pub fn is_tagged(&self, addr: u64) -> bool {
        self.tagged.contains(&word_of(addr))
    }

    pub fn clear_tag(&mut self, addr: u64) {
        self.tagged.remove(&word_of(addr));
    }

    pub fn tagged_count(&self) -> usize {
        self.tagged.len()
    }

    /// Addresses of tagged words in `[from, ..)`, ascending.
    pub(crate) fn tagged_from(&self, from: u64) -> impl Iterator<Item = u64> + '_ {
        self.tagged.range(word_of(from)..).map(|w| w * CAP_BYTES)
    }

    /// One line per written word:
    /// `addr=0x<hex> tag=<0|1> bytes=<32 hex chars>`, ascending.
    pub fn dump(&self) -> String {
        let mut keys: Vec<_> = self.words.keys().copied().collect();
        keys.sort_unstable();
        let mut out = String::new();
        for w in keys {
            let bytes = &self.words[&w];
            let _ = write!(
                out,
                "addr={:#010x} tag={} bytes=",
                w * CAP_BYTES,
                u8::from(self.tagged.contains(&w))
            );
            for b in bytes {
                let _ = write!(out, "{b:02x}");
            }
            out.push('\n');
        }
        out
    }
}
