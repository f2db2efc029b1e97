//! Scheme-independent lifetime oracle.
//!
//! Tracks, for every register, spill slot and stored capability, which
//! allocation it was derived from and where its bounds sit inside that
//! allocation. From that alone it classifies each op as temporally legal
//! or as a use-after-free / double free / invalid free, without looking at
//! the machine or the scheme.

use std::collections::HashMap;

use crate::heap::round_up;
use crate::machine::NUM_REGISTERS;

use super::trace::TraceOp;

/// Region a capability points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Region {
    #[default]
    Null,
    Stack,
    Heap(u32),
}

/// Shadow of one capability: its region plus bounds relative to the start
/// of that region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Prov {
    pub region: Region,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Legal,
    /// Not a temporal question: null or out-of-bounds operands, deriving
    /// from a dangling capability. Faults here are not counted either way.
    Neutral,
    UseAfterFree,
    DoubleFree,
    InvalidFree,
}

impl Verdict {
    pub fn is_violation(self) -> bool {
        matches!(self, Verdict::UseAfterFree | Verdict::DoubleFree | Verdict::InvalidFree)
    }
}

#[derive(Debug, Clone, Copy)]
struct Allocation {
    size: u64,
    live: bool,
}

#[derive(Debug, Clone)]
pub struct Oracle {
    allocs: Vec<Allocation>,
    regs: [Prov; NUM_REGISTERS],
    slots: HashMap<u32, Prov>,
    /// Capabilities stored through `storecap`, by region and byte offset.
    stored: HashMap<(Region, u64), Prov>,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle {
            allocs: Vec::new(),
            regs: [Prov::default(); NUM_REGISTERS],
            slots: HashMap::new(),
            stored: HashMap::new(),
        }
    }
}

impl Oracle {
    pub fn new() -> Self {
        Oracle::default()
    }

    pub fn reg(&self, r: u8) -> Prov {
        self.regs[r as usize]
    }

    pub fn slot(&self, s: u32) -> Option<Prov> {
        self.slots.get(&s).copied()
    }

    pub fn stored(&self, region: Region, offset: u64) -> Option<Prov> {
        self.stored.get(&(region, offset)).copied()
    }

    pub fn is_live(&self, id: u32) -> bool {
        self.allocs[id as usize].live
    }

    pub fn alloc_size(&self, id: u32) -> u64 {
        self.allocs[id as usize].size
    }

    pub fn live_count(&self) -> usize {
        self.allocs.iter().filter(|a| a.live).count()
    }

    fn access(&self, p: Prov, offset: u64, width: u64) -> Verdict {
        match p.region {
            Region::Heap(id) if !self.is_live(id) => Verdict::UseAfterFree,
            Region::Null => Verdict::Neutral,
            _ if offset.saturating_add(width) > p.len => Verdict::Neutral,
            _ => Verdict::Legal,
        }
    }

    /// Classifies `op` against the current state.
    pub fn verdict(&self, op: &TraceOp) -> Verdict {
        match *op {
            TraceOp::Malloc { .. }
            | TraceOp::Copy { .. }
            | TraceOp::Spill { .. }
            | TraceOp::Reload { .. }
            | TraceOp::Stack { .. } => Verdict::Legal,
            TraceOp::Free { reg } => {
                let p = self.reg(reg);
                match p.region {
                    Region::Heap(id) if !self.is_live(id) => Verdict::DoubleFree,
                    Region::Heap(id) if p.offset == 0 && p.len == self.alloc_size(id) => Verdict::Legal,
                    _ => Verdict::InvalidFree,
                }
            }
            TraceOp::Read { reg, offset, width } | TraceOp::Write { reg, offset, width } => {
                self.access(self.reg(reg), offset, width)
            }
            TraceOp::StoreCap { auth, offset, .. } | TraceOp::LoadCap { auth, offset, .. } => {
                if offset % 16 != 0 {
                    return Verdict::Neutral;
                }
                self.access(self.reg(auth), offset, 16)
            }
            TraceOp::Derive { src, offset, len, .. } => match self.access(self.reg(src), offset, len) {
                Verdict::Legal => Verdict::Legal,
                _ => Verdict::Neutral,
            },
        }
    }

    /// Updates the shadow state after `op` ran; `succeeded` is whether the
    /// machine carried it out. Failed ops change nothing, except a failed
    /// malloc, which leaves a null register.
    pub fn apply(&mut self, op: &TraceOp, succeeded: bool) {
        match *op {
            TraceOp::Malloc { reg, size } => {
                self.regs[reg as usize] = if succeeded {
                    let size = round_up(size);
                    self.allocs.push(Allocation { size, live: true });
                    Prov { region: Region::Heap(self.allocs.len() as u32 - 1), offset: 0, len: size }
                } else {
                    Prov::default()
                };
            }
            _ if !succeeded => {}
            TraceOp::Free { reg } => {
                if let Region::Heap(id) = self.reg(reg).region {
                    self.allocs[id as usize].live = false;
                }
            }
            TraceOp::Read { .. } => {}
            TraceOp::Write { reg, offset, width } => {
                let p = self.reg(reg);
                let lo = p.offset + offset;
                let first = lo - lo % 16;
                for word in (first..lo + width).step_by(16) {
                    self.stored.remove(&(p.region, word));
                }
            }
            TraceOp::Copy { dst, src } => self.regs[dst as usize] = self.reg(src),
            TraceOp::Spill { reg, slot } => {
                self.slots.insert(slot, self.reg(reg));
            }
            TraceOp::Reload { reg, slot } => {
                self.regs[reg as usize] = self.slot(slot).unwrap_or_default();
            }
            TraceOp::Derive { dst, src, offset, len } => {
                let p = self.reg(src);
                self.regs[dst as usize] = Prov { region: p.region, offset: p.offset + offset, len };
            }
            TraceOp::Stack { reg, size } => {
                self.regs[reg as usize] = Prov { region: Region::Stack, offset: 0, len: size };
            }
            TraceOp::StoreCap { auth, offset, src } => {
                let p = self.reg(auth);
                self.stored.insert((p.region, p.offset + offset), self.reg(src));
            }
            TraceOp::LoadCap { dst, auth, offset } => {
                let p = self.reg(auth);
                self.regs[dst as usize] = self.stored(p.region, p.offset + offset).unwrap_or_default();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::parse_trace;

    fn verdicts(text: &str) -> Vec<Verdict> {
        let mut o = Oracle::new();
        parse_trace(text)
            .unwrap()
            .ops()
            .map(|op| {
                let v = o.verdict(&op);
                o.apply(&op, !v.is_violation());
                v
            })
            .collect()
    }

    #[test]
    fn uaf_through_spilled_copy() {
        use Verdict::*;
        let v = verdicts("malloc r0 20\nspill r0 4\nfree r0\nmalloc r0 20\nreload r1 4\nread r1 0 8\nread r0 24 8");
        assert_eq!(v, vec![Legal, Legal, Legal, Legal, Legal, UseAfterFree, Legal]);
    }

    #[test]
    fn frees() {
        use Verdict::*;
        let v = verdicts(
            "malloc r0 64\ncopy r1 r0\nderive r2 r0 16 16\nfree r2\nstack r3 32\nfree r3\nfree r4\nfree r0\nfree r1",
        );
        assert_eq!(v, vec![Legal, Legal, Legal, InvalidFree, Legal, InvalidFree, InvalidFree, Legal, DoubleFree]);
    }

    #[test]
    fn stored_capabilities_follow_data_writes() {
        use Verdict::*;
        let v = verdicts(
            "malloc r0 64\nmalloc r1 16\nstorecap r0 16 r1\nfree r1\nloadcap r2 r0 16\nread r2 0 8\n\
             storecap r0 16 r0\nwrite r0 20 4\nloadcap r3 r0 16\nread r3 0 8",
        );
        assert_eq!(v, vec![Legal, Legal, Legal, Legal, Legal, UseAfterFree, Legal, Legal, Legal, Neutral]);
    }
}
