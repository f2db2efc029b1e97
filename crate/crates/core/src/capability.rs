//! Capability values: exact bounds, permissions, object type and the
//! validity tag.
//!
//! The object type doubles as the provenance identifier ("color") of a heap
//! allocation. Which of the two meanings applies is decided by the otype
//! threshold, see [`interpret`].

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width in bytes of one capability, and of one tagged memory word.
pub const CAP_BYTES: u64 = 16;

/// Largest color width the 24-bit serialized otype field can carry while
/// keeping all-ones free for the unsealed sentinel.
pub const MAX_COLOR_BITS: u32 = 23;

const OTYPE_FIELD_MASK: u32 = 0x00FF_FFFF;

bitflags! {
    /// Permission bits carried by a capability.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct Perms: u8 {
        const LOAD = 1 << 0;
        const STORE = 1 << 1;
        const LOAD_CAP = 1 << 2;
        const STORE_CAP = 1 << 3;
        /// Allocator-only authority: required to assign colors. Never
        /// present on capabilities handed to application code.
        const SW_VMEM = 1 << 4;
    }
}

impl Perms {
    /// Load/store of data and capabilities, the set given to heap objects.
    pub const DATA_AND_CAPS: Perms = Perms::LOAD
        .union(Perms::STORE)
        .union(Perms::LOAD_CAP)
        .union(Perms::STORE_CAP);
}

/// Raw object type field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Otype {
    /// The distinguished "no object type" value (all-ones in hardware).
    Unsealed,
    Value(u32),
}

/// How an otype is read under a given threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OtypeInterpretation {
    Unsealed,
    Colored(u32),
    Sealed,
}

/// Total mapping from (otype, threshold) to its interpretation.
///
/// Otype 0 is reserved: it is never handed out as a color and reads as
/// unsealed.
pub fn interpret(otype: Otype, otypeth: u32) -> OtypeInterpretation {
    match otype {
        Otype::Unsealed | Otype::Value(0) => OtypeInterpretation::Unsealed,
        Otype::Value(v) if v < otypeth => OtypeInterpretation::Colored(v),
        Otype::Value(_) => OtypeInterpretation::Sealed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CapError {
    #[error("derivation would widen bounds or permissions")]
    MonotonicityViolation,
    #[error("operand is sealed")]
    SealedOperand,
    #[error("operand tag is clear")]
    UntaggedOperand,
    #[error("authorizing capability lacks the required permission")]
    PermissionDenied,
    #[error("color {0} outside the assignable range")]
    ColorOutOfRange(u32),
}

/// A capability with exact (uncompressed) bounds.
///
/// `address` may sit anywhere in `[base, base + length]`; a dereference of
/// `width` bytes additionally needs `address + width <= base + length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capability {
    pub address: u64,
    pub base: u64,
    pub length: u64,
    pub perms: Perms,
    pub otype: Otype,
    pub tag: bool,
}

impl Capability {
    /// The untagged all-zero capability held by empty registers.
    pub const NULL: Capability = Capability {
        address: 0,
        base: 0,
        length: 0,
        perms: Perms::empty(),
        otype: Otype::Unsealed,
        tag: false,
    };

    /// A tagged, unsealed capability over `[base, base + length)`. Only the
    /// machine and allocators mint these; application code derives.
    pub fn root(base: u64, length: u64, perms: Perms) -> Self {
        Capability {
            address: base,
            base,
            length,
            perms,
            otype: Otype::Unsealed,
            tag: true,
        }
    }

    pub fn top(&self) -> u64 {
        self.base + self.length
    }

    pub fn interpretation(&self, otypeth: u32) -> OtypeInterpretation {
        interpret(self.otype, otypeth)
    }

    /// The color, if this capability is colored under `otypeth`.
    pub fn color(&self, otypeth: u32) -> Option<u32> {
        match self.interpretation(otypeth) {
            OtypeInterpretation::Colored(c) => Some(c),
            _ => None,
        }
    }

    /// Replaces the otype without any authority check. Used to build sealed
    /// fixtures and by the versioning baseline, which keeps its version in
    /// the otype's low bits.
    pub fn with_otype_unchecked(mut self, otype: Otype) -> Self {
        self.otype = otype;
        self
    }

    /// Returns `true` if `[lo, hi)` lies inside this capability's bounds.
    pub fn covers(&self, lo: u64, hi: u64) -> bool {
        lo >= self.base && hi >= lo && hi <= self.top()
    }
}

/// Narrows `parent` to `[new_base, new_base + new_length)` with `new_perms`.
pub fn derive(
    parent: &Capability,
    new_base: u64,
    new_length: u64,
    new_perms: Perms,
    otypeth: u32,
) -> Result<Capability, CapError> {
    if !parent.tag {
        return Err(CapError::UntaggedOperand);
    }
    if parent.interpretation(otypeth) == OtypeInterpretation::Sealed {
        return Err(CapError::SealedOperand);
    }
    let new_top = new_base
        .checked_add(new_length)
        .ok_or(CapError::MonotonicityViolation)?;
    if !parent.covers(new_base, new_top) || !parent.perms.contains(new_perms) {
        return Err(CapError::MonotonicityViolation);
    }
    Ok(Capability {
        address: new_base,
        base: new_base,
        length: new_length,
        perms: new_perms,
        otype: parent.otype,
        tag: true,
    })
}

/// Assigns `color` to an unsealed capability. `auth` must carry
/// [`Perms::SW_VMEM`].
pub fn set_color(
    cap: &Capability,
    auth: &Capability,
    color: u32,
    otypeth: u32,
) -> Result<Capability, CapError> {
    if !auth.tag {
        return Err(CapError::UntaggedOperand);
    }
    if !auth.perms.contains(Perms::SW_VMEM) {
        return Err(CapError::PermissionDenied);
    }
    if !cap.tag {
        return Err(CapError::UntaggedOperand);
    }
    if cap.interpretation(otypeth) != OtypeInterpretation::Unsealed {
        return Err(CapError::SealedOperand);
    }
    if color == 0 || color >= otypeth {
        return Err(CapError::ColorOutOfRange(color));
    }
    Ok(Capability {
        otype: Otype::Value(color),
        ..*cap
    })
}

pub fn clear_tag(cap: &Capability) -> Capability {
    Capability { tag: false, ..*cap }
}

/// Serializes the capability body into one 16-byte little-endian word.
///
/// Layout: address:4, base:4, length:4, perms:1, otype:3. The unsealed
/// otype is all-ones in the 3-byte field. The tag travels out of band.
/// Addresses and lengths must fit 32 bits, which the machine config
/// guarantees for every capability it can mint.
pub fn encode(cap: &Capability) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[0..4].copy_from_slice(&(cap.address as u32).to_le_bytes());
    out[4..8].copy_from_slice(&(cap.base as u32).to_le_bytes());
    out[8..12].copy_from_slice(&(cap.length as u32).to_le_bytes());
    out[12] = cap.perms.bits();
    let otype = match cap.otype {
        Otype::Unsealed => OTYPE_FIELD_MASK,
        Otype::Value(v) => v & OTYPE_FIELD_MASK,
    };
    out[13..16].copy_from_slice(&otype.to_le_bytes()[0..3]);
    out
}

/// Inverse of [`encode`]; the tag comes from the word's tag bit.
pub fn decode(bytes: &[u8; 16], tag: bool) -> Capability {
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as u64;
    let raw_otype = u32::from_le_bytes([bytes[13], bytes[14], bytes[15], 0]);
    Capability {
        address: word(0),
        base: word(4),
        length: word(8),
        perms: Perms::from_bits_retain(bytes[12]),
        otype: if raw_otype == OTYPE_FIELD_MASK {
            Otype::Unsealed
        } else {
            Otype::Value(raw_otype)
        },
        tag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TH: u32 = 1 << 21;

    fn parent() -> Capability {
        Capability::root(0x1000, 0x100, Perms::DATA_AND_CAPS)
    }

    fn allocator_root() -> Capability {
        Capability::root(0x1000, 0x10000, Perms::all())
    }

    #[test]
    fn derive_identity() {
        let p = parent();
        assert_eq!(derive(&p, 0x1000, 0x100, p.perms, TH).unwrap(), p);
    }

    #[test]
    fn derive_narrows() {
        let c = derive(&parent(), 0x1040, 0x10, Perms::LOAD, TH).unwrap();
        assert_eq!((c.base, c.length, c.perms), (0x1040, 0x10, Perms::LOAD));
        assert!(c.tag);
    }

    #[test]
    fn derive_rejects_widening() {
        let p = parent();
        assert_eq!(
            derive(&p, 0x1000, 0x200, p.perms, TH),
            Err(CapError::MonotonicityViolation)
        );
        assert_eq!(
            derive(&p, 0x1000, 0x100, Perms::all(), TH),
            Err(CapError::MonotonicityViolation)
        );
        assert_eq!(
            derive(&p, 0xff0, 0x20, p.perms, TH),
            Err(CapError::MonotonicityViolation)
        );
    }

    #[test]
    fn derive_rejects_untagged_and_sealed() {
        let p = parent();
        assert_eq!(
            derive(&clear_tag(&p), 0x1000, 0x10, p.perms, TH),
            Err(CapError::UntaggedOperand)
        );
        let sealed = p.with_otype_unchecked(Otype::Value(100));
        assert_eq!(
            derive(&sealed, 0x1000, 0x10, p.perms, 64),
            Err(CapError::SealedOperand)
        );
    }

    #[test]
    fn set_color_smallest() {
        let c = set_color(&parent(), &allocator_root(), 1, TH).unwrap();
        assert_eq!(c.interpretation(TH), OtypeInterpretation::Colored(1));
        assert_eq!(c, Capability { otype: Otype::Value(1), ..parent() });
    }

    #[test]
    fn set_color_requires_sw_vmem() {
        let weak = Capability::root(0x1000, 0x10000, Perms::DATA_AND_CAPS);
        assert_eq!(
            set_color(&parent(), &weak, 1, TH),
            Err(CapError::PermissionDenied)
        );
    }

    #[test]
    fn set_color_range() {
        let a = allocator_root();
        assert_eq!(set_color(&parent(), &a, TH, TH), Err(CapError::ColorOutOfRange(TH)));
        assert_eq!(set_color(&parent(), &a, 0, TH), Err(CapError::ColorOutOfRange(0)));
        let colored = set_color(&parent(), &a, 3, TH).unwrap();
        assert_eq!(set_color(&colored, &a, 4, TH), Err(CapError::SealedOperand));
    }

    #[test]
    fn interpret_piecewise() {
        assert_eq!(interpret(Otype::Unsealed, TH), OtypeInterpretation::Unsealed);
        assert_eq!(interpret(Otype::Value(5), TH), OtypeInterpretation::Colored(5));
        assert_eq!(interpret(Otype::Value(TH), TH), OtypeInterpretation::Sealed);
        assert_eq!(interpret(Otype::Value(0), TH), OtypeInterpretation::Unsealed);
    }

    #[test]
    fn clear_tag_idempotent() {
        let p = parent();
        let once = clear_tag(&p);
        assert!(!once.tag);
        assert_eq!(Capability { tag: true, ..once }, p);
        assert_eq!(clear_tag(&once), once);
    }

    #[test]
    fn encode_unsealed_is_all_ones() {
        let bytes = encode(&parent());
        assert_eq!(&bytes[13..16], &[0xff, 0xff, 0xff]);
    }

    fn arb_cap() -> impl Strategy<Value = Capability> {
        (
            0u64..1 << 31,
            0u64..1 << 31,
            0u8..32,
            prop_oneof![Just(Otype::Unsealed), (0u32..1 << 23).prop_map(Otype::Value)],
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(base, length, perms, otype, tag, pick)| Capability {
                address: base + pick % (length + 1),
                base,
                length,
                perms: Perms::from_bits_truncate(perms),
                otype,
                tag,
            })
    }

    fn arb_perms() -> impl Strategy<Value = Perms> {
        (0u8..32).prop_map(Perms::from_bits_truncate)
    }

    proptest! {
        #[test]
        fn encoding_round_trips(cap in arb_cap()) {
            prop_assert_eq!(decode(&encode(&cap), cap.tag), cap);
        }

        #[test]
        fn derivation_chains_are_monotone(
            steps in proptest::collection::vec((any::<u64>(), any::<u64>(), arb_perms()), 1..20)
        ) {
            let mut cur = Capability::root(0x10_0000, 0x10_0000, Perms::all());
            for (a, b, perms) in steps {
                let lo = cur.base + a % (cur.length + 1);
                let len = b % (cur.top() - lo + 1);
                match derive(&cur, lo, len, perms, TH) {
                    Ok(next) => {
                        prop_assert!(next.base >= cur.base && next.top() <= cur.top());
                        prop_assert!(cur.perms.contains(next.perms));
                        cur = next;
                    }
                    Err(e) => prop_assert_eq!(e, CapError::MonotonicityViolation),
                }
            }
        }

        #[test]
        fn set_color_changes_only_otype(cap in arb_cap(), color in 1u32..TH) {
            let cap = Capability { otype: Otype::Unsealed, tag: true, ..cap };
            let c = set_color(&cap, &allocator_root(), color, TH).unwrap();
            prop_assert_eq!(Capability { otype: Otype::Unsealed, ..c }, cap);
        }

        #[test]
        fn no_operation_revives_a_tag(cap in arb_cap(), color in 1u32..TH) {
            let dead = clear_tag(&cap);
            prop_assert!(!clear_tag(&dead).tag);
            prop_assert!(derive(&dead, dead.base, 0, Perms::empty(), TH).is_err());
            prop_assert!(set_color(&dead, &allocator_root(), color, TH).is_err());
        }
    }
}
