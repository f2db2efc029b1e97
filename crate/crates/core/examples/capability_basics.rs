//! Deriving, coloring and encoding capabilities.
//!
//! cargo run --example capability_basics

use colorcap::capability::{decode, derive, encode, interpret, set_color, Capability, Otype, Perms};
use colorcap::config::MachineConfig;

fn main() {
    let otypeth = MachineConfig::default().otypeth;
    let heap = Capability::root(0x1000_0000, 1 << 20, Perms::all());
    println!("root      {heap:?}");

    // Narrow to a 64-byte object and drop the vmem permission.
    let obj = derive(&heap, 0x1000_0040, 64, Perms::DATA_AND_CAPS, otypeth).unwrap();
    println!("derived   base={:#x} len={} perms={:?}", obj.base, obj.length, obj.perms);

    // Widening is refused.
    println!("widen     {:?}", derive(&obj, obj.base, 128, Perms::LOAD, otypeth));

    // Only a capability carrying SW_VMEM may color.
    let colored = set_color(&obj, &heap, 7, otypeth).unwrap();
    println!("colored   {:?} -> {:?}", colored.otype, colored.interpretation(otypeth));
    println!("no auth   {:?}", set_color(&obj, &obj, 7, otypeth));

    // Otypes below the threshold are colors, at or above it seals.
    for v in [0, 1, otypeth - 1, otypeth] {
        println!("otype {v:>8} -> {:?}", interpret(Otype::Value(v), otypeth));
    }

    let bytes = encode(&colored);
    println!("encoded   {}", bytes.iter().map(|b| format!("{b:02x}")).collect::<String>());
    assert_eq!(decode(&bytes, true), colored);
}
