//! Tagged memory, the PVT and its buffer, and a revocation sweep done by
//! hand on a bare machine.
//!
//! cargo run --example tagged_machine

use colorcap::capability::{derive, set_color, Capability, Perms};
use colorcap::config::MachineConfig;
use colorcap::machine::{AccessKind, ColorSet, Machine, Pvb};

fn main() {
    let cfg = MachineConfig::with_color_bits(10);
    let mut m = Machine::new(cfg.clone()).unwrap();
    let th = m.otypeth();
    let heap = Capability::root(cfg.heap_base, cfg.heap_size, Perms::all());
    let obj = derive(&heap, cfg.heap_base, 64, Perms::DATA_AND_CAPS, th).unwrap();
    let a = set_color(&obj, &heap, 5, th).unwrap();

    m.store_data(&a, 0, b"colorcap").unwrap();
    // Keep one copy in a register and one in memory.
    m.set_reg(0, a);
    let slot = derive(&heap, cfg.heap_base + 4096, 16, Perms::DATA_AND_CAPS, th).unwrap();
    m.store_cap(&slot, 0, &a).unwrap();
    println!("read      {:?}", String::from_utf8(m.load_data(&a, 0, 8).unwrap()).unwrap());

    // Retract color 5: the next dereference faults without touching tags.
    m.pvt_set(5, Pvb::Retracted).unwrap();
    println!("retracted {:?}", m.check_access(&a, 0, 8, AccessKind::Read));
    println!("pvt       {}", m.dump_pvt().lines().next().unwrap_or(""));

    // Sweep away every capability of the retracted color, then hand the
    // color back.
    let mut targets = ColorSet::with_capacity(th as u64);
    targets.insert(5);
    let stats = m.sweep_colors(&targets);
    m.pvt_validate_all(&targets);
    println!("sweep     visited={} cleared={}", stats.visited, stats.cleared);
    println!("register  tag={}", m.reg(0).tag);
    println!("memory    tag={}", m.load_cap(&slot, 0).unwrap().tag);

    let b = m.buffer_stats();
    println!("buffer    hits={} misses={} invalidations={}", b.hits, b.misses, b.invalidations);
}
