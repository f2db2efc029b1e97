//! One colored allocator on a small color pool: allocate, free, dangle,
//! and watch a revocation reclaim colors.
//!
//! cargo run --example picasso_lifecycle

use colorcap::config::{RunConfig, SchemeKind, SweepMode};
use colorcap::machine::{AccessKind, Machine};
use colorcap::schemes::{Picasso, Scheme};

fn main() {
    let cfg = RunConfig { color_bits: 6, threshold_fraction: 0.1, ..RunConfig::for_scheme(SchemeKind::Picasso) };
    let mut m = Machine::new(cfg.machine_config()).unwrap();
    let mut p = Picasso::new(&m, cfg.threshold_fraction, SweepMode::Sync);
    println!("pool={} threshold={}", p.pool(), p.threshold());

    let a = p.malloc(&mut m, 48).unwrap();
    m.set_reg(0, a);
    p.free(&mut m, &a).unwrap();
    println!("dangling read: {:?}", m.check_access(&m.reg(0), 0, 8, AccessKind::Read));
    println!("double free:   {:?}", p.free(&mut m, &a));

    // Churn until the pool runs low and a revocation fires.
    for i in 0..200 {
        let c = p.malloc(&mut m, 32).unwrap();
        p.free(&mut m, &c).unwrap();
        if p.stats().revocations > 0 && i % 20 == 0 {
            println!(
                "after {:>3} pairs: revocations={} available={} pending={}",
                i + 1,
                p.stats().revocations,
                p.unr().available(),
                p.pending().len()
            );
        }
    }
    println!("stale register after sweep: tag={}", m.reg(0).tag);
    let s = p.stats();
    println!("revocations={} swept_tags={} revoked_caps={}", s.revocations, s.swept_tags, s.revoked_caps);
    let f = p.footprint();
    println!("live={} metadata={} (pvt {})", f.live_bytes, f.metadata_bytes, m.pvt().bytes());
    assert!(p.conservation_holds());
}
