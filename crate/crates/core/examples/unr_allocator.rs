//! The run/bitmap identifier allocator: lowest-first claims, scattered
//! single frees, and a batch release in one pass.
//!
//! cargo run --example unr_allocator

use colorcap::unr::UnrState;

fn main() {
    let mut unr = UnrState::new(4096);
    let ids: Vec<u32> = (0..600).map(|_| unr.alloc_first_free().unwrap()).collect();
    println!("claimed {}..={} nodes={} bytes={}", ids[0], ids[599], unr.nodes().len(), unr.node_memory());

    // Free every third id: runs break up and bitmaps take over.
    for id in ids.iter().step_by(3) {
        unr.free_one(*id).unwrap();
    }
    println!("after scattered frees: nodes={} bytes={}", unr.nodes().len(), unr.node_memory());
    println!("lowest free is {}", unr.clone().alloc_first_free().unwrap());

    // Release everything else that is still claimed in one sorted batch.
    let rest = unr.claimed_ids();
    let passes = unr.scan_passes();
    unr.batch_release(&rest).unwrap();
    println!(
        "batch of {} -> population={} nodes={} passes={}",
        rest.len(),
        unr.population(),
        unr.nodes().len(),
        unr.scan_passes() - passes
    );
    println!("{}", unr.dump());
    unr.validate().unwrap();
}
