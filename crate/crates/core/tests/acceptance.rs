//! Acceptance suite. Every criterion is one test that writes a single
//! `[PASS]`/`[FAIL]` line to stderr (uncaptured) before asserting.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use colorcap::config::{RunConfig, SchemeKind, SweepMode};
use colorcap::harness::{
    gen_corpus, run_corpus, run_ops, run_trace, summarize, ChurnConfig, LocalityConfig, RandomConfig, Runner, Trace,
    TraceLine, Verdict,
};
use colorcap::unr::UnrState;

fn verdict_line(n: u32, title: &str, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let ok = ok && elapsed <= limit;
    let line = format!(
        "\n[{}] criterion {n} {title}: {detail} ({:.2}s, limit {}s)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} failed: {detail}");
}

fn cfg(scheme: SchemeKind) -> RunConfig {
    RunConfig::for_scheme(scheme)
}

// ---------------------------------------------------------------------------
// 1. corpus detection

#[test]
fn criterion_1_corpus_detection() {
    let t = Instant::now();
    let cases = gen_corpus();
    let schemes = [SchemeKind::Picasso, SchemeKind::Cornucopia, SchemeKind::CornucopiaRof, SchemeKind::Versioning];
    let results = run_corpus(&cases, &schemes, &RunConfig::default()).unwrap();
    let [p, c, r, v] = schemes.map(|s| summarize(&results, s));
    let ok = cases.len() >= 40
        && p.all_detected()
        && p.false_positives == 0
        && c.detected_df == c.bad_df
        && c.detected_uaf < c.bad_uaf
        && r.all_detected()
        && v.all_detected()
        && [c, r, v].iter().all(|s| s.false_positives == 0);
    let detail = format!(
        "{} cases; picasso uaf {}/{} df {}/{} fp {}; cornucopia uaf {}/{} df {}/{}; rof uaf {}/{} df {}/{}; versioning uaf {}/{} df {}/{}",
        cases.len(),
        p.detected_uaf, p.bad_uaf, p.detected_df, p.bad_df, p.false_positives,
        c.detected_uaf, c.bad_uaf, c.detected_df, c.bad_df,
        r.detected_uaf, r.bad_uaf, r.detected_df, r.bad_df,
        v.detected_uaf, v.bad_uaf, v.detected_df, v.bad_df,
    );
    verdict_line(1, "corpus detection", ok, t.elapsed(), Duration::from_secs(10), &detail);
}

// ---------------------------------------------------------------------------
// 2. revocation frequency

/// Counter model of the colored allocator under churn: colors are only
/// counted, never named. Setup claims `live` colors, then each pair frees one
/// (pending) and claims one. A claim first revokes if fewer than `threshold`
/// colors are unclaimed and something is pending, and stalls on a revocation
/// if none are left.
fn counter_oracle(pool: u64, threshold: u64, live: u64, pairs: u64) -> u64 {
    let (mut avail, mut pending, mut revocations) = (pool, 0u64, 0u64);
    let mut claim = |avail: &mut u64, pending: &mut u64| {
        if *pending > 0 && (*avail < threshold || *avail == 0) {
            revocations += 1;
            *avail += std::mem::take(pending);
        }
        assert!(*avail > 0, "pool exhausted");
        *avail -= 1;
    };
    for _ in 0..live {
        claim(&mut avail, &mut pending);
    }
    for _ in 0..pairs {
        pending += 1;
        claim(&mut avail, &mut pending);
    }
    revocations
}

/// After the first revocation every pair-with-revocation leaves
/// `pool - live + 1` colors available, and revocation fires again once they
/// drop below the threshold.
fn closed_form(pool: u64, threshold: u64, live: u64, pairs: u64) -> u64 {
    pairs / (pool - threshold + 2 - live)
}

fn revocation_case(color_bits: u32, pairs: u64, live: u32) -> (u64, u64, u64, u64, String) {
    let pool = (1u64 << color_bits) - 1;
    let threshold = (0.01 * pool as f64).ceil() as u64;
    let expected = counter_oracle(pool, threshold, live as u64, pairs);
    assert_eq!(expected, closed_form(pool, threshold, live as u64, pairs));
    let churn = ChurnConfig::new(pairs, live, 1);
    let base = RunConfig { color_bits, ..RunConfig::default() };
    let p = run_ops(churn.ops(), &RunConfig { scheme: SchemeKind::Picasso, ..base.clone() }).unwrap();
    let c = run_ops(churn.ops(), &RunConfig { scheme: SchemeKind::Cornucopia, ..base }).unwrap();
    let detail = format!(
        "color_bits={color_bits} pairs={pairs} live={live}: oracle {expected}, picasso {}, cornucopia {} ({:.0}x)",
        p.revocations,
        c.revocations,
        c.revocations as f64 / p.revocations.max(1) as f64
    );
    (expected, p.revocations, c.revocations, threshold, detail)
}

#[test]
fn criterion_2_revocation_frequency() {
    let t = Instant::now();
    let (e, p, c, _, full) = revocation_case(21, 8_000_000, 1000);
    let desk = p == e && p.abs_diff(4) <= 1 && c >= 100 * p;
    let desk_time = t.elapsed();
    let t2 = Instant::now();
    let (e2, p2, c2, _, ci) = revocation_case(16, 400_000, 1000);
    let scaled = p2 == e2 && p2 > 0 && c2 >= 100 * p2;
    let ci_time = t2.elapsed();
    let ok = scaled && ci_time <= Duration::from_secs(10);
    verdict_line(
        2,
        "revocation frequency",
        desk && ok,
        desk_time,
        Duration::from_secs(300),
        &format!("{full}; scaled {ci} in {:.2}s", ci_time.as_secs_f64()),
    );
}

// ---------------------------------------------------------------------------
// 3. unr equivalence

fn unr_interleaving(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let total: u32 = match rng.gen_range(0..4) {
        0 => rng.gen_range(1..=64),
        1 => rng.gen_range(65..=2048),
        2 => rng.gen_range(2049..=20_000),
        _ => rng.gen_range(20_001..=100_000),
    };
    let mut unr = UnrState::new(total);
    let mut oracle: BTreeSet<u32> = BTreeSet::new();
    let ops = rng.gen_range(20..120);
    for _ in 0..ops {
        match rng.gen_range(0..10) {
            0..=5 => {
                let burst = rng.gen_range(1..=40);
                for _ in 0..burst {
                    let want = (1..=total).find(|id| !oracle.contains(id));
                    match (unr.alloc_first_free(), want) {
                        (Ok(id), Some(w)) if id == w => {
                            oracle.insert(id);
                        }
                        (Err(_), None) => {}
                        (got, want) => return Err(format!("alloc {got:?}, oracle {want:?}")),
                    }
                }
            }
            6..=7 => {
                if let Some(&id) = oracle.iter().nth(rng.gen_range(0..oracle.len().max(1))) {
                    unr.free_one(id).map_err(|e| format!("free_one({id}): {e:?}"))?;
                    oracle.remove(&id);
                }
            }
            _ => {
                let mut ids: Vec<u32> = oracle.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
                ids.shuffle(rng);
                ids.truncate(rng.gen_range(0..=ids.len()));
                ids.sort_unstable();
                let before = unr.scan_passes();
                unr.batch_release(&ids).map_err(|e| format!("batch_release: {e:?}"))?;
                if unr.scan_passes() - before != 1 {
                    return Err(format!("batch of {} took {} passes", ids.len(), unr.scan_passes() - before));
                }
                for id in &ids {
                    oracle.remove(id);
                }
            }
        }
        if unr.population() as usize != oracle.len() {
            return Err("population differs".into());
        }
    }
    unr.validate()?;
    if unr.claimed_ids() != oracle.iter().copied().collect::<Vec<_>>() {
        return Err("claimed sets differ".into());
    }
    Ok(())
}

#[test]
fn criterion_3_unr_equivalence() {
    let t = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Err(e) = unr_interleaving(&mut rng) {
            failures.push(format!("seed {seed}: {e}"));
        }
    }
    let detail = format!(
        "10000 interleavings, {} mismatches{}",
        failures.len(),
        failures.first().map(|f| format!(", first {f}")).unwrap_or_default()
    );
    verdict_line(3, "unr equivalence", failures.is_empty(), t.elapsed(), Duration::from_secs(60), &detail);
}

// ---------------------------------------------------------------------------
// 4. PVT buffer

fn outcomes(trace: &Trace, cfg: &RunConfig) -> Vec<String> {
    run_trace(trace, cfg).unwrap().records.iter().map(|r| r.outcome.to_string()).collect()
}

#[test]
fn criterion_4_pvt_buffer() {
    let t = Instant::now();
    let mut traces: Vec<(Trace, u32)> = gen_corpus().into_iter().map(|c| (c.trace, 21)).collect();
    for seed in 0..200 {
        traces.push((RandomConfig { seed, ..Default::default() }.trace(), 8));
    }
    let churn = ChurnConfig { stale: 8, inject_rate: 0.05, reads: true, ..ChurnConfig::new(5000, 50, 3) };
    traces.push((churn.trace(), 7));
    traces.push((LocalityConfig::default().trace(), 21));
    let mut differing = 0;
    for (trace, color_bits) in &traces {
        for sweep in [SweepMode::Sync, SweepMode::Windowed(4)] {
            let on = RunConfig { color_bits: *color_bits, sweep, ..cfg(SchemeKind::Picasso) };
            let off = RunConfig { pvt_buffer: false, ..on.clone() };
            if outcomes(trace, &on) != outcomes(trace, &off) {
                differing += 1;
            }
        }
    }
    let loc = run_trace(&LocalityConfig::default().trace(), &cfg(SchemeKind::Picasso)).unwrap().metrics;
    let rate = loc.pvt_buffer_hit_rate();
    let ok = differing == 0 && rate > 0.90;
    let detail = format!(
        "{} trace/sweep pairs, {differing} differ with buffer off; locality hit rate {:.4} ({} hits / {} lookups)",
        traces.len() * 2,
        rate,
        loc.pvt_buffer_hits,
        loc.pvt_buffer_hits + loc.pvt_buffer_misses
    );
    verdict_line(4, "pvt buffer", ok, t.elapsed(), Duration::from_secs(10), &detail);
}

// ---------------------------------------------------------------------------
// 5. memory accounting

#[test]
fn criterion_5_memory_accounting() {
    let t = Instant::now();
    let churn = ChurnConfig { sizes: vec![32, 64, 128, 256], ..ChurnConfig::new(100_000, 500, 5) };
    let color_bits = 14;
    let mut runners: Vec<Runner> = [SchemeKind::None, SchemeKind::Picasso, SchemeKind::Cornucopia]
        .iter()
        .map(|&s| Runner::new(&RunConfig { color_bits, ..cfg(s) }).unwrap())
        .collect();
    let pvt = runners[1].machine().pvt().bytes();
    let mut identities = true;
    let mut unr_max = 0u64;
    for op in churn.ops() {
        let line = TraceLine { op, expect: None };
        for r in runners.iter_mut() {
            r.step(&line);
        }
        let f: Vec<_> = runners.iter().map(|r| r.scheme().footprint()).collect();
        // Same program, same live set under every scheme.
        identities &= f[0].live_bytes == f[1].live_bytes && f[1].live_bytes == f[2].live_bytes;
        identities &= f[0].quarantine_bytes == 0 && f[0].metadata_bytes == 0;
        identities &= f[1].quarantine_bytes == 0 && f[1].metadata_bytes >= pvt;
        identities &= f.iter().all(|x| x.resident() == x.live_bytes + x.quarantine_bytes + x.metadata_bytes);
        unr_max = unr_max.max(f[1].metadata_bytes - pvt);
    }
    let [n, p, c] = [&runners[0], &runners[1], &runners[2]].map(|r| r.metrics());
    let q = RunConfig::default().quarantine_fraction;
    let c_over = c.peak_resident_bytes - n.peak_resident_bytes;
    let p_over = p.peak_resident_bytes - n.peak_resident_bytes;
    let needed = (q * n.peak_live_bytes as f64).ceil() as u64;
    let ok = identities
        && n.peak_resident_bytes == n.peak_live_bytes
        && c.peak_quarantine_bytes >= needed
        && c_over >= needed
        && p.revocations > 0
        && p_over >= pvt
        && p_over <= 2 * pvt + unr_max
        && p.peak_metadata_bytes >= 2 * pvt
        && p.peak_metadata_bytes <= 2 * pvt + unr_max;
    let detail = format!(
        "none peak {}; cornucopia +{} (quarantine peak {} >= {needed}); picasso +{} (pvt {pvt}, unr max {unr_max}, peak metadata {}, {} revocations); identities {}",
        n.peak_resident_bytes,
        c_over,
        c.peak_quarantine_bytes,
        p_over,
        p.peak_metadata_bytes,
        p.revocations,
        if identities { "hold" } else { "broken" }
    );
    verdict_line(5, "memory accounting", ok, t.elapsed(), Duration::from_secs(30), &detail);
}

// ---------------------------------------------------------------------------
// 6. soundness

#[test]
fn criterion_6_soundness() {
    let t = Instant::now();
    let (mut violations, mut disagreements, mut legal) = (0u64, 0u64, 0u64);
    for seed in 0..1000 {
        let trace = RandomConfig { seed, ..Default::default() }.trace();
        let r = run_trace(&trace, &cfg(SchemeKind::Picasso)).unwrap();
        for rec in &r.records {
            let faulted = rec.outcome.fault_kind().is_some();
            match rec.verdict {
                v if v.is_violation() => {
                    violations += 1;
                    disagreements += u64::from(!faulted);
                }
                Verdict::Legal => {
                    legal += 1;
                    disagreements += u64::from(faulted);
                }
                _ => {}
            }
        }
        // The runner's own counters must tell the same story.
        disagreements += r.metrics.escapes() + r.metrics.false_positives;
    }
    let wraps = ChurnConfig { stale: 40, inject_rate: 0.2, ..ChurnConfig::new(4000, 1, 9) };
    let v_off = run_ops(wraps.ops(), &RunConfig { version_fallback: false, ..cfg(SchemeKind::Versioning) }).unwrap();
    let v_on = run_ops(wraps.ops(), &cfg(SchemeKind::Versioning)).unwrap();
    let ok = violations > 0 && disagreements == 0 && v_off.escapes() >= 1;
    let detail = format!(
        "1000 random traces: {violations} violations, {legal} legal ops, {disagreements} disagreements; versioning with wraps: {} escapes of {} violations (fallback on: {})",
        v_off.escapes(),
        v_off.violations,
        v_on.escapes()
    );
    verdict_line(6, "soundness", ok, t.elapsed(), Duration::from_secs(120), &detail);
}

// ---------------------------------------------------------------------------
// 7. revoke-on-free cost

#[test]
fn criterion_7_rof_cost() {
    let t = Instant::now();
    let churn = ChurnConfig::new(200_000, 100, 7);
    let base = RunConfig { color_bits: 16, ..RunConfig::default() };
    let p = run_ops(churn.ops(), &RunConfig { scheme: SchemeKind::Picasso, ..base.clone() }).unwrap();
    let r = run_ops(churn.ops(), &RunConfig { scheme: SchemeKind::CornucopiaRof, ..base }).unwrap();
    let ok = p.swept_tags > 0 && r.swept_tags >= 100 * p.swept_tags;
    let detail = format!(
        "swept_tags rof {} vs picasso {} ({:.0}x)",
        r.swept_tags,
        p.swept_tags,
        r.swept_tags as f64 / p.swept_tags.max(1) as f64
    );
    verdict_line(7, "revoke-on-free cost", ok, t.elapsed(), Duration::from_secs(60), &detail);
}
