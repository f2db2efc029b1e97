//! Trace text round trip and replay of the example traces.

use proptest::prelude::*;

use colorcap::config::{RunConfig, SchemeKind};
use colorcap::harness::{parse_trace, run_trace, Expectation, RandomConfig};
use colorcap::machine::FaultKind;

const BAD_UAF: &str = include_str!("../examples/traces/bad_uaf.trace");
const GOOD_REUSE: &str = include_str!("../examples/traces/good_reuse.trace");

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn display_parses_back(seed in any::<u64>(), len in 1usize..300) {
        let t = RandomConfig { seed, len, ..Default::default() }.trace();
        let again = parse_trace(&t.to_string()).unwrap();
        prop_assert_eq!(&again, &t);
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let t = RandomConfig { seed, ..Default::default() }.trace();
        for scheme in SchemeKind::ALL {
            let cfg = RunConfig::for_scheme(scheme);
            prop_assert_eq!(run_trace(&t, &cfg).unwrap(), run_trace(&t, &cfg).unwrap());
        }
    }
}

#[test]
fn example_traces_meet_their_expectations() {
    for text in [BAD_UAF, GOOD_REUSE] {
        let t = parse_trace(text).unwrap();
        let r = run_trace(&t, &RunConfig::default()).unwrap();
        assert_eq!(r.metrics.expectation_mismatches, 0, "{text}");
        assert_eq!(r.metrics.escapes() + r.metrics.false_positives, 0);
    }
}

#[test]
fn bad_uaf_under_each_scheme() {
    let t = parse_trace(BAD_UAF).unwrap();
    let expected = t.lines.iter().filter(|l| l.expect.is_some()).count();
    assert_eq!(expected, 2);
    assert!(matches!(t.lines[7].expect, Some(Expectation::Fault(FaultKind::ProvenanceRetracted))));
    let escapes = |s| run_trace(&t, &RunConfig::for_scheme(s)).unwrap().metrics.uaf_escapes;
    assert_eq!(escapes(SchemeKind::Picasso), 0);
    assert_eq!(escapes(SchemeKind::CornucopiaRof), 0);
    assert_eq!(escapes(SchemeKind::Versioning), 0);
    assert_eq!(escapes(SchemeKind::Cornucopia), 1);
    assert_eq!(escapes(SchemeKind::None), 1);
}
