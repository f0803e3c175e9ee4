use std::collections::HashSet;

use mcpredict::reuse::{
    build_profile, profile_at_line_size, reuse_distances_naive, reuse_distances_tree, to_line_granularity,
    ReuseDistance, ReuseProfile,
};
use mcpredict::trace::{MemoryTrace, TraceEvent};
use proptest::prelude::*;

fn access_trace(addrs: &[u64]) -> MemoryTrace {
    let bb = std::sync::Arc::new(mcpredict::trace::BasicBlockId::new("f", "bb").unwrap());
    let mut ev = vec![TraceEvent::BlockStart(bb.clone())];
    ev.extend(addrs.iter().map(|&a| TraceEvent::Access(a)));
    ev.push(TraceEvent::BlockEnd(bb));
    MemoryTrace::new(ev).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tree_matches_naive(addrs in prop::collection::vec(0u64..40, 1..400)) {
        let t = access_trace(&addrs);
        prop_assert_eq!(reuse_distances_tree(&t), reuse_distances_naive(&t));
    }

    #[test]
    fn one_infinite_distance_per_distinct_address(addrs in prop::collection::vec(any::<u64>(), 1..200)) {
        let t = access_trace(&addrs);
        let d = reuse_distances_tree(&t);
        let distinct: HashSet<_> = addrs.iter().collect();
        prop_assert_eq!(d.iter().filter(|x| x.is_infinite()).count(), distinct.len());
        // A finite distance never exceeds the number of other distinct addresses.
        prop_assert!(d.iter().filter_map(|x| x.finite()).all(|x| (x as usize) < distinct.len()));
    }

    #[test]
    fn profile_probabilities_sum_to_one(addrs in prop::collection::vec(0u64..64, 1..300)) {
        let p = build_profile(&reuse_distances_tree(&access_trace(&addrs))).unwrap();
        let sum: f64 = p.iter().map(|(_, _, pr)| pr).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(p.total() as usize, addrs.len());
    }

    #[test]
    fn csv_round_trip(addrs in prop::collection::vec(0u64..4096, 1..300), line in prop::sample::select(vec![1u64, 8, 64])) {
        let p = profile_at_line_size(&access_trace(&addrs), line).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = ReuseProfile::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, p);
    }
}

fn all_sequences(len: usize, symbols: u64) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..symbols).map(move |x| {
                    let mut s = s.clone();
                    s.push(x);
                    s
                })
            })
            .collect();
    }
    out
}

#[test]
fn exhaustive_three_symbols_up_to_six() {
    let mut checked = 0;
    for len in 1..=6 {
        for seq in all_sequences(len, 3) {
            let t = access_trace(&seq);
            assert_eq!(reuse_distances_tree(&t), reuse_distances_naive(&t), "{seq:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3 + 9 + 27 + 81 + 243 + 729);
}

#[test]
fn line_granularity_merges_neighbours() {
    let t = access_trace(&[0, 8, 63, 64, 0]);
    let lines: Vec<u64> = to_line_granularity(&t, 64).unwrap().addresses().collect();
    assert_eq!(lines, vec![0, 0, 0, 1, 0]);
    let d = reuse_distances_tree(&to_line_granularity(&t, 64).unwrap());
    use ReuseDistance::{Finite as F, Infinite as Inf};
    assert_eq!(d, vec![Inf, F(0), F(0), Inf, F(1)]);
    assert!(to_line_granularity(&t, 48).is_err());
}
