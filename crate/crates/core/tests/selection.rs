//! Greedy coverage selection checked against the exhaustive optimum.

use kprune_core::coverage::{
    brute_force_optimum, coverage_rate, filter_gain, select_greedy, CoverageInstance, TieBreak,
};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random per-channel partitions of `n` filters, like the clustering stage
/// produces: every filter lands in exactly one cluster per channel.
fn random_partitions(rng: &mut ChaCha8Rng, n: usize, channels: usize) -> Vec<Vec<Vec<usize>>> {
    (0..channels)
        .map(|_| {
            let groups = rng.random_range(1..=n);
            let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); groups];
            for f in 0..n {
                clusters[rng.random_range(0..groups)].push(f);
            }
            clusters.retain(|c| !c.is_empty());
            clusters
        })
        .collect()
}

fn instance_from(rng: &mut ChaCha8Rng, n: usize, channels: usize) -> CoverageInstance {
    let parts = random_partitions(rng, n, channels);
    CoverageInstance::from_clusters(n, parts.iter())
        .unwrap()
        .with_norms((0..n).map(|_| rng.random_range(0.01..10.0)).collect())
        .unwrap()
}

#[test]
fn greedy_meets_approximation_bound_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for _ in 0..300 {
        let n = rng.random_range(1..=12);
        let channels = rng.random_range(1..=6);
        let inst = instance_from(&mut rng, n, channels);
        let k = rng.random_range(1..=n);
        let tie = [TieBreak::Random, TieBreak::MaxL2, TieBreak::MinL2]
            [rng.random_range(0..3usize)];
        let res = select_greedy(&inst, k, tie, &mut rng).unwrap();
        let opt = brute_force_optimum(&inst, k).unwrap();
        let bound = ((1.0 - 1.0 / std::f64::consts::E) * opt as f64).ceil() as usize;
        assert!(
            res.covered >= bound,
            "greedy {} below bound {} (opt {opt}, n {n}, k {k})",
            res.covered,
            bound
        );
        assert!(res.covered <= opt);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn greedy_selection_invariants(seed in 0u64..1_000_000, n in 1usize..=10, channels in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance_from(&mut rng, n, channels);
        let k = rng.random_range(1..=n);
        let res = select_greedy(&inst, k, TieBreak::Random, &mut rng).unwrap();

        // Exactly k distinct filters, valid indices.
        prop_assert_eq!(res.selected.len(), k);
        let mut uniq = res.selected.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), k);
        prop_assert!(res.selected.iter().all(|&f| f < n));

        // Gains are recorded per pick, never increase the covered count past
        // the universe, and sum to the final coverage.
        prop_assert_eq!(res.gain_history.len(), k);
        prop_assert_eq!(res.gain_history.iter().sum::<usize>(), res.covered);
        prop_assert!(res.covered <= inst.universe());
        prop_assert!((res.coverage_rate - coverage_rate(res.covered, inst.universe())).abs() < 1e-15);

        // Greedy's first pick has the globally largest singleton gain.
        let empty = vec![false; inst.universe()];
        let best_single = (0..n).map(|f| filter_gain(&inst, &empty, f)).max().unwrap();
        prop_assert_eq!(res.gain_history[0], best_single);

        // Gains never increase along the pick sequence (submodularity).
        for w in res.gain_history.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }

        // Selecting everything covers everything.
        let all = select_greedy(&inst, n, TieBreak::MaxL2, &mut rng).unwrap();
        prop_assert_eq!(all.covered, inst.universe());
    }
}

#[test]
fn greedy_gain_sequence_is_monotone_even_with_ties() {
    // A handcrafted instance with heavy overlap: gains must still decrease.
    let inst = CoverageInstance::new(
        4,
        6,
        vec![vec![0, 1, 2], vec![0, 1, 3], vec![2, 3, 4], vec![5]],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let res = select_greedy(&inst, 4, TieBreak::Random, &mut rng).unwrap();
    assert_eq!(res.covered, 6);
    for w in res.gain_history.windows(2) {
        assert!(w[0] >= w[1]);
    }
}
