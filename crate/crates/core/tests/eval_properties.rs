//! Ranking metrics against direct definitions.

use chorus_core::eval::{
    accuracy_at_n, auc_from_scores, average_precision, mrr_at_n, rejection_sweep, LabeledResult,
};
use chorus_core::knn::{posterior_from_search, Neighbour, NeighbourSearch};
use chorus_core::trainstore::ClassId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Precision averaged over positives, with every tied negative counted ahead
/// of the positive.
fn pessimistic_ap(scored: &[(f64, bool)]) -> f64 {
    let n_pos = scored.iter().filter(|x| x.1).count();
    let mut total = 0.0;
    for &(s, is_pos) in scored {
        if !is_pos {
            continue;
        }
        let above = |x: &&(f64, bool)| x.0 > s || (x.0 == s && !x.1);
        let ahead_pos = scored.iter().filter(|x| x.1 && x.0 > s).count();
        let tied_pos = scored.iter().filter(|x| x.1 && x.0 == s).count();
        let ahead = scored.iter().filter(above).count();
        // Tied positives occupy consecutive slots after the tied negatives;
        // their precisions are averaged in closed form.
        let mut p = 0.0;
        for t in 1..=tied_pos {
            p += (ahead_pos + t) as f64 / (ahead + t) as f64;
        }
        total += p / tied_pos as f64;
    }
    total / n_pos as f64
}

fn arb_scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..8).prop_map(|v| f64::from(v) / 8.0), 1..30)
}

/// A posterior from a synthetic neighbour scan over `c` classes.
fn arb_result(c: usize, k: usize) -> impl Strategy<Value = LabeledResult> {
    (
        prop::collection::vec(0..c as u32, k),
        prop::collection::vec(0.0f64..1.0, c),
        0..c as u32,
    )
        .prop_map(move |(votes, nearest, truth)| {
            let search = NeighbourSearch {
                neighbours: votes
                    .iter()
                    .enumerate()
                    .map(|(i, &cl)| Neighbour { class: ClassId(cl), index: i, distance: i as f64 })
                    .collect(),
                class_nearest: nearest.iter().enumerate().map(|(i, &d)| (ClassId(i as u32), d)).collect(),
            };
            LabeledResult { true_class: ClassId(truth), posterior: posterior_from_search(&search, k, 2.0) }
        })
}

fn arb_results() -> impl Strategy<Value = (usize, Vec<LabeledResult>)> {
    (2usize..8, 1usize..8).prop_flat_map(|(c, k)| {
        (Just(c), prop::collection::vec(arb_result(c, k), 1..40))
    })
}

proptest! {
    #[test]
    fn auc_equals_pair_counting(pos in arb_scores(), neg in arb_scores()) {
        let auc = auc_from_scores(&pos, &neg).unwrap();
        prop_assert!((auc - pair_count_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_map(pos in arb_scores(), neg in arb_scores()) {
        let f = |v: &Vec<f64>| v.iter().map(|x| (3.0 * x).exp() - 7.0).collect::<Vec<_>>();
        prop_assert_eq!(auc_from_scores(&pos, &neg), auc_from_scores(&f(&pos), &f(&neg)));
    }

    #[test]
    fn ap_matches_definition(
        scored in prop::collection::vec(((0u8..6).prop_map(f64::from), any::<bool>()), 1..30)
    ) {
        prop_assume!(scored.iter().any(|x| x.1));
        let ap = average_precision(&scored).unwrap();
        prop_assert!((ap - pessimistic_ap(&scored)).abs() < 1e-12, "{} vs {}", ap, pessimistic_ap(&scored));
    }

    #[test]
    fn accuracy_and_mrr_monotone_in_n((c, results) in arb_results()) {
        let mut prev = (0.0, 0.0);
        for n in 1..=c {
            let cur = (accuracy_at_n(&results, n), mrr_at_n(&results, n));
            prop_assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prop_assert!(cur.1 <= cur.0 + 1e-15);
            prev = cur;
        }
        prop_assert_eq!(prev.0, 1.0);
    }

    #[test]
    fn sweep_accepts_monotonically((c, results) in arb_results()) {
        let curve = rejection_sweep(&results, c);
        for w in curve.windows(2) {
            prop_assert!(w[1].raw_threshold > w[0].raw_threshold);
            prop_assert!(w[1].accepted_fraction >= w[0].accepted_fraction);
        }
        let last = curve.last().unwrap();
        prop_assert!(last.raw_threshold >= (c as f64).ln());
        prop_assert_eq!(last.accepted_fraction, 1.0);
        prop_assert_eq!(last.accuracy_at_1, Some(accuracy_at_n(&results, 1)));
        for p in &curve {
            prop_assert!((p.accepted_fraction + p.rejected_fraction - 1.0).abs() < 1e-12);
            prop_assert_eq!(p.mrr_at_10.is_none(), p.accepted_fraction == 0.0);
        }
    }
}

#[test]
fn random_scores_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    let (p, n) = (400usize, 600usize);
    let sigma = (((p + n + 1) as f64) / (12.0 * (p * n) as f64)).sqrt();
    for _ in 0..20 {
        let pos: Vec<f64> = (0..p).map(|_| rng.random()).collect();
        let neg: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let auc = auc_from_scores(&pos, &neg).unwrap();
        assert!((auc - 0.5).abs() < 3.0 * sigma, "{auc}");
    }
}
