//! Independent oracles for split search, OOB routing, forest voting and the
//! importance node walks.

mod common;

use common::*;
use oobgini::forest::{bootstrap, Forest, ForestParams};
use oobgini::importance::{self, PenaltySpec};
use oobgini::simlab::{gen_case, Case};
use oobgini::tree::{best_split_categorical, best_split_continuous, gini, Tree, TreeParams, WeightedRow};
use oobgini::{Column, Dataset, Feature};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn categorical_shortcut_matches_enumeration(
        (codes, labels, weights) in (2usize..=10, 2usize..=30).prop_flat_map(|(k, n)| (
            proptest::collection::vec(0u8..k as u8, n),
            proptest::collection::vec(0u8..2, n),
            proptest::collection::vec(1u32..4, n),
        ))
    ) {
        let rows: Vec<WeightedRow> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| WeightedRow { row: i as u32, weight: w })
            .collect();
        let oracle = exhaustive_categorical(&codes, &labels, &rows);
        let got = best_split_categorical(&codes, &labels, &rows);
        match (oracle, got) {
            (None, None) => {}
            (Some((_, best)), Some(s)) => {
                prop_assert!((s.gain - best).abs() < 1e-12, "gain {} vs {}", s.gain, best);
                let realized = categorical_gain(&codes, &labels, &rows, s.left_mask);
                prop_assert!((realized - best).abs() < 1e-12);
                prop_assert!(s.left_mask != 0 && s.left_mask & !s.observed_mask == 0);
                prop_assert!(s.left_mask != s.observed_mask);
            }
            (o, g) => prop_assert!(false, "oracle {:?} vs shortcut {:?}", o, g),
        }
    }

    #[test]
    fn continuous_search_matches_brute_force(
        (values, labels) in (2usize..=30).prop_flat_map(|n| (
            proptest::collection::vec(0i32..8, n),
            proptest::collection::vec(0u8..2, n),
        ))
    ) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let rows = WeightedRow::unit(0..values.len());
        let oracle = brute_force_continuous(&values, &labels, &rows);
        let got = best_split_continuous(&values, &labels, &rows);
        match (oracle, got) {
            (None, None) => {}
            (Some((t, g)), Some(s)) => {
                prop_assert!((s.gain - g).abs() < 1e-12);
                prop_assert_eq!(s.threshold, t);
            }
            (o, g) => prop_assert!(false, "oracle {:?} vs search {:?}", o, g),
        }
    }
}

#[test]
fn three_point_continuous_instance() {
    let values = [1.0, 2.0, 3.0];
    let labels = [0, 1, 0];
    let rows = WeightedRow::unit(0..3);
    let (t, g) = brute_force_continuous(&values, &labels, &rows).unwrap();
    let s = best_split_continuous(&values, &labels, &rows).unwrap();
    assert_eq!(s.threshold, t);
    assert!((s.gain - g).abs() < 1e-15);
}

#[test]
fn route_oob_matches_per_row_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..25 {
        let d = random_dataset(&mut rng, 20);
        let inbag = bootstrap(d.n(), case);
        let params = TreeParams {
            mtry: 2,
            min_node_size: 1,
            max_depth: None,
            seed: case,
        };
        let oob: Vec<usize> = (0..d.n()).filter(|&i| inbag[i] == 0).collect();
        let tree = Tree::grow(&d, &inbag, &params).route_oob(&d, &oob);
        let mut n_oob = vec![0u32; tree.nodes().len()];
        let mut n_pos = vec![0u32; tree.nodes().len()];
        for &i in &oob {
            for node in replay_path(&tree, &d, i) {
                n_oob[node] += 1;
                n_pos[node] += d.response()[i] as u32;
            }
        }
        for (k, node) in tree.nodes().iter().enumerate() {
            assert_eq!(node.stats.n_oob, n_oob[k]);
            assert_eq!(node.stats.n_oob_pos, n_pos[k]);
        }
        assert_eq!(tree.root().stats.n_oob as usize, oob.len());
    }
}

#[test]
fn tree_invariants_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..30 {
        let d = random_dataset(&mut rng, 40);
        let inbag = bootstrap(d.n(), 100 + case);
        let params = TreeParams {
            mtry: 3,
            min_node_size: 1,
            max_depth: None,
            seed: case,
        };
        let oob: Vec<usize> = (0..d.n()).filter(|&i| inbag[i] == 0).collect();
        let tree = Tree::grow(&d, &inbag, &params).route_oob(&d, &oob);
        assert_eq!(tree, Tree::grow(&d, &inbag, &params).route_oob(&d, &oob));
        for node in tree.nodes() {
            let Some(split) = &node.split else { continue };
            let (l, r) = (&tree.nodes()[split.left].stats, &tree.nodes()[split.right].stats);
            assert_eq!(l.n_in + r.n_in, node.stats.n_in);
            assert_eq!(l.n_in_pos + r.n_in_pos, node.stats.n_in_pos);
            assert_eq!(l.n_oob + r.n_oob, node.stats.n_oob);
            assert_eq!(l.n_oob_pos + r.n_oob_pos, node.stats.n_oob_pos);
            assert!(l.n_in >= 1 && r.n_in >= 1);
            assert!(split.gain > 0.0);
            let wl = l.n_in as f64 / node.stats.n_in as f64;
            let recomputed = gini(node.stats.p_in())
                - wl * gini(l.p_in())
                - (1.0 - wl) * gini(r.p_in());
            assert!((recomputed - split.gain).abs() < 1e-12);
        }
    }
}

#[test]
fn oob_votes_match_leaf_replay() {
    let d = gen_case(Case::Power, 60, 4);
    let f = Forest::fit(
        &d,
        &ForestParams {
            ntree: 15,
            mtry: Some(2),
            seed: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let preds = f.oob_predict(&d);
    for i in 0..d.n() {
        let mut votes = 0;
        let mut trees = 0;
        for (t, tree) in f.trees().iter().enumerate() {
            if f.inbag()[t][i] == 0 {
                let leaf = *replay_path(tree, &d, i).last().unwrap();
                let s = tree.nodes()[leaf].stats;
                votes += u32::from(2 * s.n_in_pos > s.n_in);
                trees += 1;
            }
        }
        let expected = (trees > 0).then(|| votes as f64 / trees as f64);
        assert_eq!(preds[i], expected, "row {i}");
    }
}

#[test]
fn always_inbag_row_abstains() {
    let d = Dataset::new(
        vec![Feature::continuous("x", vec![0.0, 1.0])],
        vec![0, 1],
    )
    .unwrap();
    let f = Forest::fit(
        &d,
        &ForestParams {
            ntree: 1,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let preds = f.oob_predict(&d);
    for i in 0..2 {
        assert_eq!(preds[i].is_none(), f.inbag()[0][i] > 0);
    }
}

#[test]
fn bootstrap_oob_fraction() {
    let mut total = 0.0;
    for s in 0..10_000 {
        let m = bootstrap(100, s);
        total += m.iter().filter(|&&c| c == 0).count() as f64 / 100.0;
    }
    let mean = total / 10_000.0;
    // 1 − (1 − 1/n)^n = 0.3660 for n = 100
    assert!((0.36..=0.37).contains(&mean), "{mean}");
}

#[test]
fn power_case_oob_error_beats_chance() {
    let d = gen_case(Case::Power, 120, 12);
    let f = Forest::fit(
        &d,
        &ForestParams {
            ntree: 100,
            mtry: Some(3),
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let err = f.oob_error(&d).unwrap();
    assert!(err > 0.33 && err < 0.5, "{err}");
}

#[test]
fn mdi_matches_node_walk_oracle() {
    let d = six_row_dataset();
    let f = Forest::fit(
        &d,
        &ForestParams {
            ntree: 3,
            mtry: Some(2),
            seed: 17,
            ..Default::default()
        },
    )
    .unwrap();
    let oracle = oracle_importance(&f, &d, |o, i| 2.0 * i * (1.0 - i) + 0.0 * o, false);
    let got = importance::mdi(&f);
    assert!(oracle.iter().any(|&s| s > 0.0));
    for j in 0..d.n_features() {
        assert!((got.scores[j] - oracle[j]).abs() < 1e-12);
        assert!(got.scores[j] >= 0.0);
    }
}

#[test]
fn pg2_matches_identity_oracle() {
    let d = gen_case(Case::Null, 80, 5);
    let f = Forest::fit(
        &d,
        &ForestParams {
            ntree: 20,
            mtry: Some(3),
            seed: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let oracle = oracle_importance(&f, &d, |o, i| o + i - 2.0 * o * i, true);
    let got = importance::pg_importance(&f, &PenaltySpec::PG2, false);
    for j in 0..d.n_features() {
        assert!((got.scores[j] - oracle[j]).abs() < 1e-12, "{j}: {} vs {}", got.scores[j], oracle[j]);
    }
    let total_splits: u64 = f
        .trees()
        .iter()
        .map(|t| t.nodes().iter().filter(|n| n.split.is_some()).count() as u64)
        .sum();
    let census: u64 = got.nodes_used.iter().sum::<u64>() + got.nodes_skipped.iter().sum::<u64>();
    assert_eq!(census, total_splits);
}

#[test]
fn pure_inbag_spec_reduces_to_mdi() {
    let d = gen_case(Case::Null, 60, 1);
    let f = Forest::fit(&d, &ForestParams { ntree: 10, seed: 3, ..Default::default() }).unwrap();
    let a = importance::mdi(&f);
    let b = importance::pg_importance(&f, &PenaltySpec::new(0.0, 0.0), false);
    assert_eq!(a.scores, b.scores);
}

#[test]
fn truncation_clips_negatives_only() {
    let d = gen_case(Case::Null, 120, 2);
    let f = Forest::fit(&d, &ForestParams { ntree: 30, mtry: Some(3), seed: 4, ..Default::default() }).unwrap();
    let raw = importance::pg_importance(&f, &PenaltySpec::PG1, false);
    let cut = importance::pg_importance(&f, &PenaltySpec::PG1, true);
    assert!(raw.scores.iter().any(|&s| s < 0.0));
    for (r, c) in raw.scores.iter().zip(&cut.scores) {
        assert_eq!(*c, r.max(0.0));
    }
    assert!(cut.truncated_at_zero);
}

#[test]
fn mda_unused_feature_and_determinism() {
    // `noise` is constant, so no tree can split on it
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.5)).collect();
    let d = Dataset::new(
        vec![
            Feature::continuous("x", x),
            Feature::continuous("noise", vec![1.0; 50]),
        ],
        y,
    )
    .unwrap();
    let f = Forest::fit(&d, &ForestParams { ntree: 20, mtry: Some(2), seed: 1, ..Default::default() }).unwrap();
    let a = importance::mda(&f, &d, 2, 99);
    assert_eq!(a.score("noise"), Some(0.0));
    assert!(a.score("x").unwrap() > 0.2);
    assert_eq!(a, importance::mda(&f, &d, 2, 99));
    assert_eq!(importance::mdi(&f).score("noise"), Some(0.0));
}

#[test]
fn fit_is_independent_of_thread_count() {
    let d = gen_case(Case::Power, 120, 30);
    let params = ForestParams { ntree: 40, mtry: Some(3), seed: 77, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let f = Forest::fit(&d, &params).unwrap();
                let scores = importance::pg_importance(&f, &PenaltySpec::PG1, false);
                (f.to_json(), scores)
            })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn unseen_levels_are_counted_in_forests() {
    // level "c" appears once; trees that leave it out of bag and split on
    // the feature see it as unseen
    let codes: Vec<u8> = (0..30).map(|i| if i == 29 { 2 } else { (i % 2) as u8 }).collect();
    let y: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
    let d = Dataset::new(
        vec![Feature::categorical("c", codes, vec!["a".into(), "b".into(), "c".into()])],
        y,
    )
    .unwrap();
    let f = Forest::fit(&d, &ForestParams { ntree: 30, seed: 5, ..Default::default() }).unwrap();
    let expected: u64 = (0..30)
        .filter(|&t| f.inbag()[t][29] == 0 && f.trees()[t].root().split.is_some())
        .count() as u64;
    let events: u64 = f.trees().iter().map(Tree::unseen_level_events).sum();
    assert!(expected > 0);
    assert_eq!(events, expected);
    if let Column::Categorical { levels, .. } = &d.feature(0).column {
        assert_eq!(levels.len(), 3);
    }
}
