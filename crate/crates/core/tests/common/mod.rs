//! Test-only oracles. They recompute everything from raw rows and split
//! rules and never read the counts or scores produced by the library.
#![allow(dead_code)]

use oobgini::forest::Forest;
use oobgini::tree::{SplitRule, Tree, WeightedRow};
use oobgini::{Column, Dataset, Feature};
use rand::Rng;

fn g(pos: f64, n: f64) -> f64 {
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

fn partition_gain(parts: [(f64, f64); 2]) -> f64 {
    let n = parts[0].0 + parts[1].0;
    let pos = parts[0].1 + parts[1].1;
    g(pos, n) - parts.iter().map(|&(k, p)| k / n * g(p, k)).sum::<f64>()
}

pub fn categorical_gain(codes: &[u8], labels: &[u8], rows: &[WeightedRow], mask: u64) -> f64 {
    let mut parts = [(0.0, 0.0); 2];
    for r in rows {
        let side = usize::from(mask & (1 << codes[r.row as usize]) == 0);
        parts[side].0 += r.weight as f64;
        parts[side].1 += (r.weight * labels[r.row as usize] as u32) as f64;
    }
    partition_gain(parts)
}

/// Best gain over all 2^(k−1) − 1 binary partitions of the observed levels.
pub fn exhaustive_categorical(
    codes: &[u8],
    labels: &[u8],
    rows: &[WeightedRow],
) -> Option<(u64, f64)> {
    let mut levels: Vec<u8> = rows.iter().map(|r| codes[r.row as usize]).collect();
    levels.sort();
    levels.dedup();
    let pos: u32 = rows.iter().map(|r| r.weight * labels[r.row as usize] as u32).sum();
    let n: u32 = rows.iter().map(|r| r.weight).sum();
    if levels.len() < 2 || pos == 0 || pos == n {
        return None;
    }
    let rest = &levels[1..];
    let mut best: Option<(u64, f64)> = None;
    for bits in 0u64..(1 << rest.len()) - 1 {
        // levels[0] always left; `bits` chooses which others join it
        let mut mask = 1u64 << levels[0];
        for (i, &l) in rest.iter().enumerate() {
            if bits & (1 << i) != 0 {
                mask |= 1 << l;
            }
        }
        let gain = categorical_gain(codes, labels, rows, mask);
        if best.is_none_or(|(_, b)| gain > b) {
            best = Some((mask, gain));
        }
    }
    best.filter(|&(_, b)| b > 1e-12)
}

/// Exhaustive scan of all midpoints; near-ties go to the smaller threshold.
pub fn brute_force_continuous(values: &[f64], labels: &[u8], rows: &[WeightedRow]) -> Option<(f64, f64)> {
    let mut distinct: Vec<f64> = rows.iter().map(|r| values[r.row as usize]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let mut parts = [(0.0, 0.0); 2];
        for r in rows {
            let side = usize::from(values[r.row as usize] > t);
            parts[side].0 += r.weight as f64;
            parts[side].1 += (r.weight * labels[r.row as usize] as u32) as f64;
        }
        let gain = partition_gain(parts);
        if best.is_none_or(|(_, b)| gain > b + 1e-12) {
            best = Some((t, gain));
        }
    }
    best.filter(|&(_, b)| b > 1e-12)
}

pub fn random_dataset<R: Rng>(rng: &mut R, n: usize) -> Dataset {
    let names = |k: usize| (0..k).map(|i| format!("L{i}")).collect::<Vec<_>>();
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
        let c3: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let c6: Vec<u8> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if y.iter().any(|&v| v == 0) && y.iter().any(|&v| v == 1) {
            return Dataset::new(
                vec![
                    Feature::continuous("x", x),
                    Feature::categorical("c3", c3, names(3)),
                    Feature::categorical("c6", c6, names(6)),
                ],
                y,
            )
            .unwrap();
        }
    }
}

pub fn six_row_dataset() -> Dataset {
    Dataset::new(
        vec![
            Feature::continuous("x", vec![0.3, 1.2, 2.5, 2.5, 3.1, 4.0]),
            Feature::categorical("c", vec![0, 1, 2, 0, 1, 2], vec!["a".into(), "b".into(), "c".into()]),
            Feature::continuous("z", vec![5.0, 3.0, 1.0, 4.0, 2.0, 6.0]),
        ],
        vec![0, 1, 0, 1, 1, 0],
    )
    .unwrap()
}

fn goes_left(rule: &SplitRule, d: &Dataset, row: usize) -> bool {
    match (rule, &d.feature(rule.feature()).column) {
        (SplitRule::Continuous { threshold, .. }, Column::Continuous(v)) => v[row] <= *threshold,
        (SplitRule::Categorical { left_mask, .. }, Column::Categorical { codes, .. }) => {
            left_mask >> codes[row] & 1 == 1
        }
        _ => unreachable!(),
    }
}

/// Node indices visited by `row`, root first.
pub fn replay_path(tree: &Tree, d: &Dataset, row: usize) -> Vec<usize> {
    let mut path = vec![0];
    let mut at = 0;
    while let Some(split) = &tree.nodes()[at].split {
        at = if goes_left(&split.rule, d, row) { split.left } else { split.right };
        path.push(at);
    }
    path
}

/// Per-feature importance recomputed from raw rows: node counts come from
/// replaying every inbag row (with multiplicity) and every OOB row through
/// the split rules. `impurity(p_oob, p_in)`; when `needs_oob`, nodes whose
/// parent or children have no OOB rows are skipped.
pub fn oracle_importance(
    f: &Forest,
    d: &Dataset,
    impurity: impl Fn(f64, f64) -> f64,
    needs_oob: bool,
) -> Vec<f64> {
    let mut scores = vec![0.0; d.n_features()];
    for (t, tree) in f.trees().iter().enumerate() {
        let k = tree.nodes().len();
        let (mut n_in, mut pos_in, mut n_oob, mut pos_oob) =
            (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for i in 0..d.n() {
            let m = f.inbag()[t][i] as f64;
            let y = d.response()[i] as f64;
            for node in replay_path(tree, d, i) {
                if m > 0.0 {
                    n_in[node] += m;
                    pos_in[node] += m * y;
                } else {
                    n_oob[node] += 1.0;
                    pos_oob[node] += y;
                }
            }
        }
        let total = n_in[0];
        let imp = |node: usize| {
            let po = if n_oob[node] > 0.0 { pos_oob[node] / n_oob[node] } else { 0.0 };
            impurity(po, pos_in[node] / n_in[node])
        };
        for (m, node) in tree.nodes().iter().enumerate() {
            let Some(split) = &node.split else { continue };
            let (l, r) = (split.left, split.right);
            if needs_oob && (n_oob[m] == 0.0 || n_oob[l] == 0.0 || n_oob[r] == 0.0) {
                continue;
            }
            let delta = imp(m) - n_in[l] / n_in[m] * imp(l) - n_in[r] / n_in[m] * imp(r);
            scores[split.rule.feature()] += n_in[m] / total * delta;
        }
    }
    scores.iter().map(|s| s / f.trees().len() as f64).collect()
}
