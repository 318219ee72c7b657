//! CART classification trees that carry inbag and out-of-bag class counts.
//!
//! Trees are grown on an inbag sample given as per-row multiplicities, using
//! the doubled Gini impurity `2p(1−p)`. Split candidates are compared with
//! exact integer arithmetic so ties break the same way on every platform.
//! After growth, [`Tree::route_oob`] sends the out-of-bag rows down the tree
//! and records their class counts at every node they visit.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, Dataset};
use crate::seed;

/// Gini impurity of a binary node with positive proportion `p`.
pub fn gini(p: f64) -> f64 {
    2.0 * p * (1.0 - p)
}

/// Inbag and OOB class counts of one node. Inbag counts include bootstrap
/// multiplicity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub n_in: u32,
    pub n_in_pos: u32,
    pub n_oob: u32,
    pub n_oob_pos: u32,
}

impl NodeStats {
    pub fn p_in(&self) -> f64 {
        self.n_in_pos as f64 / self.n_in as f64
    }

    pub fn p_oob(&self) -> Option<f64> {
        (self.n_oob > 0).then(|| self.n_oob_pos as f64 / self.n_oob as f64)
    }

    /// Majority inbag class; ties go to class 0.
    pub fn majority(&self) -> u8 {
        u8::from(2 * self.n_in_pos as u64 > self.n_in as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    /// Go left iff `value <= threshold`.
    Continuous { feature: usize, threshold: f64 },
    /// Go left iff the level's bit is set in `left_mask`. `observed_mask`
    /// lists the levels present in the inbag sample at this node.
    Categorical {
        feature: usize,
        left_mask: u64,
        observed_mask: u64,
    },
}

/// Which way a row goes at a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Left,
    Right,
    /// The row's level was never seen at this node during growth; it is sent
    /// right.
    UnseenRight,
}

impl SplitRule {
    pub fn feature(&self) -> usize {
        match *self {
            SplitRule::Continuous { feature, .. } | SplitRule::Categorical { feature, .. } => {
                feature
            }
        }
    }

    pub fn route(&self, d: &Dataset, row: usize) -> Route {
        match (*self, &d.feature(self.feature()).column) {
            (SplitRule::Continuous { threshold, .. }, Column::Continuous(v)) => {
                if v[row] <= threshold {
                    Route::Left
                } else {
                    Route::Right
                }
            }
            (
                SplitRule::Categorical {
                    left_mask,
                    observed_mask,
                    ..
                },
                Column::Categorical { codes, .. },
            ) => {
                let bit = 1u64 << codes[row];
                if left_mask & bit != 0 {
                    Route::Left
                } else if observed_mask & bit != 0 {
                    Route::Right
                } else {
                    Route::UnseenRight
                }
            }
            _ => panic!("split rule does not match the kind of feature {}", self.feature()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub rule: SplitRule,
    /// Inbag Gini gain of the split.
    pub gain: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub stats: NodeStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// A grown tree. Node 0 is the root; nodes are stored in depth-first
/// (left before right) creation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    /// OOB rows that reached a categorical split with a level unseen there.
    unseen_level_events: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

/// One inbag row and its bootstrap multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightedRow {
    pub row: u32,
    pub weight: u32,
}

impl WeightedRow {
    pub fn unit(rows: impl IntoIterator<Item = usize>) -> Vec<WeightedRow> {
        rows.into_iter()
            .map(|r| WeightedRow {
                row: r as u32,
                weight: 1,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    n: u64,
    pos: u64,
}

impl Counts {
    fn add(&mut self, w: u64, y: u8) {
        self.n += w;
        self.pos += w * y as u64;
    }

    fn minus(self, o: Counts) -> Counts {
        Counts {
            n: self.n - o.n,
            pos: self.pos - o.pos,
        }
    }

    fn pure(&self) -> bool {
        self.pos == 0 || self.pos == self.n
    }
}

/// `Σ_c pos_c² / n_c` over the two children as an exact fraction. For a
/// fixed parent, larger score means larger Gini gain.
#[derive(Clone, Copy, Debug)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn of(l: Counts, r: Counts) -> Score {
        let (nl, pl, nr, pr) = (l.n as u128, l.pos as u128, r.n as u128, r.pos as u128);
        Score {
            num: pl * pl * nr + pr * pr * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, o: &Score) -> std::cmp::Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }

    /// Strictly positive gain over the unsplit parent.
    fn beats_parent(&self, parent: Counts) -> bool {
        let (n, p) = (parent.n as u128, parent.pos as u128);
        self.num * n > p * p * self.den
    }
}

fn gain(l: Counts, r: Counts) -> f64 {
    let n = (l.n + r.n) as f64;
    let p = (l.pos + r.pos) as f64 / n;
    let child = |c: Counts| (c.n as f64 / n) * gini(c.pos as f64 / c.n as f64);
    gini(p) - child(l) - child(r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousSplit {
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategoricalSplit {
    pub left_mask: u64,
    pub observed_mask: u64,
    pub gain: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t < b {
        t
    } else {
        a
    }
}

fn search_continuous(
    values: &[f64],
    labels: &[u8],
    rows: &[WeightedRow],
    buf: &mut Vec<(f64, u32, u32)>,
) -> Option<(ContinuousSplit, Score)> {
    buf.clear();
    let mut total = Counts::default();
    for r in rows {
        let y = labels[r.row as usize];
        buf.push((values[r.row as usize], r.weight, r.weight * y as u32));
        total.add(r.weight as u64, y);
    }
    if total.n < 2 || total.pure() {
        return None;
    }
    buf.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut left = Counts::default();
    let mut best: Option<(f64, Score, Counts)> = None;
    for i in 0..buf.len() - 1 {
        left.n += buf[i].1 as u64;
        left.pos += buf[i].2 as u64;
        if buf[i].0 == buf[i + 1].0 {
            continue;
        }
        let s = Score::of(left, total.minus(left));
        if best.as_ref().is_none_or(|b| s.cmp(&b.1).is_gt()) {
            best = Some((midpoint(buf[i].0, buf[i + 1].0), s, left));
        }
    }
    let (threshold, score, left) = best?;
    if !score.beats_parent(total) {
        return None;
    }
    Some((
        ContinuousSplit {
            threshold,
            gain: gain(left, total.minus(left)),
        },
        score,
    ))
}

/// Best threshold split of a continuous feature by inbag Gini gain.
///
/// Thresholds are midpoints between consecutive distinct values; ties go to
/// the smallest threshold. Returns `None` when all values are equal or no
/// split has positive gain.
pub fn best_split_continuous(
    values: &[f64],
    labels: &[u8],
    rows: &[WeightedRow],
) -> Option<ContinuousSplit> {
    search_continuous(values, labels, rows, &mut Vec::new()).map(|(s, _)| s)
}

fn search_categorical(
    codes: &[u8],
    labels: &[u8],
    rows: &[WeightedRow],
) -> Option<(CategoricalSplit, Score)> {
    let mut per_level = [Counts::default(); 64];
    let mut total = Counts::default();
    for r in rows {
        let y = labels[r.row as usize];
        per_level[codes[r.row as usize] as usize].add(r.weight as u64, y);
        total.add(r.weight as u64, y);
    }
    if total.pure() {
        return None;
    }
    let mut order: Vec<usize> = (0..64).filter(|&l| per_level[l].n > 0).collect();
    if order.len() < 2 {
        return None;
    }
    let observed: u64 = order.iter().fold(0, |m, &l| m | 1 << l);
    // Sorting levels by positive proportion makes the optimal binary
    // partition one of the k−1 prefixes of this order.
    order.sort_by(|&a, &b| {
        let (ca, cb) = (per_level[a], per_level[b]);
        (ca.pos as u128 * cb.n as u128)
            .cmp(&(cb.pos as u128 * ca.n as u128))
            .then(a.cmp(&b))
    });

    let mut left = Counts::default();
    let mut prefix = 0u64;
    let mut best: Option<(u64, Score, Counts)> = None;
    for &level in &order[..order.len() - 1] {
        left.n += per_level[level].n;
        left.pos += per_level[level].pos;
        prefix |= 1 << level;
        let mask = prefix.min(observed ^ prefix);
        let s = Score::of(left, total.minus(left));
        let better = match &best {
            None => true,
            Some((m, bs, _)) => match s.cmp(bs) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Equal => mask < *m,
                std::cmp::Ordering::Less => false,
            },
        };
        if better {
            best = Some((mask, s, left));
        }
    }
    let (left_mask, score, _) = best?;
    if !score.beats_parent(total) {
        return None;
    }
    let mut l = Counts::default();
    for lv in 0..64 {
        if left_mask & (1 << lv) != 0 {
            l.n += per_level[lv].n;
            l.pos += per_level[lv].pos;
        }
    }
    Some((
        CategoricalSplit {
            left_mask,
            observed_mask: observed,
            gain: gain(l, total.minus(l)),
        },
        score,
    ))
}

/// Gini-optimal binary partition of the levels observed among `rows`.
///
/// The returned left mask is the smaller of the two complementary masks
/// describing the partition; among equal-gain partitions the smallest mask
/// wins.
pub fn best_split_categorical(
    codes: &[u8],
    labels: &[u8],
    rows: &[WeightedRow],
) -> Option<CategoricalSplit> {
    search_categorical(codes, labels, rows).map(|(s, _)| s)
}

struct Pending {
    node: usize,
    rows: Vec<WeightedRow>,
    depth: usize,
}

fn counts_of(rows: &[WeightedRow], labels: &[u8]) -> Counts {
    let mut c = Counts::default();
    for r in rows {
        c.add(r.weight as u64, labels[r.row as usize]);
    }
    c
}

fn leaf(c: Counts) -> Node {
    Node {
        stats: NodeStats {
            n_in: c.n as u32,
            n_in_pos: c.pos as u32,
            ..NodeStats::default()
        },
        split: None,
    }
}

impl Tree {
    /// Grows a tree on the rows with nonzero multiplicity in `inbag`.
    ///
    /// At each node `mtry` distinct features are drawn; the split with the
    /// largest inbag Gini gain among them is taken. A node becomes a leaf when
    /// it is pure, holds fewer than `min_node_size` inbag samples, sits at
    /// `max_depth`, or none of the drawn features yields a positive gain.
    pub fn grow(d: &Dataset, inbag: &[u32], params: &TreeParams) -> Tree {
        assert_eq!(inbag.len(), d.n(), "multiplicity vector length");
        let labels = d.response();
        let rows: Vec<WeightedRow> = inbag
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w > 0)
            .map(|(i, &w)| WeightedRow {
                row: i as u32,
                weight: w,
            })
            .collect();
        assert!(!rows.is_empty(), "empty inbag sample");

        let p = d.n_features();
        let mtry = params.mtry.clamp(1, p.max(1));
        let mut rng = seed::rng(params.seed);
        let mut buf = Vec::new();
        let mut nodes = vec![leaf(counts_of(&rows, labels))];
        let mut stack = vec![Pending {
            node: 0,
            rows,
            depth: 0,
        }];

        while let Some(Pending { node, rows, depth }) = stack.pop() {
            let c = counts_of(&rows, labels);
            if p == 0
                || c.pure()
                || (c.n as usize) < params.min_node_size
                || params.max_depth.is_some_and(|m| depth >= m)
            {
                continue;
            }
            let mut best: Option<(SplitRule, f64, Score)> = None;
            for j in index::sample(&mut rng, p, mtry) {
                let cand = match &d.feature(j).column {
                    Column::Continuous(v) => search_continuous(v, labels, &rows, &mut buf)
                        .map(|(s, sc)| {
                            let rule = SplitRule::Continuous {
                                feature: j,
                                threshold: s.threshold,
                            };
                            (rule, s.gain, sc)
                        }),
                    Column::Categorical { codes, .. } => search_categorical(codes, labels, &rows)
                        .map(|(s, sc)| {
                            let rule = SplitRule::Categorical {
                                feature: j,
                                left_mask: s.left_mask,
                                observed_mask: s.observed_mask,
                            };
                            (rule, s.gain, sc)
                        }),
                };
                if let Some(cand) = cand {
                    if best.as_ref().is_none_or(|b| cand.2.cmp(&b.2).is_gt()) {
                        best = Some(cand);
                    }
                }
            }
            let Some((rule, gain, _)) = best else {
                continue;
            };

            let (left_rows, right_rows): (Vec<_>, Vec<_>) = rows
                .into_iter()
                .partition(|r| rule.route(d, r.row as usize) == Route::Left);
            let left = nodes.len();
            nodes.push(leaf(counts_of(&left_rows, labels)));
            let right = nodes.len();
            nodes.push(leaf(counts_of(&right_rows, labels)));
            nodes[node].split = Some(Split {
                rule,
                gain,
                left,
                right,
            });
            stack.push(Pending {
                node: right,
                rows: right_rows,
                depth: depth + 1,
            });
            stack.push(Pending {
                node: left,
                rows: left_rows,
                depth: depth + 1,
            });
        }

        Tree {
            nodes,
            unseen_level_events: 0,
        }
    }

    /// Replaces the tree's OOB counts with those of `oob_rows`.
    pub fn route_oob(mut self, d: &Dataset, oob_rows: &[usize]) -> Tree {
        for n in &mut self.nodes {
            n.stats.n_oob = 0;
            n.stats.n_oob_pos = 0;
        }
        self.unseen_level_events = 0;
        let y = d.response();
        for &row in oob_rows {
            let mut at = 0;
            loop {
                let node = &mut self.nodes[at];
                node.stats.n_oob += 1;
                node.stats.n_oob_pos += y[row] as u32;
                let Some(split) = &node.split else { break };
                at = match split.rule.route(d, row) {
                    Route::Left => split.left,
                    Route::Right => split.right,
                    Route::UnseenRight => {
                        self.unseen_level_events += 1;
                        split.right
                    }
                };
            }
        }
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn unseen_level_events(&self) -> u64 {
        self.unseen_level_events
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at].split {
                None => 0,
                Some(s) => 1 + walk(nodes, s.left).max(walk(nodes, s.right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf reached by `row`. With `swap = Some((j, src))` the
    /// value of feature `j` is read from row `src` instead.
    pub fn leaf_of(&self, d: &Dataset, row: usize, swap: Option<(usize, usize)>) -> usize {
        let mut at = 0;
        while let Some(split) = &self.nodes[at].split {
            let src = match swap {
                Some((j, src)) if j == split.rule.feature() => src,
                _ => row,
            };
            at = match split.rule.route(d, src) {
                Route::Left => split.left,
                Route::Right | Route::UnseenRight => split.right,
            };
        }
        at
    }

    pub fn predict(&self, d: &Dataset, row: usize, swap: Option<(usize, usize)>) -> u8 {
        self.nodes[self.leaf_of(d, row, swap)].stats.majority()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Tree> {
        Ok(serde_json::from_str(text)?)
    }
}
