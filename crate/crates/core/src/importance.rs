//! Variable importance: MDI, MDA and the out-of-bag penalized Gini family.
//!
//! A member of the penalized family is identified by [`PenaltySpec`]
//! `(α, λ, bias_corrected)` and scores a node as
//!
//! ```text
//! PG = α·I_oob + (1−α)·I_in + λ·(p̂_oob − p̂_in)²,   I(p) = 2p(1−p)
//! ```
//!
//! With `bias_corrected`, the OOB impurity is multiplied by `N/(N−1)` where
//! `N` is the node's OOB count, turning it into the unbiased sample variance.
//! Neither the inbag term nor the penalty is rescaled.
//!
//! Every measure walks the same nodes: each internal node `m` splitting on
//! feature `j` adds `(N_m/N)·ΔPG(m)` to `j`, with
//! `ΔPG(m) = PG(m) − w_l·PG(m_l) − w_r·PG(m_r)`. All weights are inbag
//! counts. Scores are averaged over trees.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::seed::{self, stream};
use crate::tree::{gini, NodeStats, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub alpha: f64,
    pub lambda: f64,
    pub bias_corrected: bool,
}

impl PenaltySpec {
    /// Plain inbag Gini, the impurity behind MDI.
    pub const INBAG: PenaltySpec = PenaltySpec::new(0.0, 0.0);
    /// OOB Gini.
    pub const PG0: PenaltySpec = PenaltySpec::new(1.0, 0.0);
    /// OOB Gini plus the full squared-disagreement penalty.
    pub const PG1: PenaltySpec = PenaltySpec::new(1.0, 1.0);
    /// Symmetric average of OOB and inbag Gini plus the full penalty.
    pub const PG2: PenaltySpec = PenaltySpec::new(0.5, 1.0);
    /// Symmetric average with half penalty; bounded by 0.5.
    pub const PG3: PenaltySpec = PenaltySpec::new(0.5, 0.5);

    pub const fn new(alpha: f64, lambda: f64) -> PenaltySpec {
        PenaltySpec {
            alpha,
            lambda,
            bias_corrected: false,
        }
    }

    pub const fn corrected(self) -> PenaltySpec {
        PenaltySpec {
            bias_corrected: true,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Usage(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Usage(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }

    /// Smallest OOB count a node needs for this spec to be evaluable.
    pub fn min_oob(&self) -> u32 {
        if self.bias_corrected && self.alpha > 0.0 {
            2
        } else if self.alpha > 0.0 || self.lambda > 0.0 {
            1
        } else {
            0
        }
    }

    /// Canonical measure name: the preset name when one matches, otherwise
    /// `pg(a=…,l=…)` with an optional `hat` suffix.
    pub fn name(&self) -> String {
        let presets = [
            ("pg0", PenaltySpec::PG0),
            ("pg1", PenaltySpec::PG1),
            ("pg2", PenaltySpec::PG2),
            ("pg3", PenaltySpec::PG3),
        ];
        let hat = if self.bias_corrected { "hat" } else { "" };
        for (name, p) in presets {
            if p.alpha == self.alpha && p.lambda == self.lambda {
                return format!("{name}{hat}");
            }
        }
        format!("pg(a={},l={}){hat}", self.alpha, self.lambda)
    }
}

/// Returned when a node has too few OOB rows for a spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InsufficientOob;

/// Penalized impurity of one node.
pub fn penalized_impurity(
    p_oob: f64,
    p_in: f64,
    n_oob: u32,
    spec: &PenaltySpec,
) -> Result<f64, InsufficientOob> {
    if n_oob < spec.min_oob() {
        return Err(InsufficientOob);
    }
    let mut i_oob = if spec.alpha > 0.0 { gini(p_oob) } else { 0.0 };
    if spec.bias_corrected && spec.alpha > 0.0 {
        let n = n_oob as f64;
        i_oob *= n / (n - 1.0);
    }
    let i_in = gini(p_in);
    let diff = p_oob - p_in;
    let penalty = if spec.lambda > 0.0 { spec.lambda * diff * diff } else { 0.0 };
    Ok(spec.alpha * i_oob + (1.0 - spec.alpha) * i_in + penalty)
}

fn node_impurity(s: &NodeStats, spec: &PenaltySpec) -> Option<f64> {
    let p_oob = s.p_oob().unwrap_or(0.0);
    penalized_impurity(p_oob, s.p_in(), s.n_oob, spec).ok()
}

/// Decrease `PG(parent) − w_l·PG(left) − w_r·PG(right)` with inbag child
/// weights, or `None` when any of the three nodes lacks OOB support.
pub fn node_decrease(
    parent: &NodeStats,
    left: &NodeStats,
    right: &NodeStats,
    spec: &PenaltySpec,
) -> Option<f64> {
    let n = parent.n_in as f64;
    decrease_with_weights(
        parent,
        left,
        right,
        left.n_in as f64 / n,
        right.n_in as f64 / n,
        spec,
    )
}

pub(crate) fn decrease_with_weights(
    parent: &NodeStats,
    left: &NodeStats,
    right: &NodeStats,
    w_left: f64,
    w_right: f64,
    spec: &PenaltySpec,
) -> Option<f64> {
    let p = node_impurity(parent, spec)?;
    let l = node_impurity(left, spec)?;
    let r = node_impurity(right, spec)?;
    Some(p - w_left * l - w_right * r)
}

/// Per-feature importance scores for one measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub measure: String,
    pub features: Vec<String>,
    pub scores: Vec<f64>,
    /// Splits on the feature that contributed.
    pub nodes_used: Vec<u64>,
    /// Splits on the feature skipped for lack of OOB support.
    pub nodes_skipped: Vec<u64>,
    pub truncated_at_zero: bool,
}

impl ImportanceReport {
    pub fn score(&self, feature: &str) -> Option<f64> {
        self.features
            .iter()
            .position(|f| f == feature)
            .map(|j| self.scores[j])
    }

    /// Feature names ordered by decreasing score (stable for ties).
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx.into_iter().map(|j| self.features[j].as_str()).collect()
    }

    pub fn csv_header() -> &'static str {
        "feature,measure,score,nodesUsed,nodesSkipped"
    }

    /// CSV rows (without header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for j in 0..self.features.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&self.features[j]),
                self.measure,
                self.scores[j],
                self.nodes_used[j],
                self.nodes_skipped[j]
            ));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Clone, Debug)]
struct TreeTally {
    score: Vec<f64>,
    used: Vec<u64>,
    skipped: Vec<u64>,
}

fn walk_tree(tree: &Tree, n_features: usize, spec: &PenaltySpec) -> TreeTally {
    let mut tally = TreeTally {
        score: vec![0.0; n_features],
        used: vec![0; n_features],
        skipped: vec![0; n_features],
    };
    let nodes = tree.nodes();
    let total = nodes[0].stats.n_in as f64;
    for node in nodes {
        let Some(split) = &node.split else { continue };
        let j = split.rule.feature();
        let (l, r) = (&nodes[split.left].stats, &nodes[split.right].stats);
        match node_decrease(&node.stats, l, r, spec) {
            Some(delta) => {
                tally.score[j] += node.stats.n_in as f64 / total * delta;
                tally.used[j] += 1;
            }
            None => tally.skipped[j] += 1,
        }
    }
    tally
}

fn accumulate(f: &Forest, measure: String, spec: &PenaltySpec, truncate: bool) -> ImportanceReport {
    let p = f.feature_names().len();
    let tallies: Vec<TreeTally> = f
        .trees()
        .par_iter()
        .map(|t| walk_tree(t, p, spec))
        .collect();
    let mut report = ImportanceReport {
        measure,
        features: f.feature_names().to_vec(),
        scores: vec![0.0; p],
        nodes_used: vec![0; p],
        nodes_skipped: vec![0; p],
        truncated_at_zero: truncate,
    };
    // fixed tree order keeps the sum independent of scheduling
    for t in &tallies {
        for j in 0..p {
            report.scores[j] += t.score[j];
            report.nodes_used[j] += t.used[j];
            report.nodes_skipped[j] += t.skipped[j];
        }
    }
    let ntree = f.trees().len() as f64;
    for s in &mut report.scores {
        *s /= ntree;
        if truncate && *s < 0.0 {
            *s = 0.0;
        }
    }
    report
}

/// Mean decrease in inbag Gini impurity.
pub fn mdi(f: &Forest) -> ImportanceReport {
    accumulate(f, "mdi".into(), &PenaltySpec::INBAG, false)
}

/// Penalized OOB Gini importance. Nodes without enough OOB rows contribute
/// nothing and are counted in `nodes_skipped`.
pub fn pg_importance(f: &Forest, spec: &PenaltySpec, truncate_negative: bool) -> ImportanceReport {
    accumulate(f, spec.name(), spec, truncate_negative)
}

/// Permutation importance: per tree, OOB accuracy minus OOB accuracy after
/// permuting one feature among that tree's OOB rows, averaged over trees and
/// repeats. Trees without OOB rows contribute zero.
pub fn mda(f: &Forest, d: &Dataset, repeats: usize, seed: u64) -> ImportanceReport {
    assert!(repeats >= 1, "mda needs at least one repeat");
    let p = d.n_features();
    let y = d.response();
    let per_tree: Vec<(Vec<f64>, Vec<u64>)> = f
        .trees()
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let oob = f.oob_rows(t);
            let mut drop = vec![0.0; p];
            let mut used = vec![0u64; p];
            for node in tree.nodes() {
                if let Some(s) = &node.split {
                    used[s.rule.feature()] += 1;
                }
            }
            if oob.is_empty() {
                return (drop, used);
            }
            let m = oob.len() as f64;
            let correct = |swap: &dyn Fn(usize) -> Option<(usize, usize)>| {
                oob.iter()
                    .enumerate()
                    .filter(|&(k, &i)| tree.predict(d, i, swap(k)) == y[i])
                    .count() as f64
            };
            let base = correct(&|_| None);
            for (j, dj) in drop.iter_mut().enumerate() {
                if used[j] == 0 {
                    continue;
                }
                for r in 0..repeats {
                    let mut perm = oob.clone();
                    perm.shuffle(&mut seed::rng(seed::derive(
                        seed,
                        &[stream::MDA, t as u64, j as u64, r as u64],
                    )));
                    let permuted = correct(&|k| Some((j, perm[k])));
                    *dj += (base - permuted) / m;
                }
            }
            (drop, used)
        })
        .collect();

    let mut scores = vec![0.0; p];
    let mut nodes_used = vec![0u64; p];
    for (drop, used) in &per_tree {
        for j in 0..p {
            scores[j] += drop[j];
            nodes_used[j] += used[j];
        }
    }
    let denom = (f.trees().len() * repeats) as f64;
    scores.iter_mut().for_each(|s| *s /= denom);
    ImportanceReport {
        measure: "mda".into(),
        features: d.feature_names(),
        scores,
        nodes_used,
        nodes_skipped: vec![0; p],
        truncated_at_zero: false,
    }
}

/// Any importance measure the crate can compute.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Measure {
    Mdi,
    Mda,
    Penalized(PenaltySpec),
}

impl Measure {
    pub fn name(&self) -> String {
        match self {
            Measure::Mdi => "mdi".into(),
            Measure::Mda => "mda".into(),
            Measure::Penalized(s) => s.name(),
        }
    }

    /// Parses a comma-separated list such as `mdi,mda,pg1,pg0hat`.
    pub fn parse_list(s: &str) -> Result<Vec<Measure>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }

    pub fn compute(
        &self,
        f: &Forest,
        d: &Dataset,
        truncate_negative: bool,
        mda_repeats: usize,
        mda_seed: u64,
    ) -> ImportanceReport {
        match self {
            Measure::Mdi => mdi(f),
            Measure::Mda => mda(f, d, mda_repeats, mda_seed),
            Measure::Penalized(spec) => pg_importance(f, spec, truncate_negative),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Measure> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mdi" => Measure::Mdi,
            "mda" => Measure::Mda,
            "pg0" => Measure::Penalized(PenaltySpec::PG0),
            "pg1" => Measure::Penalized(PenaltySpec::PG1),
            "pg2" => Measure::Penalized(PenaltySpec::PG2),
            "pg3" => Measure::Penalized(PenaltySpec::PG3),
            "pg0hat" => Measure::Penalized(PenaltySpec::PG0.corrected()),
            "pg1hat" => Measure::Penalized(PenaltySpec::PG1.corrected()),
            "pg2hat" => Measure::Penalized(PenaltySpec::PG2.corrected()),
            "pg3hat" => Measure::Penalized(PenaltySpec::PG3.corrected()),
            other => {
                return Err(Error::Usage(format!(
                    "unknown measure `{other}` (expected mdi, mda, pg0..pg3 or pg0hat..pg3hat)"
                )))
            }
        })
    }
}
