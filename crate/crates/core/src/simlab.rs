//! Simulation studies for importance bias.
//!
//! Two designs share five predictors: `X1` standard normal and `X2`–`X5`
//! uniform multinomial with 2, 4, 10 and 20 levels. In the null case the
//! response is an independent fair coin; in the power case
//! `P(y=1 | X2=1) = 0.35` and `P(y=1 | X2=2) = 0.65`.
//!
//! [`expectation_test`] checks node-level expected impurity decreases for an
//! uninformative split by Monte Carlo.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Feature};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};
use crate::importance::{csv_field, decrease_with_weights, Measure, PenaltySpec};
use crate::seed::{self, stream};
use crate::stats::Summary;
use crate::tree::NodeStats;

/// Levels of `X2..X5`.
pub const CATEGORICAL_LEVELS: [usize; 4] = [2, 4, 10, 20];
pub const POWER_P_LOW: f64 = 0.35;
pub const POWER_P_HIGH: f64 = 0.65;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Null,
    Power,
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Case> {
        match s {
            "null" => Ok(Case::Null),
            "power" => Ok(Case::Power),
            _ => Err(Error::Usage(format!("unknown case `{s}` (expected null or power)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimDesign {
    pub case: Case,
    pub n: usize,
    pub replications: usize,
    pub forest: ForestParams,
    pub measures: Vec<Measure>,
    pub truncate_negative: bool,
    pub mda_repeats: usize,
}

impl SimDesign {
    /// Defaults: n = 120, 100 replications, 100 trees, mtry = 3.
    pub fn new(case: Case) -> SimDesign {
        SimDesign {
            case,
            n: 120,
            replications: 100,
            forest: ForestParams {
                ntree: 100,
                mtry: Some(3),
                min_node_size: 1,
                max_depth: None,
                seed: 0,
            },
            measures: vec![
                Measure::Mdi,
                Measure::Penalized(PenaltySpec::PG1),
                Measure::Penalized(PenaltySpec::PG2),
            ],
            truncate_negative: false,
            mda_repeats: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Usage(format!("n = {} is below the minimum of 10", self.n)));
        }
        if self.replications < 1 {
            return Err(Error::Usage("replications must be at least 1".into()));
        }
        if self.measures.is_empty() {
            return Err(Error::Usage("no measures requested".into()));
        }
        for m in &self.measures {
            if let Measure::Penalized(s) = m {
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn data_seed(&self, master: u64, rep: usize) -> u64 {
        seed::derive(master, &[stream::SIM_DATA, rep as u64])
    }

    pub fn forest_seed(&self, master: u64, rep: usize) -> u64 {
        seed::derive(master, &[stream::SIM_FOREST, rep as u64])
    }

    pub fn mda_seed(&self, master: u64, rep: usize) -> u64 {
        seed::derive(master, &[stream::SIM_MDA, rep as u64])
    }
}

/// Draws one dataset of the design's case. Level `k` of a categorical
/// predictor is labelled `k+1`, so code 0 of `X2` reads `X2=1`.
pub fn gen_case(case: Case, n: usize, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = vec![Feature::continuous("X1", x1)];
    for (k, &levels) in CATEGORICAL_LEVELS.iter().enumerate() {
        let codes: Vec<u8> = (0..n).map(|_| rng.random_range(0..levels as u8)).collect();
        let labels = (1..=levels).map(|l| l.to_string()).collect();
        features.push(Feature::categorical(format!("X{}", k + 2), codes, labels));
    }
    let y: Vec<u8> = match case {
        Case::Null => (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect(),
        Case::Power => {
            let crate::dataset::Column::Categorical { codes, .. } = &features[1].column else {
                unreachable!()
            };
            codes
                .iter()
                .map(|&c| {
                    let p = if c == 0 { POWER_P_LOW } else { POWER_P_HIGH };
                    u8::from(rng.random_bool(p))
                })
                .collect()
        }
    };
    Dataset::new(features, y).expect("generated dataset is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub feature: String,
    pub measure: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub features: Vec<String>,
    pub measures: Vec<String>,
    pub replications: usize,
    /// Flattened `[replication][feature][measure]`.
    pub scores: Vec<f64>,
    pub summaries: Vec<SummaryEntry>,
    /// Replications whose dataset had a single response class and were
    /// redrawn with the next seed.
    pub redrawn_datasets: usize,
}

impl SimResult {
    pub fn score(&self, rep: usize, feature: usize, measure: usize) -> f64 {
        let (p, m) = (self.features.len(), self.measures.len());
        self.scores[(rep * p + feature) * m + measure]
    }

    pub fn column(&self, feature: &str, measure: &str) -> Option<Vec<f64>> {
        let j = self.features.iter().position(|f| f == feature)?;
        let k = self.measures.iter().position(|m| m == measure)?;
        Some((0..self.replications).map(|r| self.score(r, j, k)).collect())
    }

    pub fn summary(&self, feature: &str, measure: &str) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|e| e.feature == feature && e.measure == measure)
            .map(|e| &e.summary)
    }

    /// Long format: `replication,feature,measure,score` with header.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("replication,feature,measure,score\n");
        for r in 0..self.replications {
            for (j, f) in self.features.iter().enumerate() {
                for (k, m) in self.measures.iter().enumerate() {
                    out.push_str(&format!(
                        "{r},{},{},{}\n",
                        csv_field(f),
                        csv_field(m),
                        self.score(r, j, k)
                    ));
                }
            }
        }
        out
    }
}

/// Runs every replication: generate data, fit a forest, score all measures.
pub fn run_study(design: &SimDesign, master_seed: u64) -> Result<SimResult> {
    design.validate()?;
    let per_rep: Vec<(Vec<f64>, usize)> = (0..design.replications)
        .into_par_iter()
        .map(|r| {
            // Tiny designs can draw a single-class response; step the seed.
            let mut redrawn = 0;
            let d = loop {
                let s = seed::derive(design.data_seed(master_seed, r), &[redrawn as u64]);
                let d = gen_case(design.case, design.n, s);
                let pos = d.positives();
                if pos > 0 && pos < d.n() {
                    break d;
                }
                redrawn += 1;
            };
            let params = ForestParams {
                seed: design.forest_seed(master_seed, r),
                ..design.forest
            };
            let f = Forest::fit(&d, &params)?;
            let reports: Vec<_> = design
                .measures
                .iter()
                .map(|m| {
                    m.compute(
                        &f,
                        &d,
                        design.truncate_negative,
                        design.mda_repeats,
                        design.mda_seed(master_seed, r),
                    )
                })
                .collect();
            let p = d.n_features();
            let mut row = Vec::with_capacity(p * reports.len());
            for j in 0..p {
                for rep in &reports {
                    row.push(rep.scores[j]);
                }
            }
            Ok((row, redrawn))
        })
        .collect::<Result<_>>()?;

    let features: Vec<String> = (1..=5).map(|i| format!("X{i}")).collect();
    let measures: Vec<String> = design.measures.iter().map(Measure::name).collect();
    let mut result = SimResult {
        features,
        measures,
        replications: design.replications,
        scores: per_rep.iter().flat_map(|(row, _)| row.iter().copied()).collect(),
        summaries: Vec::new(),
        redrawn_datasets: per_rep.iter().map(|&(_, k)| k).sum(),
    };
    for (j, f) in result.features.iter().enumerate() {
        for (k, m) in result.measures.iter().enumerate() {
            let col: Vec<f64> = (0..result.replications)
                .map(|r| result.score(r, j, k))
                .collect();
            result.summaries.push(SummaryEntry {
                feature: f.clone(),
                measure: m.clone(),
                summary: Summary::of(&col),
            });
        }
    }
    Ok(result)
}

/// Node-level quantity whose expectation under an uninformative split is
/// checked by [`expectation_test`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeMeasure {
    /// Un-doubled OOB Gini `p(1−p)`.
    GiniOob,
    Penalized(PenaltySpec),
}

impl NodeMeasure {
    pub fn name(&self) -> String {
        match self {
            NodeMeasure::GiniOob => "gini-oob".into(),
            NodeMeasure::Penalized(s) => s.name(),
        }
    }

    fn min_child(&self) -> usize {
        match self {
            NodeMeasure::GiniOob => 1,
            NodeMeasure::Penalized(s) => (s.min_oob() as usize).max(1),
        }
    }

    /// Expected decrease for an uninformative split of a node with `n` OOB
    /// rows (and an equally sized, independent inbag sample) at true
    /// proportion `p`.
    ///
    /// Every term of the node impurity has expectation `a + b/M` at sample
    /// size `M`, so with children weighted by `M_c/n` the decrease has
    /// expectation `−b/n` whatever the child sizes are.
    pub fn theoretical_mean(&self, n: usize, p: f64) -> f64 {
        let s = p * (1.0 - p);
        let n = n as f64;
        match self {
            NodeMeasure::GiniOob => s / n,
            NodeMeasure::Penalized(spec) => {
                let corrected = if spec.bias_corrected { 1.0 } else { 0.0 };
                // OOB Gini: −2s·α unless corrected; inbag Gini: −2s(1−α);
                // penalty: var(p̂_oob) + var(p̂_in) = 2s/M.
                let b = 2.0 * s * (spec.lambda - 1.0 + spec.alpha * corrected);
                -b / n
            }
        }
    }
}

impl std::str::FromStr for NodeMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<NodeMeasure> {
        match s {
            "gini-oob" | "goob" => Ok(NodeMeasure::GiniOob),
            other => match other.parse::<Measure>()? {
                Measure::Penalized(spec) => Ok(NodeMeasure::Penalized(spec)),
                m => Err(Error::Usage(format!(
                    "measure `{m}` has no node-level form; use gini-oob or a pg measure"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationConfig {
    pub node_size: usize,
    pub p_oob: f64,
    /// Probability that a row goes to the left child.
    pub split_fraction: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub measure: String,
    pub node_size: usize,
    pub p_oob: f64,
    pub trials: usize,
    /// Trials rejected because a child was too small for the measure.
    pub redrawn: u64,
    pub empirical_mean: f64,
    pub theoretical_mean: f64,
    pub std_error: f64,
}

impl ExpectationResult {
    pub fn z(&self) -> f64 {
        (self.empirical_mean - self.theoretical_mean) / self.std_error
    }
}

const TRIALS_PER_CHUNK: usize = 4096;

/// Monte-Carlo mean of the impurity decrease at one node split on an
/// uninformative variable.
///
/// Each trial assigns the node's `node_size` OOB rows to the left child with
/// probability `split_fraction`, draws their labels iid Bernoulli(`p_oob`),
/// and draws an independent inbag sample of the same size and proportion
/// split into children of the same sizes. Children weights are the OOB
/// counts. Trials with a child smaller than the measure requires are redrawn.
pub fn expectation_test(measure: NodeMeasure, cfg: &ExpectationConfig) -> Result<ExpectationResult> {
    if cfg.node_size < 4 {
        return Err(Error::Usage("node size must be at least 4".into()));
    }
    if !(0.0..=1.0).contains(&cfg.p_oob) {
        return Err(Error::Usage("p_oob must lie in [0, 1]".into()));
    }
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return Err(Error::Usage("split fraction must lie in (0, 1)".into()));
    }
    if cfg.trials < 2 {
        return Err(Error::Usage("need at least 2 trials".into()));
    }
    if let NodeMeasure::Penalized(s) = measure {
        s.validate()?;
    }
    let chunks = cfg.trials.div_ceil(TRIALS_PER_CHUNK);
    let per_chunk: Vec<(Vec<f64>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = TRIALS_PER_CHUNK.min(cfg.trials - c * TRIALS_PER_CHUNK);
            let mut rng = seed::rng(seed::derive(cfg.seed, &[stream::EXPECTATION, c as u64]));
            let mut out = Vec::with_capacity(len);
            let mut redrawn = 0;
            while out.len() < len {
                match one_trial(measure, cfg, &mut rng) {
                    Some(delta) => out.push(delta),
                    None => redrawn += 1,
                }
            }
            (out, redrawn)
        })
        .collect();
    let deltas: Vec<f64> = per_chunk.iter().flat_map(|(v, _)| v.iter().copied()).collect();
    let summary_mean = crate::stats::mean(&deltas);
    Ok(ExpectationResult {
        measure: measure.name(),
        node_size: cfg.node_size,
        p_oob: cfg.p_oob,
        trials: cfg.trials,
        redrawn: per_chunk.iter().map(|&(_, r)| r).sum(),
        empirical_mean: summary_mean,
        theoretical_mean: measure.theoretical_mean(cfg.node_size, cfg.p_oob),
        std_error: crate::stats::std_error(&deltas),
    })
}

fn one_trial<R: Rng>(measure: NodeMeasure, cfg: &ExpectationConfig, rng: &mut R) -> Option<f64> {
    let n = cfg.node_size;
    let (mut n_left, mut pos_left, mut pos_right) = (0u32, 0u32, 0u32);
    for _ in 0..n {
        let y = u32::from(rng.random_bool(cfg.p_oob));
        if rng.random_bool(cfg.split_fraction) {
            n_left += 1;
            pos_left += y;
        } else {
            pos_right += y;
        }
    }
    let n_right = n as u32 - n_left;
    let min = measure.min_child() as u32;
    if n_left < min || n_right < min {
        return None;
    }
    let w_left = n_left as f64 / n as f64;
    let w_right = n_right as f64 / n as f64;
    match measure {
        NodeMeasure::GiniOob => {
            let g = |pos: u32, k: u32| {
                let p = pos as f64 / k as f64;
                p * (1.0 - p)
            };
            Some(
                g(pos_left + pos_right, n as u32)
                    - w_left * g(pos_left, n_left)
                    - w_right * g(pos_right, n_right),
            )
        }
        NodeMeasure::Penalized(spec) => {
            let in_left = (0..n_left).filter(|_| rng.random_bool(cfg.p_oob)).count() as u32;
            let in_right = (0..n_right).filter(|_| rng.random_bool(cfg.p_oob)).count() as u32;
            let node = |n_in, n_in_pos, n_oob, n_oob_pos| NodeStats {
                n_in,
                n_in_pos,
                n_oob,
                n_oob_pos,
            };
            let parent = node(n as u32, in_left + in_right, n as u32, pos_left + pos_right);
            let left = node(n_left, in_left, n_left, pos_left);
            let right = node(n_right, in_right, n_right, pos_right);
            decrease_with_weights(&parent, &left, &right, w_left, w_right, &spec)
        }
    }
}
