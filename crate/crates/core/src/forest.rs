//! Bootstrap-bagged forests with an explicit inbag multiplicity matrix.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tree::{Tree, TreeParams};

/// Training parameters. `mtry = None` resolves to `floor(sqrt(#features))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 500,
            mtry: None,
            min_node_size: 1,
            max_depth: None,
            seed: 1,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
            .max(1)
    }

    pub fn bootstrap_seed(&self, tree: usize) -> u64 {
        seed::derive(self.seed, &[stream::BOOTSTRAP, tree as u64])
    }

    pub fn grow_seed(&self, tree: usize) -> u64 {
        seed::derive(self.seed, &[stream::GROW, tree as u64])
    }
}

/// Bootstrap sample of size `n` drawn with replacement, as per-row counts.
pub fn bootstrap(n: usize, seed: u64) -> Vec<u32> {
    assert!(n >= 1, "bootstrap of an empty sample");
    let mut rng = seed::rng(seed);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    inbag: Vec<Vec<u32>>,
    params: ForestParams,
    mtry: usize,
    feature_names: Vec<String>,
}

impl Forest {
    /// Grows `params.ntree` trees on independent bootstraps and routes each
    /// tree's OOB rows through it. Output is identical for any thread count.
    pub fn fit(d: &Dataset, params: &ForestParams) -> Result<Forest> {
        if params.ntree == 0 {
            return Err(Error::Usage("ntree must be at least 1".into()));
        }
        if d.n() < 2 {
            return Err(Error::domain("need at least 2 rows to fit a forest"));
        }
        if d.n_features() == 0 {
            return Err(Error::domain("dataset has no features"));
        }
        let pos = d.positives();
        if pos == 0 || pos == d.n() {
            return Err(Error::domain(
                "response has a single class; both 0 and 1 must be present",
            ));
        }
        let mtry = params.resolved_mtry(d.n_features());
        if mtry > d.n_features() {
            return Err(Error::Usage(format!(
                "mtry = {mtry} exceeds the number of features ({})",
                d.n_features()
            )));
        }

        let built: Vec<(Tree, Vec<u32>)> = (0..params.ntree)
            .into_par_iter()
            .map(|t| {
                let inbag = bootstrap(d.n(), params.bootstrap_seed(t));
                let tp = TreeParams {
                    mtry,
                    min_node_size: params.min_node_size,
                    max_depth: params.max_depth,
                    seed: params.grow_seed(t),
                };
                let oob: Vec<usize> = (0..d.n()).filter(|&i| inbag[i] == 0).collect();
                (Tree::grow(d, &inbag, &tp).route_oob(d, &oob), inbag)
            })
            .collect();
        let (trees, inbag) = built.into_iter().unzip();
        Ok(Forest {
            trees,
            inbag,
            params: *params,
            mtry,
            feature_names: d.feature_names(),
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// `ntree × n` bootstrap multiplicities.
    pub fn inbag(&self) -> &[Vec<u32>] {
        &self.inbag
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.inbag.first().map_or(0, Vec::len)
    }

    pub fn oob_rows(&self, tree: usize) -> Vec<usize> {
        self.inbag[tree]
            .iter()
            .enumerate()
            .filter(|&(_, &m)| m == 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per row, the fraction of its OOB trees voting class 1; `None` when
    /// the row is inbag in every tree.
    pub fn oob_predict(&self, d: &Dataset) -> Vec<Option<f64>> {
        let n = d.n();
        let mut votes = vec![0u32; n];
        let mut trees = vec![0u32; n];
        for (t, tree) in self.trees.iter().enumerate() {
            for i in self.oob_rows(t) {
                votes[i] += tree.predict(d, i, None) as u32;
                trees[i] += 1;
            }
        }
        votes
            .into_iter()
            .zip(trees)
            .map(|(v, k)| (k > 0).then(|| v as f64 / k as f64))
            .collect()
    }

    /// OOB misclassification rate over rows with at least one OOB tree.
    /// A vote share of exactly one half predicts class 0.
    pub fn oob_error(&self, d: &Dataset) -> Option<f64> {
        let (wrong, total) = self
            .oob_predict(d)
            .into_iter()
            .zip(d.response())
            .filter_map(|(p, &y)| p.map(|p| (u8::from(p > 0.5) != y) as usize))
            .fold((0usize, 0usize), |(w, t), e| (w + e, t + 1));
        (total > 0).then(|| wrong as f64 / total as f64)
    }

    pub fn to_json(&self) -> String {
        let envelope = ForestJson {
            params: self.params,
            mtry: self.mtry,
            seed: self.params.seed,
            feature_names: self.feature_names.clone(),
            n: self.n_rows(),
            inbag: self.inbag.iter().map(|row| rle_encode(row)).collect(),
            trees: self.trees.clone(),
        };
        serde_json::to_string_pretty(&envelope).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let env: ForestJson = serde_json::from_str(text)?;
        let inbag: Vec<Vec<u32>> = env.inbag.iter().map(|r| rle_decode(r)).collect();
        if inbag.len() != env.trees.len() || inbag.iter().any(|r| r.len() != env.n) {
            return Err(Error::Schema("inbag matrix does not match trees/rows".into()));
        }
        Ok(Forest {
            trees: env.trees,
            inbag,
            params: env.params,
            mtry: env.mtry,
            feature_names: env.feature_names,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ForestJson {
    params: ForestParams,
    mtry: usize,
    seed: u64,
    feature_names: Vec<String>,
    n: usize,
    /// Per tree, `[value, run length]` pairs.
    inbag: Vec<Vec<[u32; 2]>>,
    trees: Vec<Tree>,
}

pub fn rle_encode(xs: &[u32]) -> Vec<[u32; 2]> {
    let mut out: Vec<[u32; 2]> = Vec::new();
    for &x in xs {
        match out.last_mut() {
            Some(run) if run[0] == x => run[1] += 1,
            _ => out.push([x, 1]),
        }
    }
    out
}

pub fn rle_decode(runs: &[[u32; 2]]) -> Vec<u32> {
    runs.iter()
        .flat_map(|&[v, k]| std::iter::repeat_n(v, k as usize))
        .collect()
}
