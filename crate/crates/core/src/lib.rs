//! Random forests for binary classification with out-of-bag penalized Gini
//! variable importance.
//!
//! The crate grows CART trees on bootstrap samples, routes each tree's
//! out-of-bag (OOB) rows back through it so every node carries both inbag
//! and OOB class counts, and scores features with:
//!
//! * MDI, the classic inbag mean decrease in Gini impurity;
//! * MDA, Breiman's OOB permutation importance;
//! * the penalized Gini family `α·I_oob + (1−α)·I_in + λ·(p̂_oob − p̂_in)²`
//!   and its bias-corrected variant, which rescales the OOB impurity by
//!   `N/(N−1)`.
//!
//! [`simlab`] regenerates the null/power cardinality-bias simulations and
//! the node-level expectation experiments, and [`cli`] wires everything into
//! the `oobgini` binary.

pub mod boxplot;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod importance;
pub mod seed;
pub mod simlab;
pub mod stats;
pub mod tree;

pub use dataset::{Column, Dataset, Feature, FeatureKind, LoadOptions, Schema};
pub use error::{Error, Result};
pub use forest::{Forest, ForestParams};
pub use importance::{ImportanceReport, Measure, PenaltySpec};
pub use tree::{NodeStats, SplitRule, Tree, TreeParams};
