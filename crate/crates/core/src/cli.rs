//! The `oobgini` command line.
//!
//! Every output file starts with the fully resolved configuration (including
//! derived seeds): as `#` comment lines in CSV, a `config` object in JSON and
//! a `<desc>` element in SVG.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::boxplot;
use crate::dataset::{self, LoadOptions, Schema};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};
use crate::importance::{ImportanceReport, Measure, PenaltySpec};
use crate::seed::{self, stream};
use crate::simlab::{self, Case, ExpectationConfig, NodeMeasure, SimDesign};

pub const THREADS_ENV: &str = "OOBGINI_THREADS";

#[derive(Parser, Debug)]
#[command(name = "oobgini", version, about = "Out-of-bag penalized Gini importance for random forests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a forest on a CSV file and report variable importance.
    Importance(ImportanceArgs),
    /// Run the null or power simulation study.
    Simulate(SimulateArgs),
    /// Monte-Carlo check of node-level expected impurity decrease.
    Expectation(ExpectationArgs),
    /// Render a long-format score CSV as SVG boxplots.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct ForestFlags {
    /// Number of trees.
    #[arg(long)]
    pub ntree: Option<usize>,
    /// Features drawn per split [default: floor(sqrt(#features))].
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Nodes with fewer inbag samples are not split.
    #[arg(long, default_value_t = 1)]
    pub min_node_size: usize,
    /// Maximum tree depth [default: unlimited].
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct MeasureFlags {
    /// Comma-separated: mdi, mda, pg0..pg3, pg0hat..pg3hat.
    #[arg(long)]
    pub measures: Option<String>,
    /// Add a custom penalized measure with this OOB weight (needs --lambda).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Penalty weight of the custom measure (needs --alpha).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Apply the N/(N-1) correction to the custom measure.
    #[arg(long)]
    pub bias_corrected: bool,
    /// Clip negative importance scores to zero.
    #[arg(long)]
    pub truncate_negative: bool,
    /// Permutation repeats for MDA.
    #[arg(long, default_value_t = 1)]
    pub mda_repeats: usize,
}

impl MeasureFlags {
    fn resolve(&self, default: &str) -> Result<Vec<Measure>> {
        let mut measures = Measure::parse_list(self.measures.as_deref().unwrap_or(default))?;
        match (self.alpha, self.lambda) {
            (Some(alpha), Some(lambda)) => {
                let mut spec = PenaltySpec::new(alpha, lambda);
                spec.bias_corrected = self.bias_corrected;
                spec.validate()?;
                measures.push(Measure::Penalized(spec));
            }
            (None, None) if self.bias_corrected => {
                return Err(Error::Usage(
                    "--bias-corrected needs --alpha and --lambda; use pg0hat etc. for presets".into(),
                ))
            }
            (None, None) => {}
            _ => {
                return Err(Error::Usage(
                    "--alpha and --lambda must be given together".into(),
                ))
            }
        }
        if measures.is_empty() {
            return Err(Error::Usage("no measures requested".into()));
        }
        if self.mda_repeats == 0 {
            return Err(Error::Usage("--mda-repeats must be at least 1".into()));
        }
        let mut seen = Vec::new();
        measures.retain(|m| {
            let fresh = !seen.contains(m);
            seen.push(*m);
            fresh
        });
        Ok(measures)
    }
}

#[derive(Args, Debug, Clone)]
pub struct ImportanceArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON map of column name to "continuous" or "categorical"; columns not
    /// listed are ignored. Without it every column is used and typed by
    /// inspection.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Name of the 0/1 response column.
    #[arg(long)]
    pub response: String,
    /// Drop rows with missing values in used columns instead of failing.
    #[arg(long)]
    pub drop_incomplete: bool,
    /// Append a shuffled copy of this feature as an uninformative control.
    #[arg(long)]
    pub shuffle: Option<String>,
    #[arg(long, default_value = dataset::DEFAULT_SHUFFLE_SUFFIX)]
    pub shuffle_suffix: String,
    #[command(flatten)]
    pub measures: MeasureFlags,
    #[command(flatten)]
    pub forest: ForestFlags,
    /// Also write the fitted forest as JSON.
    #[arg(long)]
    pub dump_forest: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, value_parser = ["null", "power"])]
    pub case: String,
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    /// Rows per simulated dataset.
    #[arg(long, default_value_t = 120)]
    pub n: usize,
    #[command(flatten)]
    pub measures: MeasureFlags,
    #[command(flatten)]
    pub forest: ForestFlags,
    /// Long-format scores (csv) or the full result (json).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Summary JSON path [default: next to --output as <stem>.summary.json].
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct ExpectationArgs {
    /// gini-oob (un-doubled OOB Gini) or any pg measure, e.g. pg2, pg0hat.
    #[arg(long, default_value = "gini-oob")]
    pub measure: String,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    pub node_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub p_oob: Vec<f64>,
    /// Probability that a row goes left at the random split.
    #[arg(long, default_value_t = 0.5)]
    pub split_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct PlotArgs {
    /// Long-format CSV as written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Only plot these measures (comma-separated), in this order.
    #[arg(long, value_delimiter = ',')]
    pub measures: Option<Vec<String>>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on a data/domain error, 2 on a
/// usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if the global pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Importance(a) => importance(a),
        Command::Simulate(a) => simulate(a),
        Command::Expectation(a) => expectation(a),
        Command::Plot(a) => plot(a),
    }
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn csv_preamble(command: &str, config: &serde_json::Value) -> String {
    format!("# oobgini {command}\n# config: {config}\n")
}

fn forest_params(f: &ForestFlags, default_ntree: usize, default_mtry: Option<usize>) -> Result<ForestParams> {
    if f.mtry == Some(0) {
        return Err(Error::Usage("--mtry must be at least 1".into()));
    }
    let ntree = f.ntree.unwrap_or(default_ntree);
    if ntree == 0 {
        return Err(Error::Usage("--ntree must be at least 1".into()));
    }
    Ok(ForestParams {
        ntree,
        mtry: f.mtry.or(default_mtry),
        min_node_size: f.min_node_size,
        max_depth: f.max_depth,
        seed: f.seed,
    })
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn importance(a: &ImportanceArgs) -> Result<()> {
    let measures = a.measures.resolve("mdi,mda,pg1,pg2")?;
    let params = forest_params(&a.forest, 500, None)?;
    let schema = a.schema.as_deref().map(Schema::load).transpose()?;
    let opts = LoadOptions {
        drop_incomplete: a.drop_incomplete,
    };
    let mut data = dataset::load_csv(&a.data, schema.as_ref(), &a.response, &opts)?;
    if let Some(name) = &a.shuffle {
        data = data.shuffle_feature(name, a.forest.seed, &a.shuffle_suffix)?;
    }
    let mtry = params.resolved_mtry(data.n_features());
    if mtry > data.n_features() {
        return Err(Error::Usage(format!(
            "--mtry {mtry} exceeds the number of features ({})",
            data.n_features()
        )));
    }
    let forest = Forest::fit(&data, &params)?;
    let mda_seed = seed::derive(params.seed, &[stream::MDA]);
    let reports: Vec<ImportanceReport> = measures
        .iter()
        .map(|m| m.compute(&forest, &data, a.measures.truncate_negative, a.measures.mda_repeats, mda_seed))
        .collect();

    let tree_seeds: Vec<_> = (0..params.ntree)
        .map(|t| json!({"bootstrap": params.bootstrap_seed(t), "grow": params.grow_seed(t)}))
        .collect();
    let config = json!({
        "command": "importance",
        "data": a.data.display().to_string(),
        "schema": path_str(&a.schema),
        "response": a.response,
        "dropIncomplete": a.drop_incomplete,
        "shuffle": a.shuffle.as_ref().map(|s| format!("{s}{}", a.shuffle_suffix)),
        "rows": data.n(),
        "features": data.feature_names(),
        "kinds": data.kinds(),
        "measures": measures.iter().map(Measure::name).collect::<Vec<_>>(),
        "truncateNegative": a.measures.truncate_negative,
        "mdaRepeats": a.measures.mda_repeats,
        "mdaSeed": mda_seed,
        "ntree": params.ntree,
        "mtry": mtry,
        "minNodeSize": params.min_node_size,
        "maxDepth": params.max_depth,
        "seed": params.seed,
        "treeSeeds": tree_seeds,
        "oobError": forest.oob_error(&data),
        "unseenLevelEvents": forest.trees().iter().map(|t| t.unseen_level_events()).sum::<u64>(),
    });

    if let Some(p) = &a.dump_forest {
        std::fs::write(p, forest.to_json()).map_err(|e| Error::io(p, e))?;
    }

    let text = match a.format {
        Format::Csv => {
            let mut s = csv_preamble("importance", &config);
            s.push_str(ImportanceReport::csv_header());
            s.push('\n');
            for r in &reports {
                s.push_str(&r.csv_rows());
            }
            s
        }
        Format::Json => {
            serde_json::to_string_pretty(&json!({"config": config, "reports": reports}))? + "\n"
        }
    };
    write_output(a.output.as_deref(), &text)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let case: Case = a.case.parse()?;
    let measures = a
        .measures
        .resolve("mdi,mda,pg0,pg1,pg2,pg3,pg0hat,pg1hat,pg2hat")?;
    let forest = forest_params(&a.forest, 100, Some(3))?;
    if forest.resolved_mtry(5) > 5 {
        return Err(Error::Usage("--mtry cannot exceed 5 for the simulated designs".into()));
    }
    let design = SimDesign {
        case,
        n: a.n,
        replications: a.replications,
        forest,
        measures,
        truncate_negative: a.measures.truncate_negative,
        mda_repeats: a.measures.mda_repeats,
    };
    design.validate()?;
    let master = a.forest.seed;
    let result = simlab::run_study(&design, master)?;
    let rep_seeds: Vec<_> = (0..design.replications)
        .map(|r| {
            json!({
                "data": design.data_seed(master, r),
                "forest": design.forest_seed(master, r),
                "mda": design.mda_seed(master, r),
            })
        })
        .collect();
    let config = json!({
        "command": "simulate",
        "case": case,
        "n": design.n,
        "replications": design.replications,
        "measures": result.measures,
        "truncateNegative": design.truncate_negative,
        "mdaRepeats": design.mda_repeats,
        "ntree": forest.ntree,
        "mtry": forest.resolved_mtry(5),
        "minNodeSize": forest.min_node_size,
        "maxDepth": forest.max_depth,
        "seed": master,
        "replicationSeeds": rep_seeds,
        "redrawnDatasets": result.redrawn_datasets,
    });
    let summary = serde_json::to_string_pretty(&json!({
        "config": config,
        "summaries": result.summaries,
    }))? + "\n";

    let text = match a.format {
        Format::Csv => csv_preamble("simulate", &config) + &result.to_long_csv(),
        Format::Json => serde_json::to_string_pretty(&json!({"config": config, "result": result}))? + "\n",
    };
    write_output(a.output.as_deref(), &text)?;
    let summary_path = a.summary.clone().or_else(|| {
        a.output.as_ref().map(|o| {
            let stem = o.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            o.with_file_name(format!("{stem}.summary.json"))
        })
    });
    if let Some(p) = summary_path {
        std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn expectation(a: &ExpectationArgs) -> Result<()> {
    let measure: NodeMeasure = a.measure.parse()?;
    if a.node_sizes.is_empty() || a.p_oob.is_empty() {
        return Err(Error::Usage("empty --node-sizes or --p-oob grid".into()));
    }
    let mut rows = Vec::new();
    for (i, &node_size) in a.node_sizes.iter().enumerate() {
        for (k, &p_oob) in a.p_oob.iter().enumerate() {
            let cfg = ExpectationConfig {
                node_size,
                p_oob,
                split_fraction: a.split_fraction,
                trials: a.trials,
                seed: seed::derive(a.seed, &[i as u64, k as u64]),
            };
            rows.push((cfg, simlab::expectation_test(measure, &cfg)?));
        }
    }
    let config = json!({
        "command": "expectation",
        "measure": measure.name(),
        "trials": a.trials,
        "nodeSizes": a.node_sizes,
        "pOob": a.p_oob,
        "splitFraction": a.split_fraction,
        "seed": a.seed,
        "cellSeeds": rows.iter().map(|(c, _)| c.seed).collect::<Vec<_>>(),
    });
    let text = match a.format {
        Format::Csv => {
            let mut s = csv_preamble("expectation", &config);
            s.push_str("measure,nodeSize,pOob,trials,redrawn,empirical,theoretical,stdError,z,within4se\n");
            for (_, r) in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.measure,
                    r.node_size,
                    r.p_oob,
                    r.trials,
                    r.redrawn,
                    r.empirical_mean,
                    r.theoretical_mean,
                    r.std_error,
                    r.z(),
                    r.z().abs() < 4.0
                ));
            }
            s
        }
        Format::Json => {
            let cells: Vec<_> = rows
                .iter()
                .map(|(_, r)| {
                    json!({
                        "result": r,
                        "z": r.z(),
                        "within4se": r.z().abs() < 4.0,
                    })
                })
                .collect();
            serde_json::to_string_pretty(&json!({"config": config, "cells": cells}))? + "\n"
        }
    };
    write_output(a.output.as_deref(), &text)
}

fn plot(a: &PlotArgs) -> Result<()> {
    let file = std::fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let mut records = boxplot::read_long_csv(file)?;
    if let Some(keep) = &a.measures {
        records.retain(|r| keep.contains(&r.measure));
        // panel order follows the flag
        records.sort_by_key(|r| keep.iter().position(|m| m == &r.measure));
    }
    if records.is_empty() {
        return Err(Error::domain(format!("{}: no rows to plot", a.input.display())));
    }
    let config = json!({
        "command": "plot",
        "input": a.input.display().to_string(),
        "measures": a.measures,
        "rows": records.len(),
    });
    let svg = boxplot::emit_boxplot(&records, &format!("oobgini plot; config: {config}"))?;
    write_output(a.output.as_deref(), &svg)
}
