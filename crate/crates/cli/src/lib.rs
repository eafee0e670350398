//! Entry points behind the `gsal` binary.
//!
//! * `run`: one simulated-oracle run, writing labels, a per-step metrics
//!   stream and a summary.
//! * `bench`: budget × splitter × seed sweeps.
//! * `boundcheck`: Monte-Carlo coverage and ternary-vs-grid checks of the bound.
//! * `serve`: the HTTP labeling server.

pub mod bench;
pub mod boundcheck;
pub mod run;
pub mod serve;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gsal_core::data::LoadOptions;
use gsal_core::engine::RunConfig;
use gsal_core::splitters::SplitterKind;

pub use bench::{cmd_bench, BenchArgs, BenchRow};
pub use boundcheck::{cmd_boundcheck, BoundcheckArgs, BoundcheckReport};
pub use run::{cmd_run, simulate, RunArgs, RunSummary};
pub use serve::{cmd_serve, ServeArgs};

#[derive(Parser, Debug)]
#[command(name = "gsal", version, about = "Budgeted dataset labeling by greedy split-and-label exploration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Label a dataset with a simulated oracle that reveals its label column
    Run(RunArgs),
    /// Sweep budgets, splitters and seeds
    Bench(BenchArgs),
    /// Check the correct-label bound empirically
    Boundcheck(BoundcheckArgs),
    /// Host labeling sessions over HTTP
    Serve(ServeArgs),
}

/// `HxW`, e.g. `28x28`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderHint(pub usize, pub usize);

impl FromStr for RenderHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("render hint {s:?} is not HxW"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("render hint {s:?} is not HxW"));
        Ok(RenderHint(parse(h)?, parse(w)?))
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset CSV with a header row (`.csv.gz` is read transparently)
    #[arg(long)]
    pub data: PathBuf,
    /// Column holding the true class
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Number of classes; inferred from the label column when omitted
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Image shape for display, as HxW
    #[arg(long)]
    pub render_hint: Option<RenderHint>,
}

impl DataArgs {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            label_column: Some(self.label_column.clone()),
            num_classes: self.num_classes,
            render_hint: self.render_hint.map(|RenderHint(h, w)| (h, w)),
        }
    }
}

/// Settings shared by `run` and `bench`. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TuningArgs {
    /// JSON run configuration; missing fields take their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of labels routed to the isolated training sets
    #[arg(long)]
    pub training_ratio: Option<f64>,
    /// Leaf uniformity a leaf must exceed for its labels to be inferred
    #[arg(long)]
    pub quality: Option<f64>,
    /// Smallest node that may be split
    #[arg(long)]
    pub min_split_size: Option<usize>,
    /// Stop once no action has positive gain
    #[arg(long)]
    pub early_stop: bool,
}

impl TuningArgs {
    pub fn base_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(r) = self.training_ratio {
            config.training_ratio = r;
        }
        if let Some(q) = self.quality {
            config.quality = q;
        }
        if let Some(s) = self.min_split_size {
            config.min_split_size = s;
        }
        if self.early_stop {
            config.early_stop = true;
        }
        Ok(config)
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Seed both the engine and the splitter.
pub fn apply_seed(config: &mut RunConfig, seed: u64) {
    config.seed = seed;
    config.splitter.seed = seed;
}

pub fn apply_splitter(config: &mut RunConfig, kind: SplitterKind) {
    config.splitter.kind = kind;
}
