use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use gsal_core::splitters::SplitterKind;
use serde::{Deserialize, Serialize};

use crate::run::{load_dataset, load_test, simulate};
use crate::{apply_seed, apply_splitter, DataArgs, TuningArgs};

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Comma-separated budgets
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 0.., default_values_t = [SplitterKind::Logistic, SplitterKind::Kmeans2])]
    pub splitters: Vec<SplitterKind>,
    #[arg(long, value_delimiter = ',', num_args = 0.., default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    /// Held-out CSV for the model-accuracy column
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Per-run rows as CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub budget: usize,
    pub splitter: SplitterKind,
    pub seed: u64,
    pub size_of_y: usize,
    pub size_pct: f64,
    pub oracle_labels: usize,
    pub inferred_labels: usize,
    pub label_accuracy: Option<f64>,
    pub correct_labels: Option<usize>,
    pub model_accuracy: Option<f64>,
    pub num_leaves: usize,
    pub budget_used: usize,
}

pub const BENCH_HEADER: &str = "budget,splitter,seed,size_of_Y,size_pct,oracle_labels,inferred_labels,\
label_accuracy,correct_labels,model_accuracy,num_leaves,budget_used";

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{},{},{},{},{},{},{}",
            self.budget,
            self.splitter,
            self.seed,
            self.size_of_y,
            self.size_pct,
            self.oracle_labels,
            self.inferred_labels,
            cell(self.label_accuracy.map(|a| format!("{a:.6}"))),
            cell(self.correct_labels),
            cell(self.model_accuracy.map(|a| format!("{a:.6}"))),
            self.num_leaves,
            self.budget_used,
        )
    }
}

/// Mean and sample standard deviation of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(Spread { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub budget: usize,
    pub splitter: SplitterKind,
    pub runs: usize,
    pub size_of_y: Spread,
    pub size_pct: f64,
    pub label_accuracy: Option<Spread>,
    pub model_accuracy: Option<Spread>,
}

pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, String), Vec<&BenchRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.budget, row.splitter.to_string())).or_default().push(row);
    }
    groups
        .into_values()
        .map(|group| {
            let sizes: Vec<f64> = group.iter().map(|r| r.size_of_y as f64).collect();
            let pcts: Vec<f64> = group.iter().map(|r| r.size_pct).collect();
            let label: Vec<f64> = group.iter().filter_map(|r| r.label_accuracy).collect();
            let model: Vec<f64> = group.iter().filter_map(|r| r.model_accuracy).collect();
            Aggregate {
                budget: group[0].budget,
                splitter: group[0].splitter,
                runs: group.len(),
                size_of_y: spread(&sizes).expect("groups are nonempty"),
                size_pct: spread(&pcts).expect("groups are nonempty").mean,
                label_accuracy: spread(&label),
                model_accuracy: spread(&model),
            }
        })
        .collect()
}

pub fn format_aggregate(groups: &[Aggregate]) -> String {
    let fmt = |s: Option<Spread>| s.map_or("-".to_string(), |s| format!("{:.2} ± {:.2}", s.mean, s.std));
    let mut out = String::from("| budget | splitter | runs | size of Y | label accuracy | model accuracy |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for g in groups {
        out.push_str(&format!(
            "| {} | {} | {} | {:.0} ± {:.0} ({:.0}%) | {} | {} |\n",
            g.budget,
            g.splitter,
            g.runs,
            g.size_of_y.mean,
            g.size_of_y.std,
            g.size_pct,
            fmt(g.label_accuracy),
            fmt(g.model_accuracy),
        ));
    }
    out
}

/// Run the sweep, writing one CSV row per run as it finishes.
pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<Vec<BenchRow>> {
    let base = args.tuning.base_config()?;
    writeln!(out, "{BENCH_HEADER}")?;
    if args.budgets.is_empty() || args.splitters.is_empty() || args.seeds.is_empty() {
        return Ok(Vec::new());
    }
    let options = args.data.load_options();
    let dataset = Arc::new(load_dataset(&args.data.data, &options)?);
    let test = match &args.test_data {
        Some(path) => Some(load_test(path, &options, &dataset)?),
        None => None,
    };
    let mut rows = Vec::new();
    for &budget in &args.budgets {
        for &splitter in &args.splitters {
            for &seed in &args.seeds {
                let mut config = base.clone();
                config.budget = budget;
                apply_splitter(&mut config, splitter);
                apply_seed(&mut config, seed);
                config.validate()?;
                let summary = simulate(config, Arc::clone(&dataset), test.as_ref(), |_| {})
                    .with_context(|| format!("budget {budget}, {splitter}, seed {seed}"))?
                    .summary;
                let row = BenchRow {
                    budget,
                    splitter,
                    seed,
                    size_of_y: summary.size_of_y,
                    size_pct: 100.0 * summary.size_of_y as f64 / dataset.len() as f64,
                    oracle_labels: summary.oracle_labels,
                    inferred_labels: summary.inferred_labels,
                    label_accuracy: summary.label_accuracy,
                    correct_labels: summary.correct_labels,
                    model_accuracy: summary.model_accuracy,
                    num_leaves: summary.num_leaves,
                    budget_used: summary.budget_used,
                };
                writeln!(out, "{}", row.csv_line())?;
                out.flush()?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}
