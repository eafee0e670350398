use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use gsal_core::data::{load_csv, DataError, LoadOptions};
use gsal_core::engine::{ActionRecord, Engine, RunConfig};
use gsal_core::evaluate::{train_eval, EvalError};
use gsal_core::splitters::{SplitterKind, TrainParams};
use gsal_core::{export_labels, Dataset, LabelAssignment, LabelSource, SimulatedOracle};
use serde::{Deserialize, Serialize};

use crate::{apply_seed, apply_splitter, DataArgs, TuningArgs};

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Oracle calls available
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub splitter: Option<SplitterKind>,
    /// Seeds both example sampling and the splitter
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labels CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step metrics, one JSON object per line
    #[arg(long)]
    pub metrics: PathBuf,
    /// Summary JSON; printed to stdout either way
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Held-out CSV for scoring a model trained on the returned labels
    #[arg(long)]
    pub test_data: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut config = self.tuning.base_config()?;
        if let Some(b) = self.budget {
            config.budget = b;
        }
        if let Some(kind) = self.splitter {
            apply_splitter(&mut config, kind);
        }
        if let Some(seed) = self.seed {
            apply_seed(&mut config, seed);
        }
        config.validate()?;
        Ok(config)
    }

    fn check_paths(&self) -> Result<()> {
        let mut outputs: Vec<&Path> = vec![&self.out, &self.metrics];
        outputs.extend(self.summary.as_deref());
        let mut inputs: Vec<&Path> = vec![&self.data.data];
        inputs.extend(self.test_data.as_deref());
        inputs.extend(self.tuning.config.as_deref());
        let absolute = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        for (i, a) in outputs.iter().enumerate() {
            let abs = absolute(a);
            for b in outputs[i + 1..].iter().chain(&inputs) {
                if abs == absolute(b) {
                    bail!("output path {} is used twice", a.display());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "size_of_Y")]
    pub size_of_y: usize,
    pub oracle_labels: usize,
    pub inferred_labels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_accuracy: Option<f64>,
    /// Examples whose cached or majority label is correct at the end of the
    /// run; the last metrics line's `true_correct_after`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_labels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_accuracy: Option<f64>,
    pub num_leaves: usize,
    pub budget_used: usize,
    pub steps: usize,
    pub seed: u64,
    /// Seconds.
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub summary: RunSummary,
    pub assignment: LabelAssignment,
}

/// Run the engine against a simulated oracle and summarize the outcome.
/// `test` enables `model_accuracy`.
pub fn simulate(
    config: RunConfig,
    dataset: Arc<Dataset>,
    test: Option<&Dataset>,
    on_record: impl FnMut(&ActionRecord),
) -> Result<Simulation> {
    let start = Instant::now();
    let mut oracle = SimulatedOracle::new(&dataset).context("the simulated oracle needs ground-truth labels")?;
    let seed = config.seed;
    let budget = config.budget;
    let mut engine = Engine::new(config, Arc::clone(&dataset))?;
    let outcome = engine.run_with(&mut oracle, on_record)?;
    let assignment = outcome.assignment;
    let truth = dataset.truth.as_deref();

    let model_accuracy = match test {
        Some(test) => model_accuracy(&dataset, &assignment, test)?,
        None => None,
    };
    let summary = RunSummary {
        size_of_y: assignment.size_of_y(),
        oracle_labels: assignment.count(LabelSource::Oracle),
        inferred_labels: assignment.count(LabelSource::Inferred),
        label_accuracy: truth.and_then(|t| assignment.accuracy(t)),
        correct_labels: engine.true_correct(),
        model_accuracy,
        num_leaves: engine.tree().num_leaves(),
        budget_used: budget - engine.budget_remaining(),
        steps: outcome.records.len(),
        seed,
        wall_time: start.elapsed().as_secs_f64(),
        error: outcome.error.map(|e| e.to_string()),
    };
    Ok(Simulation { summary, assignment })
}

/// Test accuracy of a model trained on the returned labels; `None` when the
/// labels cover fewer than two classes.
fn model_accuracy(dataset: &Dataset, assignment: &LabelAssignment, test: &Dataset) -> Result<Option<f64>> {
    let pairs = assignment.labeled_pairs();
    let rows: Vec<usize> = pairs.iter().map(|&(e, _)| e).collect();
    let labels: Vec<usize> = pairs.iter().map(|&(_, l)| l).collect();
    match train_eval(&dataset.features.select(&rows), &labels, test, &TrainParams::default()) {
        Ok(acc) => Ok(Some(acc)),
        Err(EvalError::Degenerate(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn load_dataset(path: &Path, options: &LoadOptions) -> Result<Dataset> {
    load_csv(path, options).map_err(|e| match e {
        DataError::MissingLabelColumn(col) => anyhow::anyhow!(
            "{}: no column {col:?}; the simulated oracle reveals the true class from a label column (see --label-column)",
            path.display()
        ),
        other => anyhow::Error::new(other).context(format!("loading {}", path.display())),
    })
}

/// Load the held-out set with the training set's class count.
pub fn load_test(path: &Path, options: &LoadOptions, train: &Dataset) -> Result<Dataset> {
    let options = LoadOptions {
        num_classes: Some(train.num_classes),
        ..options.clone()
    };
    load_dataset(path, &options)
}

pub fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    args.check_paths()?;
    let config = args.resolve_config()?;
    let options = args.data.load_options();
    let dataset = Arc::new(load_dataset(&args.data.data, &options)?);
    let test = match &args.test_data {
        Some(path) => Some(load_test(path, &options, &dataset)?),
        None => None,
    };

    let file = File::create(&args.metrics).with_context(|| format!("creating {}", args.metrics.display()))?;
    let mut metrics = BufWriter::new(file);
    let mut write_error = None;
    let simulation = simulate(config, dataset, test.as_ref(), |record| {
        if write_error.is_none() {
            let line = serde_json::to_writer(&mut metrics, record)
                .map_err(std::io::Error::from)
                .and_then(|_| metrics.write_all(b"\n"))
                .and_then(|_| metrics.flush());
            write_error = line.err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("writing {}", args.metrics.display()));
    }

    export_labels(&simulation.assignment, &args.out)?;
    let summary = simulation.summary;
    if let Some(path) = &args.summary {
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(e) = &summary.error {
        bail!("run stopped early: {e}");
    }
    Ok(summary)
}
