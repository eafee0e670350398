//! Acceptance criteria, run in order with one PASS/FAIL line each.
//! Exits nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use gsal_cli::{cmd_run, simulate, Cli, Command};
use gsal_core::bound::{self, NodeStats};
use gsal_core::data::{gen_noise_dims, load_csv, write_csv, LoadOptions};
use gsal_core::engine::{ActionKind, ActionRecord, Engine, RunConfig, StepOutcome};
use gsal_core::splitters::{SplitterConfig, SplitterKind};
use gsal_core::validation::{self, random_stats, GRID_STEP, GRID_TOLERANCE, MC_MAX_RATE, MC_TRIALS};
use gsal_core::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn config(budget: usize, kind: SplitterKind, seed: u64) -> RunConfig {
    RunConfig {
        budget,
        seed,
        splitter: SplitterConfig {
            kind,
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn bound_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = Vec::new();
    for _ in 0..1_000 {
        let stats = random_stats(&mut rng, 500, 10_000);
        let at_zero = bound::bound_value(stats, 0.0);
        if at_zero != stats.labeled() as f64 {
            bad.push(format!("F(t=0) {at_zero} for {stats:?}"));
        }
        let full = NodeStats::new(stats.majority(), stats.labeled(), stats.labeled()).unwrap();
        let value = bound::maximize_bound(full).value;
        if value != full.labeled() as f64 {
            bad.push(format!("max {value} for fully labeled {full:?}"));
        }
    }
    outcome(bad.is_empty(), format!("{} mismatches over 1000 stats {}", bad.len(), bad.first().map_or("", String::as_str)))
}

fn ternary_vs_grid() -> Outcome {
    let r = validation::grid_equivalence(7, 1_000, GRID_STEP, GRID_TOLERANCE);
    outcome(
        r.passed(),
        format!(
            "{} of {} beyond {GRID_TOLERANCE:e} (max |diff| {:.3e}, ternary above grid in {})",
            r.failures, r.cases, r.max_abs_diff, r.ternary_higher
        ),
    )
}

fn monte_carlo_validity() -> Outcome {
    let cells = validation::monte_carlo_grid(11, MC_TRIALS);
    let failing: Vec<String> = cells
        .iter()
        .filter(|c| c.rate() > MC_MAX_RATE)
        .map(|c| format!("p={} n={}: {:.3}", c.p, c.labeled, c.rate()))
        .collect();
    let worst_realized = cells.iter().map(|c| c.realized_rate()).fold(0.0, f64::max);
    outcome(
        failing.is_empty(),
        format!(
            "{} of {} cells above {MC_MAX_RATE} [{}]; worst rate against realized correct count {worst_realized:.4}",
            failing.len(),
            cells.len(),
            failing.join(", ")
        ),
    )
}

fn supervised_dominance() -> Outcome {
    let mut greater = 0;
    let mut all_geq = true;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let dataset = Arc::new(gen_noise_dims(seed, 2_000, 2, 50, 4).unwrap());
        let correct = |kind| {
            simulate(config(200, kind, seed), Arc::clone(&dataset), None, |_| {})
                .unwrap()
                .summary
                .correct_labels
                .unwrap()
        };
        let (lr, km) = (correct(SplitterKind::Logistic), correct(SplitterKind::Kmeans2));
        all_geq &= lr >= km;
        greater += usize::from(lr > km);
        pairs.push(format!("{lr}/{km}"));
    }
    outcome(
        all_geq && greater >= 4,
        format!("logistic/kmeans2 correct counts {}; strictly greater in {greater} of 5", pairs.join(" ")),
    )
}

fn mnist_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist_5k.csv.gz")
}

fn scaled_mnist() -> Outcome {
    let options = LoadOptions {
        label_column: Some("label".into()),
        num_classes: Some(10),
        render_hint: Some((28, 28)),
    };
    let dataset: Arc<Dataset> = match load_csv(mnist_path(), &options) {
        Ok(d) => Arc::new(d),
        Err(e) => return outcome(false, format!("cannot load {}: {e}", mnist_path().display())),
    };
    let budget = 375;
    let seeds = 0..20u64;
    let mut sizes = Vec::new();
    let mut accuracies = Vec::new();
    for seed in seeds.clone() {
        let summary = simulate(config(budget, SplitterKind::Logistic, seed), Arc::clone(&dataset), None, |_| {})
            .unwrap()
            .summary;
        println!(
            "    mnist seed {seed}: |Y| {} ({} inferred), accuracy {:.3}",
            summary.size_of_y,
            summary.inferred_labels,
            summary.label_accuracy.unwrap()
        );
        sizes.push(summary.size_of_y as f64);
        accuracies.push(summary.label_accuracy.unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (size, acc) = (mean(&sizes), mean(&accuracies));
    outcome(
        acc >= 0.80 && size >= 2.0 * budget as f64,
        format!(
            "N={} B={budget} over seeds {seeds:?}: mean |Y| {size:.0} (need >= {}), mean accuracy {acc:.3} (need >= 0.80)",
            dataset.len(),
            2 * budget
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("noise.csv");
    write_csv(&gen_noise_dims(3, 1_000, 2, 20, 3).unwrap(), &data).unwrap();
    let manifest = dir.path().join("config.json");
    fs::write(&manifest, serde_json::to_string(&config(150, SplitterKind::Logistic, 42)).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("labels{run}.csv"));
        let metrics = dir.path().join(format!("metrics{run}.jsonl"));
        let path = |p: &Path| p.to_str().unwrap().to_string();
        let cli = Cli::try_parse_from([
            "gsal".to_string(),
            "run".into(),
            "--data".into(),
            path(&data),
            "--config".into(),
            path(&manifest),
            "--out".into(),
            path(&out),
            "--metrics".into(),
            path(&metrics),
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { unreachable!() };
        cmd_run(&args).unwrap();
        outputs.push((fs::read(out).unwrap(), fs::read(metrics).unwrap()));
    }
    let same_labels = outputs[0].0 == outputs[1].0;
    let same_metrics = outputs[0].1 == outputs[1].1;
    outcome(
        same_labels && same_metrics && !outputs[0].1.is_empty(),
        format!("labels identical: {same_labels}, metrics identical: {same_metrics}"),
    )
}

/// Independent rescoring of the pre-step engine: current and label scores
/// straight from the bound, split scores from the engine's own proposals.
fn check_step(before: &Engine, record: &ActionRecord) -> Result<(), String> {
    let mut probe = before.clone();
    let engine_scores = probe.compute_scores();
    let min_split = before.config().min_split_size;
    let mut best = f64::NEG_INFINITY;
    let mut chosen = None;
    for (node, scores) in before.tree().leaves().zip(&engine_scores) {
        if node.id() != scores.node {
            return Err(format!("leaf order differs at {:?}", node.id()));
        }
        let current = bound::maximize_bound(node.stats()).value;
        let label = node
            .has_fresh()
            .then(|| bound::score_label(node.stats()).unwrap());
        if (current - scores.current).abs() > 1e-9 || label.is_some() != scores.label.is_some() {
            return Err(format!("scores for {:?} disagree", node.id()));
        }
        if let (Some(a), Some(b)) = (label, scores.label) {
            if (a - b).abs() > 1e-9 {
                return Err(format!("label score for {:?}: {a} vs {b}", node.id()));
            }
        }
        if scores.split.is_some() && node.size() < min_split {
            return Err(format!("split offered for {:?} below min size", node.id()));
        }
        for (kind, value) in [(ActionKind::Label, label), (ActionKind::Split, scores.split)] {
            if let Some(v) = value {
                let delta = v - current;
                best = best.max(delta);
                if kind == record.action && node.id() == record.node {
                    chosen = Some(delta);
                }
            }
        }
    }
    let chosen = chosen.ok_or_else(|| format!("step {}: chosen action was unavailable", record.step_index))?;
    if (chosen - record.delta).abs() > 1e-9 {
        return Err(format!("step {}: delta {} recomputed as {chosen}", record.step_index, record.delta));
    }
    if best > record.delta + 1e-9 {
        return Err(format!("step {}: delta {} but {best} was available", record.step_index, record.delta));
    }
    let spent = record.budget_before - record.budget_after;
    if spent != usize::from(record.oracle_called) || (record.oracle_called && record.cached_reuse) {
        return Err(format!("step {}: budget accounting", record.step_index));
    }
    Ok(())
}

fn budget_and_greedy() -> Outcome {
    let dataset = Arc::new(gen_noise_dims(5, 1_500, 2, 4, 4).unwrap());
    let truth = dataset.truth.clone().unwrap();
    let budget = 480;
    let mut engine = Engine::new(config(budget, SplitterKind::Logistic, 5), Arc::clone(&dataset)).unwrap();
    let mut errors = Vec::new();
    loop {
        let before = engine.clone();
        let record = match engine.step().unwrap() {
            StepOutcome::Acted(record) => record,
            StepOutcome::NeedsLabel(q) => engine.submit_label(q.query_id, truth[q.example_id]).unwrap(),
            StepOutcome::Finished => break,
        };
        if let Err(e) = check_step(&before, &record) {
            errors.push(e);
        }
        let total = engine.tree().leaves().map(|n| bound::maximize_bound(n.stats()).value).sum::<f64>();
        if (total - record.total_bound_after).abs() > 1e-6 {
            errors.push(format!("step {}: total bound telemetry", record.step_index));
        }
    }
    let records = engine.records();
    let mut asked = BTreeSet::new();
    for r in records.iter().filter(|r| r.oracle_called) {
        if !asked.insert(r.example_id.unwrap()) {
            errors.push(format!("example {:?} sent to the oracle twice", r.example_id));
        }
    }
    let used = budget - engine.budget_remaining();
    if used != asked.len() {
        errors.push(format!("budget used {used}, distinct oracle examples {}", asked.len()));
    }
    if records.len() < 500 {
        errors.push(format!("trace has only {} steps", records.len()));
    }
    let reused = records.iter().filter(|r| r.cached_reuse).count();
    let splits = records.iter().filter(|r| r.action == ActionKind::Split).count();
    outcome(
        errors.is_empty(),
        format!(
            "{} steps ({splits} splits, {reused} cached reuses), budget used {used}; {} violations {}",
            records.len(),
            errors.len(),
            errors.first().map_or("", String::as_str)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 7] = [
        ("bound exactness", Duration::from_secs(1), bound_exactness),
        ("ternary equals dense grid", Duration::from_secs(5), ternary_vs_grid),
        ("monte-carlo bound validity", Duration::from_secs(60), monte_carlo_validity),
        ("supervised dominance on noise dimensions", Duration::from_secs(120), supervised_dominance),
        ("scaled mnist proxy", Duration::from_secs(300), scaled_mnist),
        ("determinism of cli runs", Duration::from_secs(60), determinism),
        ("budget exactness and greedy correctness", Duration::from_secs(120), budget_and_greedy),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = result.passed && in_time;
        failed += usize::from(!passed);
        println!(
            "{} {name}: {} [{:.2}s, limit {}s{}]",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
