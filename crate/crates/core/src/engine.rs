//! Greedy split-and-label loop.
//!
//! Every step scores each leaf three ways: its current bound `S`, the bound
//! after one more confirming label `S_label`, and the summed child bounds of
//! its cached split `S_split`. The `(leaf, action)` with the largest gain over
//! `S` is executed. Label actions sample an unconsumed member uniformly; the
//! answer comes from the label cache when the example was labeled before (no
//! budget charge), otherwise from the oracle. With probability `r` the label
//! goes to the node's isolated training set instead of its bound set.
//!
//! The engine is a step machine so that a human oracle can answer
//! asynchronously: [`Engine::step`] either performs an action or parks a
//! [`PendingQuery`], which [`Engine::submit_label`] resolves.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{LabelAssignment, LabelEntry, LabelSource};
use crate::bound::{self, BoundError, NodeStats};
use crate::data::{Dataset, Oracle, OracleError};
use crate::splitters::{propose_split, SplitterConfig};
use crate::tree::{LeafSummary, NodeId, Tree, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("no label is pending")]
    NoPendingQuery,
    #[error("query {got} is stale; pending query is {expected}")]
    StaleQuery { expected: u64, got: u64 },
    #[error("class {class} outside [0, {num_classes})")]
    InvalidClass { class: usize, num_classes: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub budget: usize,
    pub training_ratio: f64,
    pub quality: f64,
    pub splitter: SplitterConfig,
    pub min_split_size: usize,
    pub seed: u64,
    pub bound_tolerance: f64,
    /// Stop once the best available gain is not positive.
    pub early_stop: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            budget: 0,
            training_ratio: 0.1,
            quality: 0.85,
            splitter: SplitterConfig::default(),
            min_split_size: 10,
            seed: 0,
            bound_tolerance: bound::DEFAULT_TOLERANCE,
            early_stop: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.training_ratio) {
            return bad(format!("training_ratio {} outside [0, 1]", self.training_ratio));
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return bad(format!("quality {} outside [0, 1]", self.quality));
        }
        if self.min_split_size < 2 {
            return bad(format!("min_split_size {} below 2", self.min_split_size));
        }
        if !(self.bound_tolerance > 0.0) {
            return bad(format!("bound_tolerance {} must be positive", self.bound_tolerance));
        }
        self.splitter.validate().map_err(EngineError::InvalidConfig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "node", rename_all = "lowercase")]
pub enum Action {
    Label(NodeId),
    Split(NodeId),
}

impl Action {
    pub fn node(&self) -> NodeId {
        match *self {
            Action::Label(v) | Action::Split(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Label,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelBin {
    Bound,
    Training,
}

/// One executed step. Serialized as one line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub step_index: u64,
    pub action: ActionKind,
    pub node: NodeId,
    pub delta: f64,
    pub budget_before: usize,
    pub budget_after: usize,
    pub oracle_called: bool,
    pub cached_reuse: bool,
    pub example_id: Option<usize>,
    pub class: Option<usize>,
    pub routed_to: Option<LabelBin>,
    pub children: Option<Vec<NodeId>>,
    pub total_bound_after: f64,
    pub true_correct_after: Option<usize>,
}

/// Scores of one leaf. `label`/`split` are absent when the action is not
/// available for the leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafScores {
    pub node: NodeId,
    pub current: f64,
    pub label: Option<f64>,
    pub split: Option<f64>,
}

/// Best `(action, gain)` over all leaves. Ties prefer label over split, then
/// the lower node id. Returns `None` when no action is available.
pub fn select_action(scores: &[LeafScores]) -> Option<(Action, f64)> {
    let mut ordered: Vec<&LeafScores> = scores.iter().collect();
    ordered.sort_by_key(|s| s.node);
    let labels = ordered
        .iter()
        .filter_map(|s| s.label.map(|v| (Action::Label(s.node), v - s.current)));
    let splits = ordered
        .iter()
        .filter_map(|s| s.split.map(|v| (Action::Split(s.node), v - s.current)));
    let mut best: Option<(Action, f64)> = None;
    for (action, delta) in labels.chain(splits) {
        if best.is_none_or(|(_, d)| delta > d) {
            best = Some((action, delta));
        }
    }
    best
}

/// A label the engine is waiting for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub query_id: u64,
    pub example_id: usize,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingLabel {
    query: PendingQuery,
    delta: f64,
    rng_before: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Acted(ActionRecord),
    NeedsLabel(PendingQuery),
    Finished,
}

/// Everything that evolves during a run; serializable for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub tree: Tree,
    pub budget_remaining: usize,
    pub label_cache: BTreeMap<usize, usize>,
    rng: ChaCha8Rng,
    pub step_index: u64,
    next_query_id: u64,
    pending: Option<PendingLabel>,
    finished: bool,
    pub records: Vec<ActionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: EngineState,
}

/// Read-only view taken between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub step_index: u64,
    pub budget_remaining: usize,
    pub leaves: Vec<LeafSummary>,
    pub total_bound: f64,
    pub finished: bool,
}

/// Result of a complete run against a blocking oracle.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub assignment: LabelAssignment,
    pub records: Vec<ActionRecord>,
    /// Set when an oracle failure ended the run early.
    pub error: Option<EngineError>,
}

/// How many times an out-of-range oracle answer is re-asked before the
/// query is treated as failed.
const MAX_REASKS: usize = 3;

#[derive(Debug, Clone)]
pub struct Engine {
    config: RunConfig,
    dataset: Arc<Dataset>,
    state: EngineState,
}

impl Engine {
    pub fn new(config: RunConfig, dataset: Arc<Dataset>) -> Result<Self, EngineError> {
        config.validate()?;
        let tree = Tree::create_root(dataset.len())?;
        let state = EngineState {
            tree,
            budget_remaining: config.budget,
            label_cache: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step_index: 0,
            next_query_id: 1,
            pending: None,
            finished: false,
            records: Vec::new(),
        };
        Ok(Self { config, dataset, state })
    }

    pub fn restore(checkpoint: Checkpoint, dataset: Arc<Dataset>) -> Result<Self, EngineError> {
        checkpoint.config.validate()?;
        if checkpoint.state.tree.dataset_size() != dataset.len() {
            return Err(EngineError::InvalidConfig(format!(
                "checkpoint covers {} examples, dataset has {}",
                checkpoint.state.tree.dataset_size(),
                dataset.len()
            )));
        }
        Ok(Self {
            config: checkpoint.config,
            dataset,
            state: checkpoint.state,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn tree(&self) -> &Tree {
        &self.state.tree
    }

    pub fn budget_remaining(&self) -> usize {
        self.state.budget_remaining
    }

    pub fn records(&self) -> &[ActionRecord] {
        &self.state.records
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.state.pending.as_ref().map(|p| &p.query)
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    fn maximize(&self, stats: NodeStats) -> f64 {
        bound::maximize_bound_with_tolerance(stats, self.config.bound_tolerance).value
    }

    pub fn total_bound(&self) -> f64 {
        self.state.tree.leaves().map(|n| self.maximize(n.stats())).sum()
    }

    /// Correct labels if every example took its cached label or, failing
    /// that, its leaf's majority class. `None` without ground truth.
    pub fn true_correct(&self) -> Option<usize> {
        let truth = self.dataset.truth.as_ref()?;
        let mut correct = 0;
        for leaf in self.state.tree.leaves() {
            let majority = leaf.majority_class();
            for &e in leaf.example_ids() {
                let label = self.state.label_cache.get(&e).copied().or(majority);
                correct += usize::from(label == Some(truth[e]));
            }
        }
        Some(correct)
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            step_index: self.state.step_index,
            budget_remaining: self.state.budget_remaining,
            leaves: self.state.tree.leaf_summaries(),
            total_bound: self.total_bound(),
            finished: self.state.finished,
        }
    }

    /// Score every leaf. Builds and caches split proposals as needed.
    pub fn compute_scores(&mut self) -> Vec<LeafScores> {
        let leaf_ids: Vec<NodeId> = self.state.tree.leaf_ids().collect();
        let mut scores = Vec::with_capacity(leaf_ids.len());
        for id in leaf_ids {
            let node = self.state.tree.leaf_mut(id).expect("listed leaf");
            let stats = node.stats();
            let label = if node.has_fresh() {
                stats.with_confirmed_label().ok()
            } else {
                None
            };
            let proposal = if stats.total() >= self.config.min_split_size {
                propose_split(node, &self.dataset, &self.config.splitter)
            } else {
                None
            };
            scores.push(LeafScores {
                node: id,
                current: self.maximize(stats),
                label: label.map(|s| self.maximize(s)),
                split: proposal.map(|p| p.children.iter().map(|c| self.maximize(*c)).sum()),
            });
        }
        scores
    }

    /// Perform at most one action, or park a query for the oracle.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        if let Some(p) = &self.state.pending {
            return Ok(StepOutcome::NeedsLabel(p.query.clone()));
        }
        loop {
            if self.state.finished || self.state.budget_remaining == 0 {
                self.state.finished = true;
                return Ok(StepOutcome::Finished);
            }
            let scores = self.compute_scores();
            let Some((action, delta)) = select_action(&scores) else {
                self.state.finished = true;
                return Ok(StepOutcome::Finished);
            };
            if self.config.early_stop && delta <= 0.0 {
                self.state.finished = true;
                return Ok(StepOutcome::Finished);
            }
            match action {
                Action::Label(node) => return self.begin_label(node, delta),
                Action::Split(node) => {
                    if let Some(record) = self.execute_split(node, delta)? {
                        return Ok(StepOutcome::Acted(record));
                    }
                    // proposal vanished between scoring and execution; reselect
                }
            }
        }
    }

    fn begin_label(&mut self, node_id: NodeId, delta: f64) -> Result<StepOutcome, EngineError> {
        let rng_before = self.state.rng.clone();
        let node = self.state.tree.node(node_id)?;
        let fresh = node.fresh();
        let example = fresh[self.state.rng.random_range(0..fresh.len())];
        if let Some(&class) = self.state.label_cache.get(&example) {
            let record = self.complete_label(node_id, example, class, delta, false)?;
            return Ok(StepOutcome::Acted(record));
        }
        debug_assert!(self.state.budget_remaining > 0);
        let query = PendingQuery {
            query_id: self.state.next_query_id,
            example_id: example,
            node: node_id,
        };
        self.state.next_query_id += 1;
        self.state.pending = Some(PendingLabel {
            query: query.clone(),
            delta,
            rng_before,
        });
        Ok(StepOutcome::NeedsLabel(query))
    }

    /// Deliver the oracle's answer for the pending query.
    pub fn submit_label(&mut self, query_id: u64, class: usize) -> Result<ActionRecord, EngineError> {
        let pending = self.state.pending.as_ref().ok_or(EngineError::NoPendingQuery)?;
        if pending.query.query_id != query_id {
            return Err(EngineError::StaleQuery {
                expected: pending.query.query_id,
                got: query_id,
            });
        }
        if class >= self.dataset.num_classes {
            return Err(EngineError::InvalidClass {
                class,
                num_classes: self.dataset.num_classes,
            });
        }
        let pending = self.state.pending.take().expect("checked above");
        let example = pending.query.example_id;
        self.state.label_cache.insert(example, class);
        self.complete_label(pending.query.node, example, class, pending.delta, true)
    }

    /// Drop the pending query as if it was never asked.
    pub fn abort_pending(&mut self) -> Option<PendingQuery> {
        let pending = self.state.pending.take()?;
        self.state.rng = pending.rng_before;
        self.state.next_query_id = pending.query.query_id;
        Some(pending.query)
    }

    fn complete_label(
        &mut self,
        node: NodeId,
        example: usize,
        class: usize,
        delta: f64,
        oracle_called: bool,
    ) -> Result<ActionRecord, EngineError> {
        let budget_before = self.state.budget_remaining;
        if oracle_called {
            self.state.budget_remaining -= 1;
        }
        let coin: f64 = self.state.rng.random();
        let bin = if coin < self.config.training_ratio {
            self.state.tree.add_training_label(node, example, class)?;
            LabelBin::Training
        } else {
            self.state.tree.add_bound_label(node, example, class)?;
            LabelBin::Bound
        };
        let record = ActionRecord {
            step_index: self.state.step_index,
            action: ActionKind::Label,
            node,
            delta,
            budget_before,
            budget_after: self.state.budget_remaining,
            oracle_called,
            cached_reuse: !oracle_called,
            example_id: Some(example),
            class: Some(class),
            routed_to: Some(bin),
            children: None,
            total_bound_after: self.total_bound(),
            true_correct_after: self.true_correct(),
        };
        self.finish_step(record.clone());
        Ok(record)
    }

    fn execute_split(&mut self, node_id: NodeId, delta: f64) -> Result<Option<ActionRecord>, EngineError> {
        let node = self.state.tree.leaf_mut(node_id)?;
        let Some(proposal) = propose_split(node, &self.dataset, &self.config.splitter) else {
            return Ok(None);
        };
        let children = self.state.tree.apply_split(node_id, &proposal.partition)?;
        let record = ActionRecord {
            step_index: self.state.step_index,
            action: ActionKind::Split,
            node: node_id,
            delta,
            budget_before: self.state.budget_remaining,
            budget_after: self.state.budget_remaining,
            oracle_called: false,
            cached_reuse: false,
            example_id: None,
            class: None,
            routed_to: None,
            children: Some(children),
            total_bound_after: self.total_bound(),
            true_correct_after: self.true_correct(),
        };
        self.finish_step(record.clone());
        Ok(Some(record))
    }

    fn finish_step(&mut self, record: ActionRecord) {
        self.state.step_index += 1;
        self.state.records.push(record);
    }

    /// Step until the engine needs an oracle answer or is done.
    pub fn advance(&mut self) -> Result<Option<PendingQuery>, EngineError> {
        self.advance_with(|_| {})
    }

    pub fn advance_with(
        &mut self,
        mut on_record: impl FnMut(&ActionRecord),
    ) -> Result<Option<PendingQuery>, EngineError> {
        loop {
            match self.step()? {
                StepOutcome::Acted(record) => on_record(&record),
                StepOutcome::NeedsLabel(query) => return Ok(Some(query)),
                StepOutcome::Finished => return Ok(None),
            }
        }
    }

    /// Drive the loop to completion with a blocking oracle. An oracle failure
    /// aborts the current step and ends the run with what was gathered.
    pub fn run_with(
        &mut self,
        oracle: &mut dyn Oracle,
        mut on_record: impl FnMut(&ActionRecord),
    ) -> Result<RunOutcome, EngineError> {
        let mut error = None;
        'run: while let Some(query) = self.advance_with(&mut on_record)? {
            let dataset = Arc::clone(&self.dataset);
            let features = dataset.features.row(query.example_id);
            let mut attempts = 0;
            let record = loop {
                let answer = match oracle.query(query.example_id, features) {
                    Ok(class) => self.submit_label(query.query_id, class),
                    Err(e) => Err(e.into()),
                };
                match answer {
                    Ok(record) => break record,
                    Err(EngineError::InvalidClass { .. }) if attempts + 1 < MAX_REASKS => attempts += 1,
                    Err(e) => {
                        self.abort_pending();
                        error = Some(e);
                        break 'run;
                    }
                }
            };
            on_record(&record);
        }
        Ok(RunOutcome {
            assignment: self.finalize(),
            records: self.state.records.clone(),
            error,
        })
    }

    pub fn run(&mut self, oracle: &mut dyn Oracle) -> Result<RunOutcome, EngineError> {
        self.run_with(oracle, |_| {})
    }

    /// Cached oracle labels everywhere; majority labels for the unlabeled
    /// members of leaves whose uniformity exceeds the quality threshold.
    pub fn finalize(&self) -> LabelAssignment {
        let size = self.state.tree.dataset_size();
        let mut entries: Vec<Option<LabelEntry>> = vec![None; size];
        for leaf in self.state.tree.leaves() {
            let uniformity = leaf.uniformity();
            let inferred = leaf
                .majority_class()
                .filter(|_| uniformity > self.config.quality);
            for &e in leaf.example_ids() {
                let (label, source) = match (self.state.label_cache.get(&e), inferred) {
                    (Some(&c), _) => (Some(c), LabelSource::Oracle),
                    (None, Some(c)) => (Some(c), LabelSource::Inferred),
                    (None, None) => (None, LabelSource::None),
                };
                entries[e] = Some(LabelEntry {
                    example_id: e,
                    label,
                    source,
                    node: leaf.id(),
                    uniformity,
                });
            }
        }
        LabelAssignment {
            entries: entries
                .into_iter()
                .map(|e| e.expect("leaves partition the dataset"))
                .collect(),
        }
    }
}

/// Convenience wrapper: fresh engine, full run.
pub fn run(config: RunConfig, dataset: Arc<Dataset>, oracle: &mut dyn Oracle) -> Result<RunOutcome, EngineError> {
    Engine::new(config, dataset)?.run(oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, simulated_oracle, Matrix};
    use crate::splitters::SplitterKind;

    fn scores(node: u64, current: f64, label: Option<f64>, split: Option<f64>) -> LeafScores {
        LeafScores { node: NodeId(node), current, label, split }
    }

    fn blobs_engine(config: RunConfig) -> Engine {
        let ds = gen_blobs(1, 120, 2, 3, 0.8).unwrap();
        Engine::new(config, Arc::new(ds)).unwrap()
    }

    #[test]
    fn select_prefers_largest_gain() {
        let s = [scores(0, 0.0, Some(3.2), None)];
        assert_eq!(select_action(&s), Some((Action::Label(NodeId(0)), 3.2)));
        let s = [scores(0, 1.0, Some(2.0), Some(4.0)), scores(1, 0.0, Some(2.5), None)];
        assert_eq!(select_action(&s), Some((Action::Split(NodeId(0)), 3.0)));
    }

    #[test]
    fn select_tie_breaks() {
        let s = [scores(0, 1.0, Some(3.0), Some(3.0))];
        assert_eq!(select_action(&s).unwrap().0, Action::Label(NodeId(0)));
        let s = [scores(4, 0.0, None, Some(2.0)), scores(2, 0.0, None, Some(2.0))];
        assert_eq!(select_action(&s).unwrap().0, Action::Split(NodeId(2)));
        let s = [scores(4, 0.0, Some(2.0), None), scores(2, 0.0, None, Some(2.0))];
        assert_eq!(select_action(&s).unwrap().0, Action::Label(NodeId(4)));
    }

    #[test]
    fn negative_gain_still_selected() {
        let s = [scores(0, 5.0, Some(4.9), None)];
        let (action, delta) = select_action(&s).unwrap();
        assert_eq!(action, Action::Label(NodeId(0)));
        assert!((delta + 0.1).abs() < 1e-12);
        assert_eq!(select_action(&[scores(0, 1.0, None, None)]), None);
    }

    #[test]
    fn fresh_root_scores() {
        let mut engine = blobs_engine(RunConfig { budget: 5, ..Default::default() });
        let s = engine.compute_scores();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].current, 0.0);
        let expected = bound::maximize_bound(NodeStats::new(1, 1, 120).unwrap()).value;
        assert_eq!(s[0].label, Some(expected));
        assert_eq!(s[0].split, None, "supervised splitter has nothing to train on");

        let mut engine = blobs_engine(RunConfig {
            budget: 5,
            splitter: SplitterConfig { kind: SplitterKind::Kmeans2, ..Default::default() },
            ..Default::default()
        });
        assert_eq!(engine.compute_scores()[0].split, Some(0.0));
    }

    #[test]
    fn zero_budget_finishes_immediately() {
        let mut engine = blobs_engine(RunConfig::default());
        let ds = engine.dataset().clone();
        let out = engine.run(&mut simulated_oracle(&ds).unwrap()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.assignment.size_of_y(), 0);
        assert!(out.assignment.entries.iter().all(|e| e.source == LabelSource::None));
    }

    #[test]
    fn training_ratio_boundaries() {
        for (ratio, bin) in [(0.0, LabelBin::Bound), (1.0, LabelBin::Training)] {
            let mut engine = blobs_engine(RunConfig {
                budget: 30,
                training_ratio: ratio,
                splitter: SplitterConfig { kind: SplitterKind::Logistic, ..Default::default() },
                ..Default::default()
            });
            let ds = engine.dataset().clone();
            let out = engine.run(&mut simulated_oracle(&ds).unwrap()).unwrap();
            let labels: Vec<_> = out.records.iter().filter(|r| r.action == ActionKind::Label).collect();
            assert!(!labels.is_empty());
            assert!(labels.iter().all(|r| r.routed_to == Some(bin)));
            if ratio == 1.0 {
                assert!(engine.tree().leaves().all(|l| l.labeled() == 0));
            }
        }
    }

    #[test]
    fn one_class_dataset_is_fully_labeled() {
        let rows: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let ds = Dataset::new(Matrix::from_rows(&rows), Some(vec![1; 25]), 2).unwrap();
        let ds = Arc::new(ds);
        let config = RunConfig { budget: 100, training_ratio: 0.0, ..Default::default() };
        let out = run(config, ds.clone(), &mut simulated_oracle(&ds).unwrap()).unwrap();
        let oracle_calls = out.records.iter().filter(|r| r.oracle_called).count();
        assert_eq!(oracle_calls, 25);
        assert_eq!(out.assignment.size_of_y(), 25);
        assert_eq!(out.assignment.accuracy(&[1; 25]), Some(1.0));
    }

    #[test]
    fn stale_and_invalid_submissions() {
        let mut engine = blobs_engine(RunConfig { budget: 3, ..Default::default() });
        assert_eq!(engine.submit_label(1, 0), Err(EngineError::NoPendingQuery));
        let q = engine.advance().unwrap().unwrap();
        assert_eq!(engine.advance().unwrap().unwrap(), q, "pending query is stable");
        assert_eq!(
            engine.submit_label(q.query_id + 1, 0),
            Err(EngineError::StaleQuery { expected: q.query_id, got: q.query_id + 1 })
        );
        assert!(matches!(engine.submit_label(q.query_id, 3), Err(EngineError::InvalidClass { .. })));
        assert_eq!(engine.budget_remaining(), 3);
        let record = engine.submit_label(q.query_id, 2).unwrap();
        assert_eq!((record.budget_before, record.budget_after), (3, 2));
        assert_eq!(engine.state().label_cache.get(&q.example_id), Some(&2));
    }

    #[test]
    fn abort_restores_state() {
        let mut engine = blobs_engine(RunConfig { budget: 3, ..Default::default() });
        engine.compute_scores();
        let before = engine.state().clone();
        let q = engine.advance().unwrap().unwrap();
        engine.abort_pending();
        assert_eq!(engine.state(), &before);
        assert_eq!(engine.advance().unwrap().unwrap(), q);
    }

    struct FailAfter {
        inner: crate::data::SimulatedOracle,
        left: usize,
    }

    impl Oracle for FailAfter {
        fn query(&mut self, example_id: usize, features: &[f64]) -> Result<usize, OracleError> {
            if self.left == 0 {
                return Err(OracleError::Cancelled(example_id));
            }
            self.left -= 1;
            self.inner.query(example_id, features)
        }
    }

    #[test]
    fn oracle_failure_ends_run_gracefully() {
        let mut engine = blobs_engine(RunConfig { budget: 20, ..Default::default() });
        let ds = engine.dataset().clone();
        let mut oracle = FailAfter { inner: simulated_oracle(&ds).unwrap(), left: 4 };
        let out = engine.run(&mut oracle).unwrap();
        assert!(matches!(out.error, Some(EngineError::Oracle(OracleError::Cancelled(_)))));
        assert_eq!(engine.budget_remaining(), 16);
        assert_eq!(engine.state().label_cache.len(), 4);
        assert!(engine.pending().is_none());
        assert_eq!(out.assignment.count(LabelSource::Oracle), 4);
    }

    struct Sloppy {
        truth: Vec<usize>,
        bad_answers: usize,
    }

    impl Oracle for Sloppy {
        fn query(&mut self, example_id: usize, _: &[f64]) -> Result<usize, OracleError> {
            if self.bad_answers > 0 {
                self.bad_answers -= 1;
                return Ok(99);
            }
            Ok(self.truth[example_id])
        }
    }

    #[test]
    fn out_of_range_answers_are_reasked_without_charge() {
        let mut engine = blobs_engine(RunConfig { budget: 4, ..Default::default() });
        let truth = engine.dataset().truth.clone().unwrap();
        let out = engine.run(&mut Sloppy { truth, bad_answers: 2 }).unwrap();
        assert!(out.error.is_none());
        assert_eq!(engine.budget_remaining(), 0);
        assert_eq!(engine.state().label_cache.len(), 4);
    }

    #[test]
    fn split_forgets_and_cache_is_reused() {
        // two tight clusters of 8; children are too small to split again, so
        // every example ends up labeled and the labels taken at the root
        // before the split are re-read from the cache
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|i| vec![if i < 8 { 0.0 } else { 50.0 } + (i % 8) as f64 * 0.1, (i % 3) as f64 * 0.1])
            .collect();
        let truth: Vec<usize> = (0..16).map(|i| usize::from(i >= 8)).collect();
        let ds = Arc::new(Dataset::new(Matrix::from_rows(&rows), Some(truth), 2).unwrap());
        let config = RunConfig {
            budget: 50,
            training_ratio: 0.0,
            splitter: SplitterConfig { kind: SplitterKind::Kmeans2, ..Default::default() },
            ..Default::default()
        };
        let out = run(config, ds.clone(), &mut simulated_oracle(&ds).unwrap()).unwrap();
        let split = out.records.iter().position(|r| r.action == ActionKind::Split).expect("a split happens");
        assert!(split > 0, "the root is labeled before it is split");
        assert_eq!(out.records[split].children.as_ref().unwrap().len(), 2);
        let reused = out.records.iter().filter(|r| r.cached_reuse).count();
        assert_eq!(reused, split);
        let calls = out.records.iter().filter(|r| r.oracle_called).count();
        assert_eq!(calls, 16);
        for r in &out.records {
            let charged = r.budget_before - r.budget_after;
            assert_eq!(charged, usize::from(r.oracle_called));
        }
        assert_eq!(out.assignment.accuracy(ds.truth.as_ref().unwrap()), Some(1.0));
    }

    #[test]
    fn finalize_quality_gate() {
        let ds = Arc::new(gen_blobs(3, 40, 2, 2, 0.5).unwrap());
        let truth = ds.truth.clone().unwrap();
        let mut engine = Engine::new(
            RunConfig { budget: 100, quality: 0.85, ..Default::default() },
            ds.clone(),
        )
        .unwrap();
        let root = engine.tree().root();
        // 17 of 20 agree -> 0.85, which does not pass a strict 0.85 gate
        let tree = &mut engine.state.tree;
        let zeros: Vec<usize> = (0..40).filter(|&e| truth[e] == 0).collect();
        let ones: Vec<usize> = (0..40).filter(|&e| truth[e] == 1).collect();
        for &e in zeros.iter().take(17) {
            tree.add_bound_label(root, e, 0).unwrap();
        }
        for &e in ones.iter().take(3) {
            tree.add_bound_label(root, e, 1).unwrap();
        }
        engine.state.label_cache.insert(ones[0], 1);
        let a = engine.finalize();
        assert_eq!(a.count(LabelSource::Inferred), 0);
        assert_eq!(a.entries[ones[0]].source, LabelSource::Oracle);
        assert_eq!(a.entries[ones[0]].label, Some(1));

        engine.state.tree.add_bound_label(root, zeros[17], 0).unwrap();
        let a = engine.finalize();
        assert_eq!(a.count(LabelSource::Inferred), 39);
        assert!(a
            .entries
            .iter()
            .filter(|e| e.source == LabelSource::Inferred)
            .all(|e| e.label == Some(0) && e.uniformity > 0.85));
    }

    #[test]
    fn rejects_bad_config() {
        let ds = Arc::new(gen_blobs(3, 40, 2, 2, 0.5).unwrap());
        for config in [
            RunConfig { training_ratio: 1.5, ..Default::default() },
            RunConfig { quality: -0.1, ..Default::default() },
            RunConfig { min_split_size: 1, ..Default::default() },
            RunConfig { bound_tolerance: 0.0, ..Default::default() },
        ] {
            assert!(matches!(Engine::new(config, ds.clone()), Err(EngineError::InvalidConfig(_))));
        }
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let ds = Arc::new(gen_blobs(5, 150, 3, 3, 1.0).unwrap());
        let config = RunConfig { budget: 40, ..Default::default() };
        let mut reference = Engine::new(config.clone(), ds.clone()).unwrap();
        let reference_out = reference.run(&mut simulated_oracle(&ds).unwrap()).unwrap();

        let mut engine = Engine::new(config, ds.clone()).unwrap();
        let mut oracle = simulated_oracle(&ds).unwrap();
        for _ in 0..15 {
            let q = engine.advance().unwrap().unwrap();
            let c = oracle.query(q.example_id, &[]).unwrap();
            engine.submit_label(q.query_id, c).unwrap();
        }
        engine.advance().unwrap();
        let json = serde_json::to_string(&engine.checkpoint()).unwrap();
        let mut resumed = Engine::restore(serde_json::from_str(&json).unwrap(), ds.clone()).unwrap();
        let out = resumed.run(&mut oracle).unwrap();
        assert_eq!(out.records, reference_out.records);
        assert_eq!(out.assignment, reference_out.assignment);
    }
}
