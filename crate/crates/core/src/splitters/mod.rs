//! Candidate partitions of a node and the speculative child statistics that
//! score a split.
//!
//! Two splitters are available. `Kmeans2` clusters the node's features into
//! two groups and ignores labels entirely. `Logistic` trains a softmax model
//! on the node's isolated training set only and groups examples by predicted
//! class. In both cases the node's bound-set labels are routed through the
//! partition afterwards to produce each child's `(m, n, N)`; they never
//! influence the partition itself.

pub mod kmeans;
pub mod logistic;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::NodeStats;
use crate::data::Dataset;
use crate::tree::{Node, NodeId};

pub use logistic::{SoftmaxRegression, Standardizer, TrainParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitterKind {
    Kmeans2,
    Logistic,
}

impl std::str::FromStr for SplitterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans2" => Ok(SplitterKind::Kmeans2),
            "logistic" => Ok(SplitterKind::Logistic),
            other => Err(format!("unknown splitter {other:?} (expected kmeans2 or logistic)")),
        }
    }
}

impl std::fmt::Display for SplitterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitterKind::Kmeans2 => "kmeans2",
            SplitterKind::Logistic => "logistic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitterConfig {
    pub kind: SplitterKind,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub lr_epochs: usize,
    pub lr_step: f64,
    pub lr_l2: f64,
    pub min_train_examples: usize,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        Self {
            kind: SplitterKind::Logistic,
            seed: 0,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
            lr_epochs: 200,
            lr_step: 0.1,
            lr_l2: 1e-3,
            min_train_examples: 5,
        }
    }
}

impl SplitterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.kmeans_max_iters == 0 || self.lr_epochs == 0 || self.min_train_examples == 0 {
            return Err("splitter counts must be at least 1".into());
        }
        if !(self.lr_step > 0.0) {
            return Err(format!("lr_step must be positive, got {}", self.lr_step));
        }
        if !(self.lr_l2 >= 0.0) {
            return Err(format!("lr_l2 must be non-negative, got {}", self.lr_l2));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(format!("kmeans_tol must be non-negative, got {}", self.kmeans_tol));
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.lr_epochs,
            step: self.lr_step,
            l2: self.lr_l2,
        }
    }
}

/// Assignment of each node example (in `Node::example_ids` order) to a child.
/// Child indices are dense: `0..num_children`, every index used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub node: NodeId,
    pub assignment: Vec<usize>,
    pub num_children: usize,
}

impl Partition {
    /// Build from raw child labels, renumbering the labels in use to
    /// `0..k` in ascending order.
    pub fn new(node: NodeId, raw: Vec<usize>) -> Self {
        let used: std::collections::BTreeSet<usize> = raw.iter().copied().collect();
        let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let assignment = raw.into_iter().map(|c| remap[&c]).collect();
        Self {
            node,
            assignment,
            num_children: used.len(),
        }
    }

    pub fn child_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_children];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn is_usable(&self) -> bool {
        self.num_children >= 2
    }
}

fn node_seed(seed: u64, node: NodeId) -> u64 {
    seed ^ node.0.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Two-way k-means partition of `members`. `None` if all rows coincide.
pub fn kmeans_partition(
    node: NodeId,
    dataset: &Dataset,
    members: &[usize],
    seed: u64,
    config: &SplitterConfig,
) -> Option<Partition> {
    if members.len() < 2 {
        return None;
    }
    let rows = dataset.features.select(members);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clustering = kmeans::kmeans(&rows, 2, config.kmeans_max_iters, config.kmeans_tol, &mut rng)?;
    Some(Partition::new(node, clustering.assignment)).filter(Partition::is_usable)
}

/// Supervised partition: train on `isolated` only, then send every member to
/// the child of its predicted class. Features are standardized with
/// statistics of the whole node.
pub fn logistic_partition(
    node: NodeId,
    dataset: &Dataset,
    members: &[usize],
    isolated: &[(usize, usize)],
    config: &SplitterConfig,
) -> Option<Partition> {
    if isolated.len() < config.min_train_examples.max(1) {
        return None;
    }
    // compact class ids so the model only has outputs it can learn
    let classes: std::collections::BTreeSet<usize> = isolated.iter().map(|&(_, c)| c).collect();
    if classes.len() < 2 {
        return None;
    }
    let dense: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let scaler = Standardizer::fit(&dataset.features, members);
    let train_rows: Vec<usize> = isolated.iter().map(|&(e, _)| e).collect();
    let train_x = scaler.transform(&dataset.features, &train_rows);
    let train_y: Vec<usize> = isolated.iter().map(|&(_, c)| dense[&c]).collect();
    let model = SoftmaxRegression::fit(&train_x, &train_y, classes.len(), &config.train_params());

    let mut buf = Vec::with_capacity(dataset.dim());
    let raw: Vec<usize> = members
        .iter()
        .map(|&e| {
            scaler.transform_into(dataset.features.row(e), &mut buf);
            model.predict(&buf)
        })
        .collect();
    Some(Partition::new(node, raw)).filter(Partition::is_usable)
}

/// Route a node's bound-set labels through `partition` and return each
/// child's speculative `(m, n, N)`.
pub fn child_stats(node: &Node, partition: &Partition) -> Vec<NodeStats> {
    let sizes = partition.child_sizes();
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); partition.num_children];
    for &(example, class) in node.bound_set() {
        let pos = node.position(example).expect("bound-set example is a member");
        *counts[partition.assignment[pos]].entry(class).or_default() += 1;
    }
    counts
        .iter()
        .zip(sizes)
        .map(|(per_class, size)| {
            let n = per_class.values().sum();
            let m = per_class.values().copied().max().unwrap_or(0);
            NodeStats::new(m, n, size).expect("routed counts fit in the child")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitProposal {
    pub partition: Partition,
    pub children: Vec<NodeStats>,
}

/// Build (or reuse) the node's split and score its children. The partition
/// is cached on the node; child stats are recomputed on every call so new
/// bound-set labels are reflected without retraining.
pub fn propose_split(node: &mut Node, dataset: &Dataset, config: &SplitterConfig) -> Option<SplitProposal> {
    if node.split_cache().is_none() {
        let seed = node_seed(config.seed, node.id());
        let partition = match config.kind {
            SplitterKind::Kmeans2 => kmeans_partition(node.id(), dataset, node.example_ids(), seed, config),
            SplitterKind::Logistic => logistic_partition(
                node.id(),
                dataset,
                node.example_ids(),
                node.isolated_set(),
                config,
            ),
        };
        node.set_split_cache(partition);
    }
    let partition = node.split_cache().clone().flatten()?;
    let children = child_stats(node, &partition);
    Some(SplitProposal { partition, children })
}
