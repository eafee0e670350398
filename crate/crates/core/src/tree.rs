//! Hierarchy of data subsets. Leaves partition the dataset; each node keeps
//! its bound-set tallies, its isolated training set and a cached split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bound::{maximize_bound, NodeStats};
use crate::splitters::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("cannot build a tree over an empty dataset")]
    EmptyDataset,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("example {example} does not belong to node {node}")]
    NotAMember { node: NodeId, example: usize },
    #[error("example {example} was already consumed in node {node}")]
    DoubleConsumption { node: NodeId, example: usize },
    #[error("partition of node {node} has {children} nonempty children, need at least 2")]
    DegenerateSplit { node: NodeId, children: usize },
    #[error("partition covers {assigned} of {expected} examples of node {node}")]
    Coverage {
        node: NodeId,
        assigned: usize,
        expected: usize,
    },
}

/// Cached split state: `Some(None)` records that the splitter was tried and
/// had nothing to offer in the node's current state.
pub type SplitCache = Option<Option<Partition>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    id: NodeId,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    /// Sorted dataset indices.
    example_ids: Vec<usize>,
    class_counts: BTreeMap<usize, usize>,
    bound_set: Vec<(usize, usize)>,
    majority_class: Option<usize>,
    isolated_set: Vec<(usize, usize)>,
    consumed: BTreeSet<usize>,
    /// Unconsumed members in sampling order.
    fresh: Vec<usize>,
    split_cache: SplitCache,
}

impl Node {
    fn new(id: NodeId, parent: Option<NodeId>, mut example_ids: Vec<usize>) -> Self {
        example_ids.sort_unstable();
        Self {
            id,
            parent,
            children: Vec::new(),
            fresh: example_ids.clone(),
            example_ids,
            class_counts: BTreeMap::new(),
            bound_set: Vec::new(),
            majority_class: None,
            isolated_set: Vec::new(),
            consumed: BTreeSet::new(),
            split_cache: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn example_ids(&self) -> &[usize] {
        &self.example_ids
    }

    /// Position of `example` in [`Node::example_ids`].
    pub fn position(&self, example: usize) -> Option<usize> {
        self.example_ids.binary_search(&example).ok()
    }

    pub fn contains(&self, example: usize) -> bool {
        self.position(example).is_some()
    }

    pub fn size(&self) -> usize {
        self.example_ids.len()
    }

    pub fn labeled(&self) -> usize {
        self.bound_set.len()
    }

    pub fn majority_count(&self) -> usize {
        self.majority_class
            .and_then(|c| self.class_counts.get(&c).copied())
            .unwrap_or(0)
    }

    pub fn majority_class(&self) -> Option<usize> {
        self.majority_class
    }

    pub fn class_counts(&self) -> &BTreeMap<usize, usize> {
        &self.class_counts
    }

    pub fn bound_set(&self) -> &[(usize, usize)] {
        &self.bound_set
    }

    pub fn isolated_set(&self) -> &[(usize, usize)] {
        &self.isolated_set
    }

    pub fn consumed(&self) -> &BTreeSet<usize> {
        &self.consumed
    }

    pub fn fresh(&self) -> &[usize] {
        &self.fresh
    }

    pub fn has_fresh(&self) -> bool {
        !self.fresh.is_empty()
    }

    pub fn split_cache(&self) -> &SplitCache {
        &self.split_cache
    }

    pub fn set_split_cache(&mut self, cache: Option<Partition>) {
        self.split_cache = Some(cache);
    }

    pub fn stats(&self) -> NodeStats {
        NodeStats::new(self.majority_count(), self.labeled(), self.size())
            .expect("node counts satisfy m <= n <= N")
    }

    /// Empirical uniformity `m / n`; 0 for a node without bound-set labels.
    pub fn uniformity(&self) -> f64 {
        self.stats().uniformity()
    }

    fn consume(&mut self, example: usize) -> Result<(), TreeError> {
        if !self.contains(example) {
            return Err(TreeError::NotAMember {
                node: self.id,
                example,
            });
        }
        if !self.consumed.insert(example) {
            return Err(TreeError::DoubleConsumption {
                node: self.id,
                example,
            });
        }
        if let Some(pos) = self.fresh.iter().position(|&e| e == example) {
            self.fresh.swap_remove(pos);
        }
        Ok(())
    }

    fn recompute_majority(&mut self) {
        // BTreeMap iterates in class order, so strict `>` keeps the lowest
        // class index among ties.
        let mut best: Option<(usize, usize)> = None;
        for (&class, &count) in &self.class_counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((class, count));
            }
        }
        self.majority_class = best.map(|(class, _)| class);
    }
}

/// Per-leaf view used by snapshots and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSummary {
    pub id: NodeId,
    #[serde(rename = "N")]
    pub size: usize,
    #[serde(rename = "n")]
    pub labeled: usize,
    #[serde(rename = "m")]
    pub majority: usize,
    pub majority_class: Option<usize>,
    pub uniformity: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: BTreeMap<NodeId, Node>,
    leaves: BTreeSet<NodeId>,
    next_id: u64,
    dataset_size: usize,
}

impl Tree {
    /// One leaf holding every example `0..dataset_size`.
    pub fn create_root(dataset_size: usize) -> Result<Tree, TreeError> {
        if dataset_size == 0 {
            return Err(TreeError::EmptyDataset);
        }
        let root = Node::new(NodeId(0), None, (0..dataset_size).collect());
        Ok(Tree {
            nodes: BTreeMap::from([(root.id, root)]),
            leaves: BTreeSet::from([NodeId(0)]),
            next_id: 1,
            dataset_size,
        })
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.leaves.iter().copied()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.leaves.iter().map(|id| &self.nodes[id])
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.leaves.contains(&id)
    }

    /// Mutable access to a leaf, e.g. for the split cache.
    pub fn leaf_mut(&mut self, id: NodeId) -> Result<&mut Node, TreeError> {
        if !self.leaves.contains(&id) {
            return Err(match self.nodes.contains_key(&id) {
                true => TreeError::NotALeaf(id),
                false => TreeError::UnknownNode(id),
            });
        }
        Ok(self.nodes.get_mut(&id).expect("leaf ids are nodes"))
    }

    /// Record a bound-set label: updates the tallies and the majority.
    pub fn add_bound_label(
        &mut self,
        id: NodeId,
        example: usize,
        class: usize,
    ) -> Result<&Node, TreeError> {
        let node = self.leaf_mut(id)?;
        node.consume(example)?;
        node.bound_set.push((example, class));
        *node.class_counts.entry(class).or_default() += 1;
        node.recompute_majority();
        Ok(node)
    }

    /// Record a label in the isolated training set. Bound-set tallies are
    /// untouched; any cached split is dropped since it was trained without it.
    pub fn add_training_label(
        &mut self,
        id: NodeId,
        example: usize,
        class: usize,
    ) -> Result<&Node, TreeError> {
        let node = self.leaf_mut(id)?;
        node.consume(example)?;
        node.isolated_set.push((example, class));
        node.split_cache = None;
        Ok(node)
    }

    /// Replace a leaf by one fresh leaf per nonempty partition child. The
    /// children start with no labels, no isolated set and no cache.
    pub fn apply_split(&mut self, id: NodeId, partition: &Partition) -> Result<Vec<NodeId>, TreeError> {
        let node = self.leaf_mut(id)?;
        if partition.assignment.len() != node.size() || partition.node != id {
            return Err(TreeError::Coverage {
                node: id,
                assigned: partition.assignment.len(),
                expected: node.size(),
            });
        }
        let width = partition.assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); width];
        for (&example, &child) in node.example_ids.iter().zip(&partition.assignment) {
            groups[child].push(example);
        }
        groups.retain(|g| !g.is_empty());
        if groups.len() < 2 {
            return Err(TreeError::DegenerateSplit {
                node: id,
                children: groups.len(),
            });
        }

        let mut child_ids = Vec::with_capacity(groups.len());
        for group in groups {
            let child = NodeId(self.next_id);
            self.next_id += 1;
            self.nodes.insert(child, Node::new(child, Some(id), group));
            self.leaves.insert(child);
            child_ids.push(child);
        }
        self.leaves.remove(&id);
        let parent = self.nodes.get_mut(&id).expect("split node exists");
        parent.children = child_ids.clone();
        parent.split_cache = None;
        Ok(child_ids)
    }

    /// Leaf containing `example`.
    pub fn leaf_of(&self, example: usize) -> Option<NodeId> {
        let mut id = self.root();
        loop {
            let node = self.nodes.get(&id)?;
            if node.children.is_empty() {
                return node.contains(example).then_some(id);
            }
            id = *node
                .children
                .iter()
                .find(|c| self.nodes[c].contains(example))?;
        }
    }

    pub fn leaf_summaries(&self) -> Vec<LeafSummary> {
        self.leaves()
            .map(|node| {
                let stats = node.stats();
                LeafSummary {
                    id: node.id,
                    size: stats.total(),
                    labeled: stats.labeled(),
                    majority: stats.majority(),
                    majority_class: node.majority_class,
                    uniformity: stats.uniformity(),
                    bound: maximize_bound(stats).value,
                }
            })
            .collect()
    }

    /// Sum of the maximized bounds over all leaves.
    pub fn total_bound(&self) -> f64 {
        self.leaves().map(|n| maximize_bound(n.stats()).value).sum()
    }
}

/// `m / n` for a node; 0 when it has no bound-set labels.
pub fn leaf_uniformity(node: &Node) -> f64 {
    node.uniformity()
}
