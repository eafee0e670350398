//! Budgeted dataset labeling by greedy split-and-label exploration.
//!
//! The engine grows a tree of data subsets. At each step it either asks an
//! oracle for one label or splits a subset, whichever most increases a
//! Hoeffding-based lower bound on the expected number of correct labels.
//! At the end, leaves whose empirical uniformity clears a quality threshold
//! propagate their majority label to their unlabeled members.

pub mod assignment;
pub mod bound;
pub mod data;
pub mod engine;
pub mod evaluate;
pub mod splitters;
pub mod tree;
pub mod validation;

pub use assignment::{export_labels, LabelAssignment, LabelEntry, LabelSource};
pub use bound::{maximize_bound, BoundEval, NodeStats};
pub use data::{Dataset, Oracle, OracleError, SimulatedOracle};
pub use engine::{ActionRecord, Engine, EngineError, RunConfig, RunOutcome};
pub use splitters::{SplitterConfig, SplitterKind};
pub use tree::{NodeId, Tree};
