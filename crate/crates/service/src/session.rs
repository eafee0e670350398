//! One labeling session: an engine plus the bookkeeping the HTTP layer needs.

use std::sync::Arc;

use gsal_core::engine::{ActionRecord, Checkpoint, Engine, EngineError, PendingQuery, RunConfig};
use gsal_core::tree::LeafSummary;
use gsal_core::{Dataset, LabelAssignment};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingLabel,
    Finished,
}

/// The example a labeler is asked about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub query_id: u64,
    pub example_id: usize,
    pub node: u64,
    pub features: Vec<f64>,
    pub render_hint: Option<(usize, usize)>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub session_id: String,
    pub status: SessionStatus,
    pub budget_remaining: usize,
    pub query: Option<QueryPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub dataset: String,
    pub status: SessionStatus,
    pub config: RunConfig,
    pub step_index: u64,
    pub budget_remaining: usize,
    pub initial_budget: usize,
    pub num_classes: usize,
    pub leaves: Vec<LeafSummary>,
    pub total_bound: f64,
    /// `total_bound_after` of every executed step, in order.
    pub bound_curve: Vec<f64>,
    pub history: Vec<ActionRecord>,
    pub query: Option<QueryPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitView {
    pub session_id: String,
    pub status: SessionStatus,
    pub budget_remaining: usize,
    /// Steps executed by this submission: the label itself and any splits
    /// or cached labels that followed before the next query.
    pub applied: Vec<ActionRecord>,
    pub leaves: Vec<LeafSummary>,
    pub total_bound: f64,
    pub query: Option<QueryPayload>,
}

/// On-disk form of a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionFile {
    pub session_id: String,
    pub dataset: String,
    pub finalized: bool,
    pub checkpoint: Checkpoint,
}

#[derive(Debug)]
pub struct Session {
    id: String,
    dataset_name: String,
    engine: Engine,
    finalized: bool,
}

impl Session {
    /// Start a session and run it up to its first oracle query.
    pub fn start(
        id: String,
        dataset_name: String,
        dataset: Arc<Dataset>,
        config: RunConfig,
    ) -> Result<Self, EngineError> {
        let mut engine = Engine::new(config, dataset)?;
        engine.advance()?;
        Ok(Self {
            id,
            dataset_name,
            engine,
            finalized: false,
        })
    }

    pub fn restore(file: SessionFile, dataset: Arc<Dataset>) -> Result<Self, EngineError> {
        let mut engine = Engine::restore(file.checkpoint, dataset)?;
        if !file.finalized {
            engine.advance()?;
        }
        Ok(Self {
            id: file.session_id,
            dataset_name: file.dataset,
            engine,
            finalized: file.finalized,
        })
    }

    pub fn to_file(&self) -> SessionFile {
        SessionFile {
            session_id: self.id.clone(),
            dataset: self.dataset_name.clone(),
            finalized: self.finalized,
            checkpoint: self.engine.checkpoint(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn status(&self) -> SessionStatus {
        if self.finalized || self.engine.is_finished() {
            SessionStatus::Finished
        } else if self.engine.pending().is_some() {
            SessionStatus::AwaitingLabel
        } else {
            SessionStatus::Running
        }
    }

    fn payload(&self, query: &PendingQuery) -> QueryPayload {
        let dataset = self.engine.dataset();
        QueryPayload {
            query_id: query.query_id,
            example_id: query.example_id,
            node: query.node.0,
            features: dataset.features.row(query.example_id).to_vec(),
            render_hint: dataset.render_hint,
            num_classes: dataset.num_classes,
        }
    }

    fn current_query(&self) -> Option<QueryPayload> {
        if self.finalized {
            return None;
        }
        self.engine.pending().map(|q| self.payload(q))
    }

    pub fn query_view(&self) -> QueryView {
        QueryView {
            session_id: self.id.clone(),
            status: self.status(),
            budget_remaining: self.engine.budget_remaining(),
            query: self.current_query(),
        }
    }

    pub fn state_view(&self, history_tail: usize) -> StateView {
        let snapshot = self.engine.snapshot();
        let records = self.engine.records();
        StateView {
            session_id: self.id.clone(),
            dataset: self.dataset_name.clone(),
            status: self.status(),
            config: self.engine.config().clone(),
            step_index: snapshot.step_index,
            budget_remaining: snapshot.budget_remaining,
            initial_budget: self.engine.config().budget,
            num_classes: self.engine.dataset().num_classes,
            leaves: snapshot.leaves,
            total_bound: snapshot.total_bound,
            bound_curve: records.iter().map(|r| r.total_bound_after).collect(),
            history: records[records.len().saturating_sub(history_tail)..].to_vec(),
            query: self.current_query(),
        }
    }

    /// Deliver a label for the current query and advance to the next one.
    pub fn submit(&mut self, query_id: u64, class: usize) -> Result<SubmitView, EngineError> {
        if self.finalized {
            return Err(EngineError::NoPendingQuery);
        }
        let before = self.engine.records().len();
        self.engine.submit_label(query_id, class)?;
        self.engine.advance()?;
        let snapshot = self.engine.snapshot();
        Ok(SubmitView {
            session_id: self.id.clone(),
            status: self.status(),
            budget_remaining: snapshot.budget_remaining,
            applied: self.engine.records()[before..].to_vec(),
            leaves: snapshot.leaves,
            total_bound: snapshot.total_bound,
            query: self.current_query(),
        })
    }

    /// Stop labeling and return the assignment. Repeated calls return the
    /// same assignment.
    pub fn finalize(&mut self) -> LabelAssignment {
        if !self.finalized {
            self.engine.abort_pending();
            self.finalized = true;
        }
        self.engine.finalize()
    }
}
