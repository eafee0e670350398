//! Pessimistic lower bound on the expected number of correct labels in a node.
//!
//! For a node with `N` examples, `n` of which carry bound-set labels and `m`
//! of those agreeing with the majority class, the bound at buffer `t` is
//!
//! ```text
//! F(t) = n + (1 - exp(-2 n t^2)) (N - n) (m/n - t)
//! ```
//!
//! The first term counts the labeled examples; the second is the Hoeffding
//! lower estimate of majority-class members among the unlabeled ones, weighted
//! by the probability that the one-sided bound holds. `F` is unimodal on
//! `[0, m/n]`, so the best buffer is found by ternary search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bracket width at which ternary search stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
/// Hard cap on ternary-search iterations.
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("invalid node stats: majority={majority}, labeled={labeled}, total={total}")]
    InvalidStats {
        majority: usize,
        labeled: usize,
        total: usize,
    },
    #[error("node has no consumable example (labeled={labeled}, total={total})")]
    NoConsumableExample { labeled: usize, total: usize },
    #[error("split score needs at least one child")]
    EmptySplit,
}

/// Counts `(m, n, N)` for one node. Construction enforces `m <= n <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStats")]
pub struct NodeStats {
    majority: usize,
    labeled: usize,
    total: usize,
}

#[derive(Deserialize)]
struct RawStats {
    majority: usize,
    labeled: usize,
    total: usize,
}

impl TryFrom<RawStats> for NodeStats {
    type Error = BoundError;

    fn try_from(raw: RawStats) -> Result<Self, Self::Error> {
        NodeStats::new(raw.majority, raw.labeled, raw.total)
    }
}

impl NodeStats {
    pub fn new(majority: usize, labeled: usize, total: usize) -> Result<Self, BoundError> {
        if majority > labeled || labeled > total {
            return Err(BoundError::InvalidStats {
                majority,
                labeled,
                total,
            });
        }
        Ok(Self {
            majority,
            labeled,
            total,
        })
    }

    /// Number of bound-set labels that agree with the majority class (`m`).
    pub fn majority(&self) -> usize {
        self.majority
    }

    /// Number of bound-set labels (`n`).
    pub fn labeled(&self) -> usize {
        self.labeled
    }

    /// Number of examples in the node (`N`).
    pub fn total(&self) -> usize {
        self.total
    }

    /// Empirical majority fraction `m / n`, or 0 for an unsampled node.
    pub fn uniformity(&self) -> f64 {
        if self.labeled == 0 {
            0.0
        } else {
            self.majority as f64 / self.labeled as f64
        }
    }

    /// Stats after the oracle confirms one more majority label.
    pub fn with_confirmed_label(&self) -> Result<Self, BoundError> {
        if self.labeled >= self.total {
            return Err(BoundError::NoConsumableExample {
                labeled: self.labeled,
                total: self.total,
            });
        }
        Ok(Self {
            majority: self.majority + 1,
            labeled: self.labeled + 1,
            total: self.total,
        })
    }
}

/// Result of maximizing the bound over the buffer `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEval {
    pub t_star: f64,
    pub value: f64,
}

/// Evaluate the bound at buffer `t`. Zero for a node with no labels.
pub fn bound_value(stats: NodeStats, t: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&t), "buffer out of range: {t}");
    if stats.labeled == 0 {
        return 0.0;
    }
    let n = stats.labeled as f64;
    let unlabeled = (stats.total - stats.labeled) as f64;
    // 1 - exp(-2 n t^2), accurate for small t
    let holds = -(-2.0 * n * t * t).exp_m1();
    n + holds * unlabeled * (stats.uniformity() - t)
}

/// Upper end of the buffer search interval, `min(1, m/n)`.
pub fn search_limit(stats: NodeStats) -> f64 {
    stats.uniformity().min(1.0)
}

pub fn maximize_bound(stats: NodeStats) -> BoundEval {
    maximize_bound_with_tolerance(stats, DEFAULT_TOLERANCE)
}

/// Ternary search for the maximizing buffer on `[0, min(1, m/n)]`.
///
/// Stops when the bracket is no wider than `tolerance` or after
/// [`MAX_ITERATIONS`] rounds. The result never falls below `F(0) = n`.
pub fn maximize_bound_with_tolerance(stats: NodeStats, tolerance: f64) -> BoundEval {
    if stats.labeled == 0 {
        return BoundEval {
            t_star: 0.0,
            value: 0.0,
        };
    }
    let floor = BoundEval {
        t_star: 0.0,
        value: stats.labeled as f64,
    };
    if stats.labeled == stats.total || stats.majority == 0 {
        return floor;
    }

    let (mut lo, mut hi) = (0.0_f64, search_limit(stats));
    for _ in 0..MAX_ITERATIONS {
        if hi - lo <= tolerance {
            break;
        }
        let third = (hi - lo) / 3.0;
        let (a, b) = (lo + third, hi - third);
        if bound_value(stats, a) < bound_value(stats, b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let value = bound_value(stats, t_star);
    if value > floor.value {
        BoundEval { t_star, value }
    } else {
        floor
    }
}

/// Anticipated bound if a queried label agrees with the current majority.
pub fn score_label(stats: NodeStats) -> Result<f64, BoundError> {
    Ok(maximize_bound(stats.with_confirmed_label()?).value)
}

/// Sum of the maximized bounds of a candidate split's children.
pub fn score_split(children: &[NodeStats]) -> Result<f64, BoundError> {
    if children.is_empty() {
        return Err(BoundError::EmptySplit);
    }
    Ok(children.iter().map(|c| maximize_bound(*c).value).sum())
}

/// Brute-force grid maximizer used as an independent check of the ternary
/// search. Evaluates `t = 0, step, 2 step, ...` up to `min(1, m/n)` inclusive.
pub fn grid_maximize(stats: NodeStats, step: f64) -> BoundEval {
    if stats.labeled == 0 {
        return BoundEval {
            t_star: 0.0,
            value: 0.0,
        };
    }
    let limit = search_limit(stats);
    let steps = (limit / step).floor() as usize;
    let mut best = BoundEval {
        t_star: 0.0,
        value: bound_value(stats, 0.0),
    };
    let candidates = (1..=steps).map(|i| i as f64 * step).chain(std::iter::once(limit));
    for t in candidates {
        let t = t.min(limit);
        let value = bound_value(stats, t);
        if value > best.value {
            best = BoundEval { t_star: t, value };
        }
    }
    best
}
