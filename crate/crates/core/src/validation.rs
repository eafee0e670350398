//! Empirical checks of the bound: ternary search against a dense grid, the
//! shape of the bound curve, and Monte-Carlo coverage on synthetic
//! two-class populations with a known majority fraction.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::{self, NodeStats};

pub const GRID_STEP: f64 = 1e-5;
pub const GRID_TOLERANCE: f64 = 1e-6;
pub const FLAT_TOLERANCE: f64 = 1e-9;

/// Random valid stats with `1 <= n <= max_labeled`, `0 <= m <= n` and
/// `n <= N <= max_total`.
pub fn random_stats(rng: &mut impl Rng, max_labeled: usize, max_total: usize) -> NodeStats {
    let n = rng.random_range(1..=max_labeled);
    let m = rng.random_range(0..=n);
    let total = rng.random_range(n..=max_total.max(n));
    NodeStats::new(m, n, total).expect("generated stats are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMismatch {
    pub stats: NodeStats,
    pub ternary: f64,
    pub grid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cases: usize,
    pub failures: usize,
    pub max_abs_diff: f64,
    /// Cases where the ternary value was higher than the grid maximum.
    pub ternary_higher: usize,
    pub worst: Option<GridMismatch>,
}

impl GridReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compare [`bound::maximize_bound`] with a grid search of step `step` over
/// `cases` random stats (`n <= 500`, `N <= 10,000`).
pub fn grid_equivalence(seed: u64, cases: usize, step: f64, tolerance: f64) -> GridReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GridReport {
        cases,
        failures: 0,
        max_abs_diff: 0.0,
        ternary_higher: 0,
        worst: None,
    };
    for _ in 0..cases {
        let stats = random_stats(&mut rng, 500, 10_000);
        let ternary = bound::maximize_bound(stats).value;
        let grid = bound::grid_maximize(stats, step).value;
        let diff = (ternary - grid).abs();
        if diff > tolerance {
            report.failures += 1;
        }
        if ternary > grid {
            report.ternary_higher += 1;
        }
        if diff > report.max_abs_diff {
            report.max_abs_diff = diff;
            report.worst = Some(GridMismatch { stats, ternary, grid });
        }
    }
    report
}

/// True when the finite differences of `values` rise (or stay flat) and
/// then fall (or stay flat), treating changes within `flat` as flat.
pub fn is_unimodal(values: &[f64], flat: f64) -> bool {
    let mut descending = false;
    for pair in values.windows(2) {
        let d = pair[1] - pair[0];
        if d > flat && descending {
            return false;
        }
        if d < -flat {
            descending = true;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalReport {
    pub cases: usize,
    pub violations: usize,
    pub first_violation: Option<NodeStats>,
}

/// Check the shape of `t -> F(t)` on a grid over `[0, min(1, m/n)]` for the
/// same random stats family as [`grid_equivalence`].
pub fn unimodality_witness(seed: u64, cases: usize, step: f64, flat: f64) -> UnimodalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = UnimodalReport {
        cases,
        violations: 0,
        first_violation: None,
    };
    let mut values = Vec::new();
    for _ in 0..cases {
        let stats = random_stats(&mut rng, 500, 10_000);
        let limit = bound::search_limit(stats);
        let steps = (limit / step).floor() as usize;
        values.clear();
        values.extend((0..=steps).map(|i| bound::bound_value(stats, (i as f64 * step).min(limit))));
        if !is_unimodal(&values, flat) {
            report.violations += 1;
            report.first_violation.get_or_insert(stats);
        }
    }
    report
}

/// One Monte-Carlo cell: a population of `population` examples, a fraction
/// `p` of which carry the majority class, sampled `labeled` at a time
/// without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub p: f64,
    pub labeled: usize,
    pub population: usize,
    pub trials: usize,
    /// Trials where the maximized bound exceeded `p * N`.
    pub violations: usize,
    /// Trials where the maximized bound exceeded the count of correct labels
    /// actually obtained by keeping the sampled labels and assigning the
    /// sample majority to every unlabeled example.
    pub realized_violations: usize,
    pub mean_bound: f64,
}

impl CellReport {
    pub fn rate(&self) -> f64 {
        self.violations as f64 / self.trials.max(1) as f64
    }

    pub fn realized_rate(&self) -> f64 {
        self.realized_violations as f64 / self.trials.max(1) as f64
    }
}

pub fn monte_carlo_cell(seed: u64, p: f64, labeled: usize, population: usize, trials: usize) -> CellReport {
    assert!(labeled <= population && (0.0..=1.0).contains(&p));
    let majority_total = (p * population as f64).round() as usize;
    let target = p * population as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut realized_violations = 0;
    let mut bound_sum = 0.0;
    for _ in 0..trials {
        // examples 0..majority_total carry the majority class
        let k = index::sample(&mut rng, population, labeled)
            .iter()
            .filter(|&i| i < majority_total)
            .count();
        let (m, sampled_majority_is_true) = if k >= labeled - k { (k, true) } else { (labeled - k, false) };
        let stats = NodeStats::new(m, labeled, population).expect("valid sample stats");
        let value = bound::maximize_bound(stats).value;
        bound_sum += value;
        if value > target {
            violations += 1;
        }
        let unlabeled_agreeing = if sampled_majority_is_true {
            majority_total - k
        } else {
            (population - majority_total) - (labeled - k)
        };
        if value > (labeled + unlabeled_agreeing) as f64 {
            realized_violations += 1;
        }
    }
    CellReport {
        p,
        labeled,
        population,
        trials,
        violations,
        realized_violations,
        mean_bound: bound_sum / trials.max(1) as f64,
    }
}

pub const MC_FRACTIONS: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 0.95];
pub const MC_SAMPLE_SIZES: [usize; 4] = [20, 50, 100, 200];
pub const MC_POPULATION: usize = 1_000;
pub const MC_TRIALS: usize = 2_000;
pub const MC_MAX_RATE: f64 = 0.05;

/// Every `(p, n)` cell of the standard grid, each with its own derived seed.
pub fn monte_carlo_grid(seed: u64, trials: usize) -> Vec<CellReport> {
    let mut reports = Vec::new();
    for (i, &p) in MC_FRACTIONS.iter().enumerate() {
        for (j, &n) in MC_SAMPLE_SIZES.iter().enumerate() {
            let cell_seed = seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            reports.push(monte_carlo_cell(cell_seed, p, n, MC_POPULATION, trials));
        }
    }
    reports
}
