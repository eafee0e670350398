use std::io::Write;

use anyhow::Result;
use clap::Args;
use gsal_core::validation::{
    self, CellReport, GridReport, UnimodalReport, FLAT_TOLERANCE, GRID_STEP, GRID_TOLERANCE, MC_MAX_RATE,
    MC_POPULATION, MC_TRIALS,
};

#[derive(Args, Debug, Clone)]
pub struct BoundcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte-Carlo trials per cell
    #[arg(long, default_value_t = MC_TRIALS)]
    pub trials: usize,
    /// Highest acceptable violation rate per cell
    #[arg(long, default_value_t = MC_MAX_RATE)]
    pub max_rate: f64,
    /// Random stats compared against the grid search
    #[arg(long, default_value_t = 1_000)]
    pub cases: usize,
    #[arg(long, default_value_t = GRID_STEP)]
    pub grid_step: f64,
    #[arg(long, default_value_t = GRID_TOLERANCE)]
    pub grid_tolerance: f64,
}

impl Default for BoundcheckArgs {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: MC_TRIALS,
            max_rate: MC_MAX_RATE,
            cases: 1_000,
            grid_step: GRID_STEP,
            grid_tolerance: GRID_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundcheckReport {
    pub max_rate: f64,
    pub cells: Vec<CellReport>,
    /// Cells where the whole population is labeled.
    pub full_cells: Vec<CellReport>,
    pub grid: GridReport,
    pub unimodal: UnimodalReport,
}

impl BoundcheckReport {
    pub fn coverage_passed(&self) -> bool {
        self.cells.iter().all(|c| c.rate() <= self.max_rate)
    }

    pub fn passed(&self) -> bool {
        self.coverage_passed() && self.grid.passed() && self.unimodal.violations == 0
    }
}

pub fn boundcheck(args: &BoundcheckArgs) -> BoundcheckReport {
    let full_cells = validation::MC_FRACTIONS
        .iter()
        .map(|&p| validation::monte_carlo_cell(args.seed, p, MC_POPULATION, MC_POPULATION, args.trials.min(100)))
        .collect();
    BoundcheckReport {
        max_rate: args.max_rate,
        cells: validation::monte_carlo_grid(args.seed, args.trials),
        full_cells,
        grid: validation::grid_equivalence(args.seed, args.cases, args.grid_step, args.grid_tolerance),
        unimodal: validation::unimodality_witness(args.seed, args.cases, args.grid_step, FLAT_TOLERANCE),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn write_report(report: &BoundcheckReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "monte-carlo coverage (N = {MC_POPULATION}, violation: bound > p*N)")?;
    writeln!(out, "{:>5} {:>5} {:>7} {:>10} {:>8} {:>13} {:>11}", "p", "n", "trials", "violations", "rate", "realized_rate", "mean_bound")?;
    let line = |out: &mut dyn Write, c: &CellReport| {
        writeln!(
            out,
            "{:>5.2} {:>5} {:>7} {:>10} {:>8.4} {:>13.4} {:>11.2}",
            c.p,
            c.labeled,
            c.trials,
            c.violations,
            c.rate(),
            c.realized_rate(),
            c.mean_bound
        )
    };
    for c in &report.cells {
        line(out, c)?;
    }
    writeln!(out, "fully labeled cells (n = N)")?;
    for c in &report.full_cells {
        line(out, c)?;
    }
    let worst = report.cells.iter().map(CellReport::rate).fold(0.0, f64::max);
    writeln!(
        out,
        "{} coverage: worst rate {worst:.4}, limit {:.4}",
        verdict(report.coverage_passed()),
        report.max_rate
    )?;
    let g = &report.grid;
    writeln!(
        out,
        "{} ternary vs grid: {} of {} cases outside tolerance, max |diff| {:.3e}, ternary higher in {}",
        verdict(g.passed()),
        g.failures,
        g.cases,
        g.max_abs_diff,
        g.ternary_higher
    )?;
    if let Some(w) = &g.worst {
        writeln!(
            out,
            "    worst case m={} n={} N={}: ternary {:.9} grid {:.9}",
            w.stats.majority(),
            w.stats.labeled(),
            w.stats.total(),
            w.ternary,
            w.grid
        )?;
    }
    let u = &report.unimodal;
    writeln!(
        out,
        "{} unimodality: {} of {} curves multimodal",
        verdict(u.violations == 0),
        u.violations,
        u.cases
    )?;
    Ok(())
}

/// Print the report; `Ok(false)` when any check failed.
pub fn cmd_boundcheck(args: &BoundcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let report = boundcheck(args);
    write_report(&report, out)?;
    Ok(report.passed())
}
