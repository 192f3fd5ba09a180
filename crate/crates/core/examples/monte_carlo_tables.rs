//! Runs the Monte Carlo experiments at a reduced replication count and
//! prints markdown tables. Every number is a pure function of the master
//! seed and does not depend on the number of worker threads.
//!
//! Run with `cargo run --release --example monte_carlo_tables [replications]`.

use sketchreg::experiment::{render_report, run_experiment_with_workers, ExperimentConfig, ReportFormat};
use sketchreg::SchemeId;

fn main() -> sketchreg::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);

    let mut table1 = ExperimentConfig::table1();
    table1.replications = reps;
    table1.schemes = vec![SchemeId::Rs1, SchemeId::Rp3, SchemeId::Cs];
    table1.m_grid = vec![500, 2_000];
    let rows = run_experiment_with_workers(&table1, 0)?;
    println!("## Distance preservation\n\n{}", render_report(&rows, ReportFormat::Markdown)?);

    let mut table3 = ExperimentConfig::table3();
    table3.replications = reps;
    table3.j_grid = vec![5];
    let rows = run_experiment_with_workers(&table3, 0)?;
    println!("## Pooled inference\n\n{}", render_report(&rows, ReportFormat::Markdown)?);

    let table4 = ExperimentConfig::table4();
    let rows = run_experiment_with_workers(&table4, 0)?;
    println!("## Inference-conscious sizes\n\n{}", render_report(&rows, ReportFormat::Markdown)?);
    Ok(())
}
