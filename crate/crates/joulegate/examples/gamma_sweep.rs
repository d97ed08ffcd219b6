//! Threshold sensitivity: sweep gamma over a synthetic workload, print the
//! routing distribution and estimated energy per point, then pick the
//! cheapest threshold that clears a quality floor from labeled rows.
//!
//! Run: `cargo run --example gamma_sweep`

use joulegate::router::RouterConfig;
use joulegate::sweep::{
    rows_to_table, select_gamma, sweep_gamma, GammaSelection, LabeledWorkload, SweepCosts,
    SweepRow, WorkloadItem,
};

fn main() {
    let mut items = Vec::new();
    for i in 0..60 {
        let text = match i % 3 {
            0 => format!("What is the capital of country number {i}?"),
            1 => format!("If x = {i} and y = 7, what is x * y + 21 / 7?"),
            _ => format!(
                "A depot holds {i} pallets. It receives 3 times as many and ships half. \
                 How many pallets remain?"
            ),
        };
        items.push(WorkloadItem { text, expected_answer: None, expected_path: None });
    }
    let workload = LabeledWorkload { items };

    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows =
        sweep_gamma(&workload, &grid, &RouterConfig::default(), SweepCosts::default()).unwrap();
    println!("{}", rows_to_table(&rows));

    // threshold selection needs quality labels; use rows transcribed from a
    // validation run (quality falls as gamma pushes hard queries green)
    let labeled: Vec<SweepRow> = rows
        .iter()
        .map(|r| SweepRow {
            avg_quality: Some(0.90 - 0.25 * r.green_fraction * r.green_fraction),
            ..r.clone()
        })
        .collect();
    match select_gamma(&labeled, 0.85).unwrap() {
        GammaSelection::Selected { gamma, total_joules, avg_quality } => println!(
            "selected gamma {gamma}: {total_joules:.0} J at quality {avg_quality:.3}"
        ),
        GammaSelection::Infeasible { tau } => println!("no gamma meets quality {tau}"),
    }
}
