//! Threshold sensitivity sweeps and constrained threshold selection over
//! labeled workloads.
//!
//! A sweep routes every workload item at each gamma on the grid and reports
//! the routing distribution, estimated (or measured) energy, and answer
//! quality when labels and executions are available. Selection then picks
//! the cheapest gamma whose quality clears the floor.

use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::energy_saving;
use crate::error::{Error, Result};
use crate::router::{Query, RouterConfig, RoutePath};

/// One workload item, optionally labeled with the expected answer and path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub text: String,
    #[serde(default)]
    pub expected_answer: Option<String>,
    #[serde(default)]
    pub expected_path: Option<RoutePath>,
}

/// A labeled workload for sweeps and threshold selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledWorkload {
    pub items: Vec<WorkloadItem>,
}

impl LabeledWorkload {
    pub fn from_jsonl(reader: impl BufRead) -> Result<LabeledWorkload> {
        let mut items = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: WorkloadItem = serde_json::from_str(&line)
                .map_err(|e| Error::Serde(format!("workload line {}: {e}", lineno + 1)))?;
            items.push(item);
        }
        Ok(LabeledWorkload { items })
    }
}

/// One row of a gamma sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub green_fraction: f64,
    pub deep_fraction: f64,
    /// Exact-match rate against expected answers; present only when the
    /// sweep executed queries against labeled items.
    pub avg_quality: Option<f64>,
    pub total_joules: f64,
    /// Relative to the all-deep baseline (gamma = 0).
    pub saving_vs_baseline: f64,
}

/// Per-path average joules used to estimate sweep energy in dry-run mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepCosts {
    pub green_joules: f64,
    pub deep_joules: f64,
}

impl Default for SweepCosts {
    fn default() -> Self {
        // illustrative per-query averages for the two isolated paths
        SweepCosts { green_joules: 50.0, deep_joules: 758.0 }
    }
}

/// Dry-run gamma sweep: routes every item at each gamma without touching
/// any backend, estimating energy from configured per-path costs. The
/// saving baseline is the all-deep cost (the gamma = 0 row).
pub fn sweep_gamma(
    workload: &LabeledWorkload,
    grid: &[f64],
    cfg: &RouterConfig,
    costs: SweepCosts,
) -> Result<Vec<SweepRow>> {
    if workload.items.is_empty() {
        return Err(Error::Usage("sweep requires a non-empty workload".into()));
    }
    if grid.is_empty() {
        return Err(Error::Usage("sweep requires a non-empty gamma grid".into()));
    }
    cfg.validate()?;

    // scores do not depend on gamma; compute them once, in parallel
    let scores: Vec<f64> = workload
        .items
        .par_iter()
        .map(|item| {
            let query = Query::new("sweep", &item.text)?;
            let (score, _, _) = crate::router::score_complexity(&query, cfg);
            Ok(score)
        })
        .collect::<Result<Vec<f64>>>()?;

    let n = scores.len() as f64;
    let baseline = n * costs.deep_joules;
    let mut rows = Vec::with_capacity(grid.len());
    for &gamma in grid {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Usage(format!("gamma grid value {gamma} outside [0,1]")));
        }
        let green = scores.iter().filter(|s| **s < gamma).count() as f64;
        let deep = n - green;
        let total_joules = green * costs.green_joules + deep * costs.deep_joules;
        rows.push(SweepRow {
            gamma,
            green_fraction: green / n,
            deep_fraction: deep / n,
            avg_quality: None,
            total_joules,
            saving_vs_baseline: energy_saving(baseline, total_joules)?,
        });
    }
    Ok(rows)
}

/// Outcome of constrained threshold selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GammaSelection {
    Selected { gamma: f64, total_joules: f64, avg_quality: f64 },
    /// No row meets the quality floor.
    Infeasible { tau: f64 },
}

/// Picks the gamma with minimal energy among rows whose quality is at least
/// `tau`; ties go to the larger gamma. Rows must carry quality labels.
pub fn select_gamma(rows: &[SweepRow], tau: f64) -> Result<GammaSelection> {
    if rows.is_empty() {
        return Err(Error::Usage("select_gamma requires at least one row".into()));
    }
    if rows.iter().any(|r| r.avg_quality.is_none()) {
        return Err(Error::Usage("select_gamma requires quality-labeled rows".into()));
    }
    let mut best: Option<&SweepRow> = None;
    for row in rows {
        let quality = row.avg_quality.expect("checked above");
        if quality < tau {
            continue;
        }
        best = match best {
            None => Some(row),
            Some(current) => {
                let better = row.total_joules < current.total_joules
                    || (row.total_joules == current.total_joules && row.gamma > current.gamma);
                if better {
                    Some(row)
                } else {
                    Some(current)
                }
            }
        };
    }
    Ok(match best {
        Some(row) => GammaSelection::Selected {
            gamma: row.gamma,
            total_joules: row.total_joules,
            avg_quality: row.avg_quality.expect("checked above"),
        },
        None => GammaSelection::Infeasible { tau },
    })
}

/// Answer-quality match: case-folded, whitespace-normalized, numeric-aware.
/// With `containment`, the expected answer may appear anywhere in the
/// actual one.
pub fn quality_match(expected: &str, actual: &str, containment: bool) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let e = norm(expected);
    let a = norm(actual);
    if let (Ok(en), Ok(an)) = (e.trim_end_matches('.').parse::<f64>(), a.trim_end_matches('.').parse::<f64>()) {
        return (en - an).abs() <= 1e-9 * en.abs().max(an.abs()).max(1.0);
    }
    if containment {
        a.contains(&e)
    } else {
        a == e
    }
}

/// Renders rows as an aligned text table.
pub fn rows_to_table(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "gamma   green%   deep%    quality   total_joules   saving%\n",
    );
    for r in rows {
        let quality = match r.avg_quality {
            Some(q) => format!("{:.3}", q),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<7.2} {:<8.3} {:<8.3} {:<9} {:<14.1} {:<7.1}\n",
            r.gamma,
            r.green_fraction,
            r.deep_fraction,
            quality,
            r.total_joules,
            r.saving_vs_baseline
        ));
    }
    out
}

/// Renders rows as CSV with a header, byte-stable for a fixed input.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("gamma,green_fraction,deep_fraction,avg_quality,total_joules,saving_vs_baseline\n");
    for r in rows {
        let quality = match r.avg_quality {
            Some(q) => format!("{q}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.gamma, r.green_fraction, r.deep_fraction, quality, r.total_joules, r.saving_vs_baseline
        ));
    }
    out
}
