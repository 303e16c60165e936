//! Aggregation of per-cell results into per-method summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::io::ResultRow;
use crate::{HarnessError, Result};

/// Region label of the rows pooled over every trial.
pub const ALL_REGIONS: &str = "all";
/// Region label of the rows whose spread is over per-region means.
pub const ACROSS_REGIONS: &str = "across_regions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub pose_region: String,
    pub trials: usize,
    pub faults: usize,
    pub dressed_ratio_mean: f64,
    pub dressed_ratio_std: f64,
    pub avg_violation_mean: f64,
    pub avg_violation_std: f64,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summary(method: &str, region: &str, rows: &[&ResultRow]) -> SummaryRow {
    let dressed: Vec<f64> = rows.iter().map(|r| r.dressed_ratio).collect();
    let viol: Vec<f64> = rows.iter().map(|r| r.avg_violation).collect();
    let (dm, ds) = mean_std(&dressed);
    let (vm, vs) = mean_std(&viol);
    SummaryRow {
        method: method.to_string(),
        pose_region: region.to_string(),
        trials: rows.len(),
        faults: rows.iter().filter(|r| r.episode_fault).count(),
        dressed_ratio_mean: dm,
        dressed_ratio_std: ds,
        avg_violation_mean: vm,
        avg_violation_std: vs,
    }
}

/// Per method: one row per region, one pooled over all trials, and one
/// whose spread is the std of the region means. Methods keep their
/// first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(HarnessError::NoRows("results".into()));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
        let mut by_region: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
        for r in &mine {
            by_region.entry(r.pose_region.as_str()).or_default().push(r);
        }
        let per_region: Vec<SummaryRow> = by_region.iter().map(|(region, rs)| summary(m, region, rs)).collect();
        let (dm, ds) = mean_std(&per_region.iter().map(|r| r.dressed_ratio_mean).collect::<Vec<_>>());
        let (vm, vs) = mean_std(&per_region.iter().map(|r| r.avg_violation_mean).collect::<Vec<_>>());
        let across = SummaryRow {
            method: m.to_string(),
            pose_region: ACROSS_REGIONS.to_string(),
            trials: mine.len(),
            faults: mine.iter().filter(|r| r.episode_fault).count(),
            dressed_ratio_mean: dm,
            dressed_ratio_std: ds,
            avg_violation_mean: vm,
            avg_violation_std: vs,
        };
        out.extend(per_region);
        out.push(summary(m, ALL_REGIONS, &mine));
        out.push(across);
    }
    Ok(out)
}

/// Fixed-width text table of a summary.
pub fn render_table(summary: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:<15} {:>6} {:>6} {:>22} {:>24}",
        "method", "region", "trials", "faults", "dressed ratio", "avg violation"
    );
    for r in summary {
        let _ = writeln!(
            s,
            "{:<14} {:<15} {:>6} {:>6} {:>10.4} ± {:<9.4} {:>11.4} ± {:<10.4}",
            r.method,
            r.pose_region,
            r.trials,
            r.faults,
            r.dressed_ratio_mean,
            r.dressed_ratio_std,
            r.avg_violation_mean,
            r.avg_violation_std
        );
    }
    s
}

/// The pooled summary row of `method`, if present.
pub fn overall<'a>(summary: &'a [SummaryRow], method: &str) -> Option<&'a SummaryRow> {
    summary
        .iter()
        .find(|r| r.method == method && r.pose_region == ALL_REGIONS)
}
