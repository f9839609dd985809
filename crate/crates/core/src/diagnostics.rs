//! Health signals over single runs, run logs and the process table.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::configurator::{Phase, RunLogRecord};
use crate::result::{Anomaly, RunResult, RunStatus};
use crate::sandbox::{scan_tagged, MEMORY_SLACK};
use crate::wrapper::RunRequest;

/// Extra CPU slack on top of grace and poll interval, covering tick
/// granularity and signal delivery.
pub const CPU_SLACK: f64 = 0.1;
/// Wall/CPU ratio above which a successful run looks like it was waiting.
pub const WALL_CPU_RATIO: f64 = 3.0;
/// The ratio is only meaningful once the absolute gap is noticeable.
pub const WALL_CPU_MIN_GAP: f64 = 0.5;

/// Flags suspicious numbers in one result.
pub fn sanity_check_result(result: &RunResult, request: &RunRequest) -> Vec<Anomaly> {
    let mut out = Vec::new();
    if let Some(v) = result.reported.runtime {
        if !v.is_finite() || v < 0.0 {
            out.push(Anomaly::FaultyReportedNumber {
                field: "runtime".into(),
                value: v.to_string(),
            });
        }
    }
    if let Some(v) = result.reported.quality {
        if !v.is_finite() {
            out.push(Anomaly::FaultyReportedNumber {
                field: "quality".into(),
                value: v.to_string(),
            });
        }
    }
    let limits = &request.limits;
    let allowed = request.cutoff + limits.grace + limits.poll_interval + CPU_SLACK;
    if result.cpu_time > allowed {
        out.push(Anomaly::CutoffNotRespected {
            cpu_time: result.cpu_time,
            cutoff: request.cutoff,
        });
    }
    if result.max_memory > limits.memory_limit * (1.0 + MEMORY_SLACK) {
        out.push(Anomaly::MemoryLimitExceeded {
            max_memory: result.max_memory,
            limit: limits.memory_limit,
        });
    }
    if result.status == RunStatus::Success
        && result.wall_time > WALL_CPU_RATIO * result.cpu_time
        && result.wall_time - result.cpu_time > WALL_CPU_MIN_GAP
    {
        out.push(Anomaly::WallclockExceedsCpu {
            wall_time: result.wall_time,
            cpu_time: result.cpu_time,
        });
    }
    out
}

/// Live processes carrying an experiment's tag.
pub fn scan_orphans(experiment_tag: &str) -> Result<Vec<i32>, String> {
    scan_tagged(experiment_tag).map_err(|e| format!("cannot scan process table: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HealthThresholds {
    /// Fraction of challenger runs.
    pub crash_rate: f64,
    /// max / min of final training aggregates across runs.
    pub run_variance_ratio: f64,
}

impl Default for HealthThresholds {
    fn default() -> Self {
        HealthThresholds {
            crash_rate: 0.25,
            run_variance_ratio: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthLevel {
    Healthy,
    Warnings,
    Anomalies,
}

impl HealthLevel {
    pub fn exit_code(self) -> i32 {
        match self {
            HealthLevel::Healthy => 0,
            HealthLevel::Warnings => 1,
            HealthLevel::Anomalies => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthReport {
    pub level: HealthLevel,
    pub warnings: Vec<String>,
    pub challenger_runs: usize,
    pub crashed_challenger_runs: usize,
    pub crash_rate: f64,
    pub final_aggregates: Vec<f64>,
    pub variance_ratio: Option<f64>,
    pub anomaly_counts: BTreeMap<String, usize>,
    pub orphans: Vec<i32>,
    pub thresholds: HealthThresholds,
}

/// Monitoring summary. `orphans` is one process-table snapshot, taken by the
/// caller so that this function stays pure.
pub fn experiment_health(
    records: &[RunLogRecord],
    final_aggregates: &[f64],
    orphans: &[i32],
    thresholds: HealthThresholds,
) -> HealthReport {
    let mut warnings = Vec::new();
    let challengers: Vec<&RunLogRecord> = records.iter().filter(|r| r.phase == Phase::Race).collect();
    let crashed = challengers
        .iter()
        .filter(|r| r.result.status == RunStatus::Crashed)
        .count();
    let crash_rate = if challengers.is_empty() {
        0.0
    } else {
        crashed as f64 / challengers.len() as f64
    };
    if crash_rate > thresholds.crash_rate {
        warnings.push(format!(
            "{:.0}% of challenger runs crashed (threshold {:.0}%)",
            crash_rate * 100.0,
            thresholds.crash_rate * 100.0
        ));
    }

    let variance_ratio = if final_aggregates.len() >= 2 {
        let max = final_aggregates.iter().cloned().fold(f64::MIN, f64::max);
        let min = final_aggregates.iter().cloned().fold(f64::MAX, f64::min);
        Some(if min > 0.0 { max / min } else if max > 0.0 { f64::INFINITY } else { 1.0 })
    } else {
        None
    };
    if let Some(ratio) = variance_ratio {
        if ratio > thresholds.run_variance_ratio {
            warnings.push(format!(
                "final training costs of independent runs differ by {ratio:.1}x (threshold {:.1}x)",
                thresholds.run_variance_ratio
            ));
        }
    }

    let mut anomaly_counts = BTreeMap::new();
    for r in records {
        for a in &r.result.anomalies {
            *anomaly_counts.entry(a.code().to_string()).or_insert(0) += 1;
        }
    }
    let level = if !anomaly_counts.is_empty() || !orphans.is_empty() {
        HealthLevel::Anomalies
    } else if !warnings.is_empty() {
        HealthLevel::Warnings
    } else {
        HealthLevel::Healthy
    };
    HealthReport {
        level,
        warnings,
        challenger_runs: challengers.len(),
        crashed_challenger_runs: crashed,
        crash_rate,
        final_aggregates: final_aggregates.to_vec(),
        variance_ratio,
        anomaly_counts,
        orphans: orphans.to_vec(),
        thresholds,
    }
}
