//! Standardized run outcomes and cost metrics.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Success,
    Timeout,
    Memout,
    Crashed,
    /// Harness-level fatal error; the experiment must stop.
    Abort,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Success => "SUCCESS",
            RunStatus::Timeout => "TIMEOUT",
            RunStatus::Memout => "MEMOUT",
            RunStatus::Crashed => "CRASHED",
            RunStatus::Abort => "ABORT",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUCCESS" | "SAT" | "UNSAT" => Ok(RunStatus::Success),
            "TIMEOUT" => Ok(RunStatus::Timeout),
            "MEMOUT" => Ok(RunStatus::Memout),
            "CRASHED" => Ok(RunStatus::Crashed),
            "ABORT" => Ok(RunStatus::Abort),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// What the configurator minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// Mean CPU time, unsuccessful runs counted as `10 * cutoff_max`.
    RuntimePar10,
    /// Mean CPU time, unsuccessful runs counted as `cutoff_max`.
    RuntimePar1,
    /// Mean reported quality, unsuccessful runs counted as `worst`.
    Quality { worst: f64 },
}

impl Metric {
    pub fn is_runtime(&self) -> bool {
        !matches!(self, Metric::Quality { .. })
    }

    /// Cost charged to any run that did not succeed.
    pub fn penalty(&self, cutoff_max: f64) -> f64 {
        match self {
            Metric::RuntimePar10 => 10.0 * cutoff_max,
            Metric::RuntimePar1 => cutoff_max,
            Metric::Quality { worst } => *worst,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::RuntimePar10 => "runtime_par10",
            Metric::RuntimePar1 => "runtime_par1",
            Metric::Quality { .. } => "quality",
        }
    }
}

/// How a process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Code(i32),
    Signal(i32),
    /// The process was never observed to end (harness error paths only).
    Unknown,
}

impl ExitStatus {
    pub fn success(&self) -> bool {
        matches!(self, ExitStatus::Code(0))
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitStatus::Code(c) => write!(f, "{c}"),
            ExitStatus::Signal(s) => write!(f, "signal {s}"),
            ExitStatus::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    WrongAnswer,
    NotChecked,
}

/// Numbers a target printed about itself. Never used for cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Reported {
    pub runtime: Option<f64>,
    pub quality: Option<f64>,
}

/// Health flags attached to a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anomaly {
    FaultyReportedNumber { field: String, value: String },
    CutoffNotRespected { cpu_time: f64, cutoff: f64 },
    MemoryLimitExceeded { max_memory: f64, limit: f64 },
    WallclockExceedsCpu { wall_time: f64, cpu_time: f64 },
    OrphansLeft { count: usize },
}

impl Anomaly {
    pub fn code(&self) -> &'static str {
        match self {
            Anomaly::FaultyReportedNumber { .. } => "faulty_reported_number",
            Anomaly::CutoffNotRespected { .. } => "cutoff_not_respected",
            Anomaly::MemoryLimitExceeded { .. } => "memory_limit_exceeded",
            Anomaly::WallclockExceedsCpu { .. } => "wallclock_exceeds_cpu",
            Anomaly::OrphansLeft { .. } => "orphans_left",
        }
    }
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anomaly::FaultyReportedNumber { field, value } => {
                write!(f, "faulty self-reported {field}: {value}")
            }
            Anomaly::CutoffNotRespected { cpu_time, cutoff } => {
                write!(f, "cutoff not respected: cpu {cpu_time:.3}s > cutoff {cutoff:.3}s")
            }
            Anomaly::MemoryLimitExceeded { max_memory, limit } => {
                write!(f, "memory limit exceeded: {max_memory:.1} MiB > {limit:.1} MiB")
            }
            Anomaly::WallclockExceedsCpu {
                wall_time,
                cpu_time,
            } => write!(f, "wallclock>>CPU: wall {wall_time:.3}s vs cpu {cpu_time:.3}s"),
            Anomaly::OrphansLeft { count } => write!(f, "{count} orphan processes left"),
        }
    }
}

/// Standardized outcome of one target-algorithm run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub cost: f64,
    pub cpu_time: f64,
    pub wall_time: f64,
    pub max_memory: f64,
    pub seed: u64,
    pub exit: ExitStatus,
    pub verdict: Verdict,
    #[serde(default)]
    pub reported: Reported,
    #[serde(default)]
    pub anomalies: Vec<Anomaly>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl RunResult {
    /// Result for a harness failure that never produced a target outcome.
    pub fn abort(seed: u64, penalty: f64, detail: impl Into<String>) -> Self {
        RunResult {
            status: RunStatus::Abort,
            cost: penalty,
            cpu_time: 0.0,
            wall_time: 0.0,
            max_memory: 0.0,
            seed,
            exit: ExitStatus::Unknown,
            verdict: Verdict::NotChecked,
            reported: Reported::default(),
            anomalies: Vec::new(),
            artifacts_dir: None,
            detail: Some(detail.into()),
        }
    }
}
