//! Validation at the full cutoff, best-of-n selection and over-tuning analysis.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::configurator::{mean, run_cost, Pair, Trajectory};
use crate::result::{Metric, RunStatus};
use crate::space::Configuration;
use crate::wrapper::{Wrapper, WrapperError};

/// Over-tuning flag threshold on Spearman's rho.
pub const RHO_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Wrapper(#[from] WrapperError),
    #[error("validation run aborted: {0}")]
    Abort(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpearmanError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooShort,
    #[error("rank correlation undefined: zero rank variance")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetTag {
    Train,
    Test,
}

impl SetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SetTag::Train => "train",
            SetTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub status: RunStatus,
    pub cost: f64,
    pub cpu_time: f64,
}

/// Configurations by (instance, seed) columns, all run at the full cutoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    pub set: SetTag,
    pub configs: Vec<Configuration>,
    pub columns: Vec<Pair>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<Cell>>,
    pub metric: Metric,
    pub cutoff_max: f64,
}

impl CostMatrix {
    pub fn cell_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn all_cells(&self) -> Vec<Cell> {
        self.cells.iter().flatten().copied().collect()
    }

    pub fn row_of(&self, config: &Configuration) -> Option<usize> {
        self.configs.iter().position(|c| c.id() == config.id())
    }

    pub fn row_aggregate(&self, row: usize) -> f64 {
        let costs: Vec<f64> = self.cells[row]
            .iter()
            .map(|c| if c.status == RunStatus::Success { c.cost } else { self.metric.penalty(self.cutoff_max) })
            .collect();
        mean(&costs)
    }

    pub fn row_aggregates(&self) -> Vec<f64> {
        (0..self.configs.len()).map(|r| self.row_aggregate(r)).collect()
    }

    /// `config_id,instance,seed,status,cost` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config_id", "instance", "seed", "status", "cost"])?;
        for (config, row) in self.configs.iter().zip(&self.cells) {
            for (col, cell) in self.columns.iter().zip(row) {
                out.write_record([
                    config.id().to_string(),
                    col.instance.clone(),
                    col.seed.to_string(),
                    cell.status.to_string(),
                    format!("{:.6}", cell.cost),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Columns for a validation: `k` seeds per instance, shared by all configs.
pub fn validation_columns(instances: &[String], k: usize, deterministic: bool, validation_seed: u64) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(validation_seed);
    let mut cols = Vec::with_capacity(instances.len() * k);
    for instance in instances {
        for _ in 0..k {
            let seed = if deterministic { 0 } else { rng.random() };
            cols.push(Pair {
                instance: instance.clone(),
                seed,
            });
        }
    }
    cols
}

/// Runs every (config, instance, seed) once through `wrapper` at the full
/// cutoff. Returns the matrix and any warnings.
pub fn validate_configs(
    wrapper: &Wrapper,
    configs: &[Configuration],
    instances: &[String],
    seeds_per_instance: usize,
    set: SetTag,
    validation_seed: u64,
    workers: usize,
) -> Result<(CostMatrix, Vec<String>), EvalError> {
    if configs.is_empty() {
        return Err(EvalError::Empty("no configurations"));
    }
    if instances.is_empty() {
        return Err(EvalError::Empty("no instances"));
    }
    if seeds_per_instance == 0 {
        return Err(EvalError::Invalid("seeds per instance must be >= 1".into()));
    }
    let scenario = wrapper.scenario();
    let mut warnings = Vec::new();
    let mut k = seeds_per_instance;
    if scenario.deterministic && k > 1 {
        warnings.push(format!("deterministic target: {k} seeds per instance collapsed to 1"));
        k = 1;
    }
    let columns = validation_columns(instances, k, scenario.deterministic, validation_seed);
    let cutoff = scenario.cutoff_max;
    let mut requests = Vec::with_capacity(configs.len() * columns.len());
    for (row, config) in configs.iter().enumerate() {
        for (col, pair) in columns.iter().enumerate() {
            let req = wrapper.request(config.clone(), &pair.instance, pair.seed, cutoff)?;
            requests.push((row, col, req));
        }
    }
    let run_all = || -> Vec<(usize, usize, crate::result::RunResult)> {
        requests
            .par_iter()
            .map(|(row, col, req)| (*row, *col, wrapper.run_request(req)))
            .collect()
    };
    let results = if workers <= 1 {
        requests
            .iter()
            .map(|(row, col, req)| (*row, *col, wrapper.run_request(req)))
            .collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvalError::Invalid(e.to_string()))?
            .install(run_all)
    };
    let placeholder = Cell {
        status: RunStatus::Abort,
        cost: f64::NAN,
        cpu_time: 0.0,
    };
    let mut cells = vec![vec![placeholder; columns.len()]; configs.len()];
    for (row, col, r) in results {
        if r.status == RunStatus::Abort {
            return Err(EvalError::Abort(r.detail.unwrap_or_default()));
        }
        cells[row][col] = Cell {
            status: r.status,
            cost: run_cost(&r, scenario.metric, cutoff),
            cpu_time: r.cpu_time,
        };
    }
    Ok((
        CostMatrix {
            set,
            configs: configs.to_vec(),
            columns,
            cells,
            metric: scenario.metric,
            cutoff_max: cutoff,
        },
        warnings,
    ))
}

/// Final incumbent with the lowest training cost; ties go to the lowest
/// run seed. Only a training matrix is accepted.
pub fn select_best_of_n(trajectories: &[Trajectory], train: &CostMatrix) -> Result<Configuration, EvalError> {
    if train.set != SetTag::Train {
        return Err(EvalError::Invalid("best-of-n selection must use training data only".into()));
    }
    let mut best: Option<(f64, u64, &Configuration)> = None;
    for t in trajectories {
        let config = t.final_incumbent().ok_or(EvalError::Empty("empty trajectory"))?;
        let row = train
            .row_of(config)
            .ok_or_else(|| EvalError::Invalid(format!("incumbent {} missing from training matrix", config.id())))?;
        let cost = train.row_aggregate(row);
        let better = match best {
            None => true,
            Some((c, seed, _)) => cost < c || (cost == c && t.run_seed < seed),
        };
        if better {
            best = Some((cost, t.run_seed, config));
        }
    }
    best.map(|(_, _, c)| c.clone()).ok_or(EvalError::Empty("no trajectories"))
}

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, SpearmanError> {
    if x.len() != y.len() {
        return Err(SpearmanError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(SpearmanError::TooShort);
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mx = mean(&rx);
    let my = mean(&ry);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(SpearmanError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub config_id: String,
    pub train_cost: f64,
    pub test_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvertuningReport {
    pub points: Vec<ScatterPoint>,
    /// None when undefined (constant costs).
    pub spearman_rho: Option<f64>,
    pub subset_fraction: Option<f64>,
    pub subset_size: Option<usize>,
    pub subset_rho: Option<f64>,
    pub flags: Vec<String>,
}

/// Train/test rank agreement over configurations.
pub fn overtuning_report(
    config_ids: &[String],
    train: &[f64],
    test: &[f64],
    subset: Option<f64>,
) -> Result<OvertuningReport, EvalError> {
    if config_ids.len() != train.len() || train.len() != test.len() {
        return Err(EvalError::Invalid("train and test aggregates must cover the same configurations".into()));
    }
    let points: Vec<ScatterPoint> = config_ids
        .iter()
        .zip(train.iter().zip(test))
        .map(|(id, (&tr, &te))| ScatterPoint {
            config_id: id.clone(),
            train_cost: tr,
            test_cost: te,
        })
        .collect();
    let mut flags = Vec::new();
    let rho_flag = |label: &str, r: &Result<f64, SpearmanError>, flags: &mut Vec<String>| match r {
        Ok(rho) if *rho < RHO_THRESHOLD => flags.push(format!(
            "{label} train/test Spearman rho {rho:.3} below {RHO_THRESHOLD}: instances look heterogeneous or the configurations over-tune"
        )),
        Ok(_) => {}
        Err(e) => flags.push(format!("{label} train/test correlation: {e}")),
    };
    let all = spearman(train, test);
    rho_flag("overall", &all, &mut flags);

    let (mut subset_size, mut subset_rho) = (None, None);
    if let Some(frac) = subset {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(EvalError::Invalid(format!("subset fraction {frac} outside (0, 1]")));
        }
        let n = ((frac * train.len() as f64).round() as usize).clamp(2.min(train.len()), train.len());
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.sort_by(|&a, &b| train[a].total_cmp(&train[b]).then(a.cmp(&b)));
        let best = &order[..n];
        let tr: Vec<f64> = best.iter().map(|&i| train[i]).collect();
        let te: Vec<f64> = best.iter().map(|&i| test[i]).collect();
        let r = spearman(&tr, &te);
        rho_flag(&format!("best {n}"), &r, &mut flags);
        subset_size = Some(n);
        subset_rho = r.ok();
    }
    Ok(OvertuningReport {
        points,
        spearman_rho: all.ok(),
        subset_fraction: subset,
        subset_size,
        subset_rho,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationPoint {
    pub elapsed: f64,
    pub config_id: String,
    pub cost: f64,
}

/// Cost of every incumbent of `trajectory` on `instances` at the full cutoff,
/// aligned to the incumbent-change times.
pub fn trajectory_validation(
    wrapper: &Wrapper,
    trajectory: &Trajectory,
    instances: &[String],
    k: usize,
    set: SetTag,
    validation_seed: u64,
    workers: usize,
) -> Result<Vec<ValidationPoint>, EvalError> {
    if trajectory.entries.is_empty() {
        return Err(EvalError::Empty("empty trajectory"));
    }
    let mut distinct: Vec<Configuration> = Vec::new();
    for e in &trajectory.entries {
        if !distinct.iter().any(|c| c.id() == e.config.id()) {
            distinct.push(e.config.clone());
        }
    }
    let (matrix, _) = validate_configs(wrapper, &distinct, instances, k, set, validation_seed, workers)?;
    let costs: HashMap<String, f64> = matrix
        .configs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id().to_string(), matrix.row_aggregate(i)))
        .collect();
    Ok(trajectory
        .entries
        .iter()
        .map(|e| ValidationPoint {
            elapsed: e.elapsed,
            config_id: e.config.id().to_string(),
            cost: costs[e.config.id().as_str()],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MachineFingerprint {
    pub hostname: String,
    pub cpu_model: String,
}

pub fn machine_fingerprint() -> MachineFingerprint {
    let hostname = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown".into());
    let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    MachineFingerprint { hostname, cpu_model }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub config_id: String,
    pub cost: f64,
    pub solved: usize,
    pub runs: usize,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub set: SetTag,
    pub metric: Metric,
    pub cutoff_max: f64,
    pub seeds_per_instance: usize,
    pub rows: Vec<SummaryRow>,
    pub overtuning: Option<OvertuningReport>,
    pub warnings: Vec<String>,
    pub machine: MachineFingerprint,
}

pub fn summarize(matrix: &CostMatrix, labels: &[String]) -> Vec<SummaryRow> {
    (0..matrix.configs.len())
        .map(|i| SummaryRow {
            label: labels.get(i).cloned().unwrap_or_else(|| format!("config-{i}")),
            config_id: matrix.configs[i].id().to_string(),
            cost: matrix.row_aggregate(i),
            solved: matrix.cells[i].iter().filter(|c| c.status == RunStatus::Success).count(),
            runs: matrix.cells[i].len(),
        })
        .collect()
}

/// Per-config costs keyed by id, for joining two matrices.
pub fn aggregates_by_id(matrix: &CostMatrix) -> BTreeMap<String, f64> {
    matrix
        .configs
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id().to_string(), matrix.row_aggregate(i)))
        .collect()
}
