//! The `acharness` command line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::configurator::{configure_with, ConfigureError, ConfigureOutput, RunLogRecord, Trajectory};
use crate::diagnostics::{experiment_health, scan_orphans, HealthThresholds};
use crate::evaluation::{
    machine_fingerprint, overtuning_report, select_best_of_n, summarize, trajectory_validation, validate_configs,
    EvaluationReport, SetTag,
};
use crate::result::RunStatus;
use crate::scenario::{check_scenario, Scenario};
use crate::space::Configuration;
use crate::wrapper::{emit_result, Wrapper};

#[derive(Debug, Parser)]
#[command(name = "acharness", version, about = "Algorithm configuration harness")]
pub struct Cli {
    /// Root for per-run temp dirs; overrides the scenario and $TMPDIR.
    #[arg(long, global = true)]
    pub temp_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run independent configurator runs and pick the best on training data.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        n_runs: usize,
        #[arg(long, default_value_t = 0)]
        run_seed: u64,
        /// Concurrent configurator runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "acharness-out")]
        out: PathBuf,
    },
    /// Evaluate configurations at the full cutoff.
    Validate {
        scenario: PathBuf,
        /// JSON object, JSON array, JSON lines, or an incumbent.json.
        #[arg(long)]
        configs: PathBuf,
        #[arg(long, value_enum, default_value_t = SetArg::Train)]
        set: SetArg,
        /// Seeds per instance; defaults to the scenario's validation_seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Train-vs-test scatter analysis over many configurations.
        #[arg(long)]
        scatter: bool,
        /// Also evaluate the default configuration as a baseline.
        #[arg(long)]
        with_default: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        validation_seed: u64,
        #[arg(long, default_value = "acharness-out")]
        out: PathBuf,
    },
    /// Run one wire-format call and print its RESULT line.
    Wrap {
        scenario: PathBuf,
        /// Experiment tag for orphan scans.
        #[arg(long, default_value = "wrap")]
        tag: String,
        /// `<instance> <info> <cutoff> <runlength> <seed> [-param value]...`
        #[arg(last = true, allow_hyphen_values = true)]
        call: Vec<String>,
    },
    /// Check a scenario against setup recommendations.
    Check {
        scenario: PathBuf,
        /// Probe the default configuration on this many training instances.
        #[arg(long, default_value_t = 0)]
        probe: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the health of an experiment directory into health.json.
    Health {
        experiment: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        crash_rate: f64,
        #[arg(long, default_value_t = 5.0)]
        variance_ratio: f64,
    },
    /// Validate every incumbent of every run for anytime-performance plots.
    Report {
        scenario: PathBuf,
        experiment: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        validation_seed: u64,
    },
}

type CliResult = Result<i32, String>;

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let tr = cli.temp_root.as_deref();
    let outcome = match cli.command {
        Cmd::Run {
            scenario,
            n_runs,
            run_seed,
            workers,
            out,
        } => cmd_run(&scenario, n_runs, run_seed, workers, &out, tr),
        Cmd::Validate {
            scenario,
            configs,
            set,
            seeds,
            scatter,
            with_default,
            workers,
            validation_seed,
            out,
        } => cmd_validate(
            &scenario,
            &configs,
            &ValidateOptions {
                set: match set {
                    SetArg::Train => SetTag::Train,
                    SetArg::Test => SetTag::Test,
                },
                seeds,
                scatter,
                with_default,
                workers,
                validation_seed,
            },
            &out,
            tr,
        ),
        Cmd::Wrap { scenario, tag, call } => {
            let (line, code) = cmd_wrap(&scenario, &call, &tag, tr);
            println!("{line}");
            Ok(code)
        }
        Cmd::Check { scenario, probe, seed } => cmd_check(&scenario, probe, seed, tr),
        Cmd::Health {
            experiment,
            crash_rate,
            variance_ratio,
        } => cmd_health(
            &experiment,
            HealthThresholds {
                crash_rate,
                run_variance_ratio: variance_ratio,
            },
        ),
        Cmd::Report {
            scenario,
            experiment,
            seeds,
            workers,
            validation_seed,
        } => cmd_report(&scenario, &experiment, seeds, workers, validation_seed, tr),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

pub fn load_scenario(path: &Path, temp_root: Option<&Path>) -> Result<Scenario, String> {
    let mut s = Scenario::parse_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(t) = temp_root {
        s.temp_root = Some(t.to_path_buf());
    }
    Ok(s)
}

fn create_dir(p: &Path) -> Result<(), String> {
    std::fs::create_dir_all(p).map_err(|e| format!("cannot create {}: {e}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn experiment_tag(out: &Path) -> String {
    let name = out
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("exp")
        .replace(|c: char| c.is_whitespace() || c == '/', "_");
    format!("{name}-{}", std::process::id())
}

/// Wraps one call. Returns the RESULT line and the process exit code.
pub fn cmd_wrap(scenario: &Path, call: &[String], tag: &str, temp_root: Option<&Path>) -> (String, i32) {
    let fail = |seed: u64, penalty: f64, msg: String| {
        eprintln!("abort: {msg}");
        (emit_result(&crate::result::RunResult::abort(seed, penalty, msg)), 1)
    };
    let seed_guess = call.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let s = match load_scenario(scenario, temp_root) {
        Ok(s) => s,
        Err(e) => return fail(seed_guess, 0.0, e),
    };
    let penalty = s.metric.penalty(s.cutoff_max);
    let wrapper = match Wrapper::new(Arc::new(s), tag) {
        Ok(w) => w,
        Err(e) => return fail(seed_guess, penalty, e.to_string()),
    };
    let request = match wrapper.parse_call(call) {
        Ok(r) => r,
        Err(e) => return fail(seed_guess, penalty, e.to_string()),
    };
    let result = wrapper.run_request(&request);
    eprintln!(
        "verdict={} exit={}{}",
        serde_json::to_value(result.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        result.exit,
        result.detail.as_ref().map(|d| format!(" detail={d}")).unwrap_or_default()
    );
    for a in &result.anomalies {
        eprintln!("anomaly: {a}");
    }
    let code = if result.status == RunStatus::Abort { 1 } else { 0 };
    (emit_result(&result), code)
}

fn run_one(wrapper: Wrapper, run_seed: u64, dir: &Path) -> Result<ConfigureOutput, ConfigureError> {
    std::fs::create_dir_all(dir)?;
    let mut log = BufWriter::new(File::create(dir.join("runs.jsonl"))?);
    let result = configure_with(wrapper, run_seed, Some(&mut log));
    log.flush()?;
    let traj = match &result {
        Ok(o) => Some(&o.trajectory),
        Err(ConfigureError::Abort { partial, .. }) => Some(&partial.trajectory),
        Err(_) => None,
    };
    if let Some(t) = traj {
        t.write_csv(File::create(dir.join("trajectory.csv"))?)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    result
}

pub fn cmd_run(
    scenario: &Path,
    n_runs: usize,
    run_seed: u64,
    workers: usize,
    out: &Path,
    temp_root: Option<&Path>,
) -> CliResult {
    if n_runs == 0 {
        return Err("--n-runs must be at least 1".into());
    }
    let s = load_scenario(scenario, temp_root)?;
    create_dir(out)?;
    let tag = experiment_tag(out);
    write_json(&out.join("experiment.json"), &json!({ "tag": tag, "n_runs": n_runs, "run_seed": run_seed }))?;
    let train_view = Arc::new(s.training_view());
    let jobs: Vec<(usize, u64)> = (0..n_runs).map(|i| (i, run_seed + i as u64)).collect();
    let go = |&(i, seed): &(usize, u64)| -> Result<ConfigureOutput, String> {
        let wrapper = Wrapper::new(train_view.clone(), format!("{tag}/run-{i}")).map_err(|e| e.to_string())?;
        run_one(wrapper, seed, &out.join(format!("run-{i}"))).map_err(|e| format!("run {i} (seed {seed}): {e}"))
    };
    let results: Vec<Result<ConfigureOutput, String>> = if workers <= 1 {
        jobs.iter().map(go).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| e.to_string())?
            .install(|| jobs.par_iter().map(go).collect())
    };
    let mut outputs = Vec::new();
    for r in results {
        outputs.push(r?);
    }
    let trajectories: Vec<Trajectory> = outputs.iter().map(|o| o.trajectory.clone()).collect();
    let mut finals: Vec<Configuration> = Vec::new();
    for t in &trajectories {
        let c = t.final_incumbent().expect("trajectory starts with the default");
        if !finals.iter().any(|f| f.id() == c.id()) {
            finals.push(c.clone());
        }
    }
    // selection uses training data only, at the full cutoff
    let wrapper = Wrapper::new(train_view.clone(), format!("{tag}/select")).map_err(|e| e.to_string())?;
    let (matrix, _) = validate_configs(
        &wrapper,
        &finals,
        &train_view.train_instances,
        train_view.validation_seeds,
        SetTag::Train,
        run_seed,
        workers,
    )
    .map_err(|e| e.to_string())?;
    let best = select_best_of_n(&trajectories, &matrix).map_err(|e| e.to_string())?;
    let row = matrix.row_of(&best).expect("selected from matrix");
    let chosen_run = trajectories
        .iter()
        .filter(|t| t.final_incumbent().map(|c| c.id()) == Some(best.id()))
        .map(|t| t.run_seed)
        .min();
    write_json(
        &out.join("incumbent.json"),
        &json!({
            "config": best.to_json(),
            "config_id": best.id().to_string(),
            "run_seed": chosen_run,
            "train_cost": matrix.row_aggregate(row),
        }),
    )?;
    println!(
        "incumbent {} train cost {:.6} from {} run(s)",
        best.id(),
        matrix.row_aggregate(row),
        n_runs
    );
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub set: SetTag,
    pub seeds: Option<usize>,
    pub scatter: bool,
    pub with_default: bool,
    pub workers: usize,
    pub validation_seed: u64,
}

/// Reads configurations from a JSON object, array, JSON lines, or an
/// `incumbent.json` (object with a `config` field).
pub fn read_configs(path: &Path, scenario: &Scenario) -> Result<Vec<Configuration>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let values: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Array(items)) => items,
        Ok(v) => vec![v],
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
            .collect::<Result<_, _>>()?,
    };
    values
        .iter()
        .map(|v| {
            let v = v.get("config").unwrap_or(v);
            scenario.space.config_from_json(v).map_err(|e| format!("{}: {e}", path.display()))
        })
        .collect()
}

pub fn cmd_validate(
    scenario: &Path,
    configs: &Path,
    opts: &ValidateOptions,
    out: &Path,
    temp_root: Option<&Path>,
) -> CliResult {
    let s = load_scenario(scenario, temp_root)?;
    let candidates = read_configs(configs, &s)?;
    if candidates.is_empty() {
        return Err("no configurations given".into());
    }
    if opts.set == SetTag::Test && candidates.len() > 1 && !opts.scatter {
        eprintln!(
            "refusing to evaluate {} candidate configurations on the test set: choosing among them with test \
             data would leak it into the selection. Select one configuration on training data (for example with \
             `acharness run`), then test only that one; use --scatter for an explicit train/test scatter analysis.",
            candidates.len()
        );
        return Ok(1);
    }
    let k = opts.seeds.unwrap_or(s.validation_seeds);
    let tag = experiment_tag(out);
    let wrapper = Wrapper::new(Arc::new(s.clone()), format!("{tag}/validate")).map_err(|e| e.to_string())?;
    let mut list = Vec::new();
    let mut labels = Vec::new();
    if opts.with_default {
        list.push(s.space.default_config());
        labels.push("default".to_string());
    }
    for (i, c) in candidates.iter().enumerate() {
        list.push(c.clone());
        labels.push(if candidates.len() == 1 { "candidate".into() } else { format!("candidate-{i}") });
    }

    let validate = |set: SetTag| {
        let instances = match set {
            SetTag::Train => &s.train_instances,
            SetTag::Test => &s.test_instances,
        };
        validate_configs(&wrapper, &list, instances, k, set, opts.validation_seed, opts.workers).map_err(|e| e.to_string())
    };

    let (matrix, mut warnings) = validate(opts.set)?;
    let mut overtuning = None;
    if opts.scatter {
        let (train, test) = match opts.set {
            SetTag::Train => (matrix.clone(), validate(SetTag::Test)?.0),
            SetTag::Test => (validate(SetTag::Train)?.0, matrix.clone()),
        };
        let ids: Vec<String> = list.iter().map(|c| c.id().to_string()).collect();
        let subset = if list.len() >= 10 { Some(0.2) } else { None };
        let report = overtuning_report(&ids, &train.row_aggregates(), &test.row_aggregates(), subset)
            .map_err(|e| e.to_string())?;
        warnings.extend(report.flags.iter().cloned());
        overtuning = Some(report);
    }
    let dir = out.join(matrix.set.as_str());
    create_dir(&dir)?;
    let csv_path = dir.join("validation.csv");
    matrix
        .write_csv(File::create(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?)
        .map_err(|e| e.to_string())?;
    let rows = summarize(&matrix, &labels);
    let report = EvaluationReport {
        set: matrix.set,
        metric: s.metric,
        cutoff_max: s.cutoff_max,
        seeds_per_instance: matrix.columns.len() / matrix.columns.iter().map(|c| &c.instance).collect::<std::collections::BTreeSet<_>>().len().max(1),
        rows: rows.clone(),
        overtuning,
        warnings: warnings.clone(),
        machine: machine_fingerprint(),
    };
    write_json(&dir.join("report.json"), &report)?;
    for r in &rows {
        println!(
            "{:<14} {} {} {:.6} solved {}/{}",
            r.label,
            r.config_id,
            s.metric.name(),
            r.cost,
            r.solved,
            r.runs
        );
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

pub fn cmd_check(scenario: &Path, probe: usize, seed: u64, temp_root: Option<&Path>) -> CliResult {
    let s = load_scenario(scenario, temp_root)?;
    let matrix = if probe > 0 {
        let mut instances = s.train_instances.clone();
        instances.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        instances.truncate(probe);
        let wrapper = Wrapper::new(Arc::new(s.training_view()), "check").map_err(|e| e.to_string())?;
        let (m, _) =
            validate_configs(&wrapper, &[s.space.default_config()], &instances, 1, SetTag::Train, seed, 1)
                .map_err(|e| e.to_string())?;
        Some(m)
    } else {
        None
    };
    let warnings = check_scenario(&s, matrix.as_ref());
    for w in &warnings {
        println!("warning {w}");
    }
    if warnings.is_empty() {
        println!("ok");
        Ok(0)
    } else {
        Ok(1)
    }
}

fn run_dirs(experiment: &Path) -> Result<Vec<PathBuf>, String> {
    let mut dirs: Vec<(usize, PathBuf)> = std::fs::read_dir(experiment)
        .map_err(|e| format!("{}: {e}", experiment.display()))?
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let i = name.strip_prefix("run-")?.parse().ok()?;
            Some((i, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunLogRecord>, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
        .map(|l| {
            let l = l.map_err(|e| e.to_string())?;
            serde_json::from_str(&l).map_err(|e| format!("{}: {e}", path.display()))
        })
        .collect()
}

fn final_train_cost(path: &Path) -> Result<Option<f64>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut last = None;
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        last = row.get(2).and_then(|v| v.parse::<f64>().ok());
    }
    Ok(last)
}

pub fn cmd_health(experiment: &Path, thresholds: HealthThresholds) -> CliResult {
    let mut records = Vec::new();
    let mut finals = Vec::new();
    for dir in run_dirs(experiment)? {
        let log = dir.join("runs.jsonl");
        if log.exists() {
            records.extend(read_run_log(&log)?);
        }
        let traj = dir.join("trajectory.csv");
        if traj.exists() {
            if let Some(c) = final_train_cost(&traj)? {
                finals.push(c);
            }
        }
    }
    let tag = std::fs::read_to_string(experiment.join("experiment.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("tag").and_then(|t| t.as_str()).map(String::from));
    let mut notes = Vec::new();
    let orphans = match &tag {
        Some(t) => scan_orphans(t).unwrap_or_else(|e| {
            notes.push(e);
            Vec::new()
        }),
        None => Vec::new(),
    };
    let mut report = experiment_health(&records, &finals, &orphans, thresholds);
    report.warnings.extend(notes);
    write_json(&experiment.join("health.json"), &report)?;
    for w in &report.warnings {
        println!("warning: {w}");
    }
    for (code, n) in &report.anomaly_counts {
        println!("anomaly {code}: {n}");
    }
    if !report.orphans.is_empty() {
        println!("orphans: {:?}", report.orphans);
    }
    Ok(report.level.exit_code())
}

pub fn cmd_report(
    scenario: &Path,
    experiment: &Path,
    seeds: Option<usize>,
    workers: usize,
    validation_seed: u64,
    temp_root: Option<&Path>,
) -> CliResult {
    let s = load_scenario(scenario, temp_root)?;
    let k = seeds.unwrap_or(s.validation_seeds);
    let wrapper = Wrapper::new(Arc::new(s.clone()), format!("{}/report", experiment_tag(experiment)))
        .map_err(|e| e.to_string())?;
    let mut rows: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (i, dir) in run_dirs(experiment)?.iter().enumerate() {
        let t = Trajectory::read_csv(&dir.join("trajectory.csv"), &s.space, i as u64)?;
        for (slot, set, instances) in [(0, SetTag::Train, &s.train_instances), (1, SetTag::Test, &s.test_instances)] {
            let series = trajectory_validation(&wrapper, &t, instances, k, set, validation_seed, workers)
                .map_err(|e| e.to_string())?;
            for p in series {
                rows[slot].push(format!("{i},{:.6},{},{:.6}", p.elapsed, p.config_id, p.cost));
            }
        }
    }
    for (set, lines) in [("train", &rows[0]), ("test", &rows[1])] {
        let dir = experiment.join(set);
        create_dir(&dir)?;
        let mut text = String::from("run,elapsed_s,config_id,cost\n");
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        let path = dir.join("trajectory_validation.csv");
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("wrote {} and {} points", rows[0].len(), rows[1].len());
    Ok(0)
}
