//! Scenario files and static sanity checks.
//!
//! A scenario is a flat `key = value` text file. Referenced files are resolved
//! relative to the scenario's directory. Instance entries that are relative
//! paths are resolved once at load time; the resolved string is the instance
//! identifier every consumer sees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::cnf::SatAnswer;
use crate::evaluation::CostMatrix;
use crate::result::{Metric, RunStatus};
use crate::space::{ConfigSpace, SpaceError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("train/test overlap: {0}")]
    Overlap(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration space: {0}")]
    Space(#[from] SpaceError),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub runs: Option<u64>,
    pub wallclock: Option<f64>,
}

/// How random seeds are assigned to new (instance, seed) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// A fresh pseudorandom seed for every new pair.
    Managed,
    /// Cycle through `k` pre-drawn seeds. Reproduces seed over-tuning.
    FixedSet(usize),
}

impl fmt::Display for SeedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedPolicy::Managed => f.write_str("managed"),
            SeedPolicy::FixedSet(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl FromStr for SeedPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "managed" {
            return Ok(SeedPolicy::Managed);
        }
        let k = s
            .strip_prefix("fixed:")
            .ok_or_else(|| format!("expected `managed` or `fixed:<k>`, got `{s}`"))?;
        match k.parse::<usize>() {
            Ok(0) => Err("fixed seed set must contain at least one seed".into()),
            Ok(k) => Ok(SeedPolicy::FixedSet(k)),
            Err(_) => Err(format!("bad seed count `{k}`")),
        }
    }
}

/// Which backend executes target commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    /// Spawn real processes under the sandbox.
    Process,
    /// Interpret synthetic fixture command lines in-process.
    Simulated,
}

/// Names of the pluggable wrapper stages. Built-in names are listed in
/// [`crate::wrapper`]; anything else is treated as an executable path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hooks {
    pub command_builder: String,
    pub output_parser: String,
    pub solution_checker: String,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks {
            command_builder: "template".into(),
            output_parser: "exit-code".into(),
            solution_checker: "none".into(),
        }
    }
}

/// Per-parameter rendering patterns for `{params}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamFormat {
    pub default: String,
    pub overrides: BTreeMap<String, String>,
}

impl Default for ParamFormat {
    fn default() -> Self {
        ParamFormat {
            default: "-{name} {value}".into(),
            overrides: BTreeMap::new(),
        }
    }
}

impl ParamFormat {
    pub fn pattern_for(&self, name: &str) -> &str {
        self.overrides.get(name).unwrap_or(&self.default)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Directory of the scenario file; referenced files resolve against it.
    pub source_dir: PathBuf,
    pub command_template: String,
    pub space: ConfigSpace,
    pub train_instances: Vec<String>,
    pub test_instances: Vec<String>,
    pub cutoff_max: f64,
    /// Mebibytes.
    pub memory_limit: f64,
    pub metric: Metric,
    pub budget: Budget,
    pub deterministic: bool,
    pub hooks: Hooks,
    pub param_format: ParamFormat,
    /// Overrides `$TMPDIR` as the root of per-run temp dirs.
    pub temp_root: Option<PathBuf>,
    pub reference_answers: BTreeMap<String, SatAnswer>,
    pub grace: f64,
    pub poll_interval: f64,
    pub seed_policy: SeedPolicy,
    pub capping: bool,
    pub capping_multiplier: f64,
    pub max_seeds_per_instance: usize,
    pub validation_seeds: usize,
    pub executor: ExecutorKind,
}

impl PartialEq for Scenario {
    /// Structural equality; where the scenario was loaded from is not part of it.
    fn eq(&self, o: &Self) -> bool {
        self.command_template == o.command_template
            && self.space == o.space
            && self.train_instances == o.train_instances
            && self.test_instances == o.test_instances
            && self.cutoff_max == o.cutoff_max
            && self.memory_limit == o.memory_limit
            && self.metric == o.metric
            && self.budget == o.budget
            && self.deterministic == o.deterministic
            && self.hooks == o.hooks
            && self.param_format == o.param_format
            && self.temp_root == o.temp_root
            && self.reference_answers == o.reference_answers
            && self.grace == o.grace
            && self.poll_interval == o.poll_interval
            && self.seed_policy == o.seed_policy
            && self.capping == o.capping
            && self.capping_multiplier == o.capping_multiplier
            && self.max_seeds_per_instance == o.max_seeds_per_instance
            && self.validation_seeds == o.validation_seeds
            && self.executor == o.executor
    }
}

const KNOWN_KEYS: &[&str] = &[
    "command",
    "pcs_file",
    "train_instance_file",
    "test_instance_file",
    "cutoff_time",
    "budget_runs",
    "budget_wallclock",
    "metric",
    "memory_limit",
    "worst_quality",
    "deterministic",
    "command_builder",
    "output_parser",
    "solution_checker",
    "param_format",
    "temp_root",
    "reference_answers",
    "grace",
    "poll_interval",
    "seed_policy",
    "capping",
    "capping_multiplier",
    "max_seeds_per_instance",
    "validation_seeds",
    "executor",
];

impl Scenario {
    pub fn parse_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = read(path)?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let dir = if dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            dir
        };
        let dir = dir.canonicalize().map_err(|e| ScenarioError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_str(&text, &dir)
    }

    /// Parses scenario text whose relative paths resolve against `dir`.
    pub fn parse_str(text: &str, dir: &Path) -> Result<Self, ScenarioError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ScenarioError::Syntax {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let known = KNOWN_KEYS.contains(&key.as_str()) || key.starts_with("param_format.");
            if !known {
                return Err(ScenarioError::Syntax {
                    line: idx + 1,
                    message: format!("unknown key `{key}`"),
                });
            }
            if kv.insert(key.clone(), value).is_some() {
                return Err(ScenarioError::Syntax {
                    line: idx + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }

        let required = |key: &'static str| -> Result<&String, ScenarioError> {
            kv.get(key).ok_or(ScenarioError::Missing(key))
        };
        let command_template = required("command")?.clone();
        if command_template.split_whitespace().next().is_none() {
            return Err(invalid("command", "empty command"));
        }
        let pcs_path = resolve(dir, required("pcs_file")?);
        let space = ConfigSpace::parse_file(&pcs_path)?;
        let train_instances =
            read_instances(dir, &resolve(dir, required("train_instance_file")?), "train_instance_file")?;
        let test_instances =
            read_instances(dir, &resolve(dir, required("test_instance_file")?), "test_instance_file")?;

        let cutoff_max = parse_f64(required("cutoff_time")?, "cutoff_time")?;
        if !(cutoff_max > 0.0 && cutoff_max.is_finite()) {
            return Err(invalid("cutoff_time", "must be > 0"));
        }
        let memory_limit = parse_f64(required("memory_limit")?, "memory_limit")?;
        if !(memory_limit > 0.0) {
            return Err(invalid("memory_limit", "must be > 0"));
        }
        let worst_quality = kv
            .get("worst_quality")
            .map(|s| parse_f64(s, "worst_quality"))
            .transpose()?;
        let metric = match required("metric")?.as_str() {
            "runtime_par10" => Metric::RuntimePar10,
            "runtime_par1" => Metric::RuntimePar1,
            "quality" => Metric::Quality {
                worst: worst_quality
                    .ok_or_else(|| invalid("worst_quality", "required for the quality metric"))?,
            },
            other => return Err(invalid("metric", format!("unknown metric `{other}`"))),
        };

        let budget = Budget {
            runs: kv
                .get("budget_runs")
                .map(|s| s.parse::<u64>().map_err(|_| invalid("budget_runs", format!("`{s}`"))))
                .transpose()?,
            wallclock: kv
                .get("budget_wallclock")
                .map(|s| parse_f64(s, "budget_wallclock"))
                .transpose()?,
        };
        if budget.runs.is_none() && budget.wallclock.is_none() {
            return Err(ScenarioError::Missing("budget_runs or budget_wallclock"));
        }
        if budget.wallclock.is_some_and(|w| !(w >= 0.0)) {
            return Err(invalid("budget_wallclock", "must be >= 0"));
        }

        let deterministic = kv
            .get("deterministic")
            .map(|s| parse_bool(s, "deterministic"))
            .transpose()?
            .unwrap_or(false);

        let hook = |key: &str, default: &str| -> String {
            match kv.get(key) {
                None => default.to_string(),
                Some(name) => {
                    // paths to external hooks resolve like every other file
                    if name.contains('/') {
                        resolve(dir, name).display().to_string()
                    } else {
                        name.clone()
                    }
                }
            }
        };
        let hooks = Hooks {
            command_builder: hook("command_builder", "template"),
            output_parser: hook("output_parser", "exit-code"),
            solution_checker: hook("solution_checker", "none"),
        };

        let mut param_format = ParamFormat::default();
        for (k, v) in &kv {
            if k == "param_format" {
                param_format.default = v.clone();
            } else if let Some(name) = k.strip_prefix("param_format.") {
                if space.get(name).is_none() {
                    return Err(invalid(k, format!("no parameter named `{name}`")));
                }
                param_format.overrides.insert(name.to_string(), v.clone());
            }
        }
        for pattern in std::iter::once(&param_format.default).chain(param_format.overrides.values()) {
            if !pattern.contains("{value}") && !pattern.contains("{name}") {
                return Err(invalid("param_format", format!("`{pattern}` uses neither {{name}} nor {{value}}")));
            }
        }

        let reference_answers = match kv.get("reference_answers") {
            None => BTreeMap::new(),
            Some(p) => read_answers(dir, &resolve(dir, p))?,
        };

        let positive = |key: &str, default: f64| -> Result<f64, ScenarioError> {
            let v = kv.get(key).map(|s| parse_f64(s, key)).transpose()?.unwrap_or(default);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(invalid(key, "must be > 0"))
            }
        };
        let grace = positive("grace", 2.0)?;
        let poll_interval = positive("poll_interval", 0.1)?;
        if poll_interval > 0.5 {
            return Err(invalid("poll_interval", "must be at most 0.5 s"));
        }
        let capping_multiplier = positive("capping_multiplier", 2.0)?;
        if capping_multiplier < 1.0 {
            return Err(invalid("capping_multiplier", "must be >= 1"));
        }
        let seed_policy = kv
            .get("seed_policy")
            .map(|s| s.parse::<SeedPolicy>().map_err(|m| invalid("seed_policy", m)))
            .transpose()?
            .unwrap_or(SeedPolicy::Managed);
        let capping = kv
            .get("capping")
            .map(|s| parse_bool(s, "capping"))
            .transpose()?
            .unwrap_or(metric.is_runtime());
        let count = |key: &str, default: usize| -> Result<usize, ScenarioError> {
            match kv.get(key) {
                None => Ok(default),
                Some(s) => match s.parse::<usize>() {
                    Ok(0) | Err(_) => Err(invalid(key, format!("expected a positive integer, got `{s}`"))),
                    Ok(v) => Ok(v),
                },
            }
        };
        let max_seeds_per_instance = count("max_seeds_per_instance", 5)?;
        let validation_seeds = count("validation_seeds", if deterministic { 1 } else { 5 })?;
        let executor = match kv.get("executor").map(String::as_str) {
            None | Some("process") => ExecutorKind::Process,
            Some("simulated") => ExecutorKind::Simulated,
            Some(other) => return Err(invalid("executor", format!("unknown executor `{other}`"))),
        };
        let temp_root = kv.get("temp_root").map(|p| resolve(dir, p));

        let scenario = Scenario {
            source_dir: dir.to_path_buf(),
            command_template,
            space,
            train_instances,
            test_instances,
            cutoff_max,
            memory_limit,
            metric,
            budget,
            deterministic,
            hooks,
            param_format,
            temp_root,
            reference_answers,
            grace,
            poll_interval,
            seed_policy,
            capping,
            capping_multiplier,
            max_seeds_per_instance,
            validation_seeds,
            executor,
        };
        scenario.check_invariants()?;
        Ok(scenario)
    }

    pub fn check_invariants(&self) -> Result<(), ScenarioError> {
        if self.train_instances.is_empty() {
            return Err(invalid("train_instance_file", "no instances"));
        }
        let train: BTreeSet<&String> = self.train_instances.iter().collect();
        if train.len() != self.train_instances.len() {
            return Err(invalid("train_instance_file", "duplicate instance"));
        }
        let test: BTreeSet<&String> = self.test_instances.iter().collect();
        if test.len() != self.test_instances.len() {
            return Err(invalid("test_instance_file", "duplicate instance"));
        }
        if let Some(shared) = train.intersection(&test).next() {
            return Err(ScenarioError::Overlap(shared.to_string()));
        }
        if !(self.cutoff_max > 0.0) {
            return Err(invalid("cutoff_time", "must be > 0"));
        }
        if self.budget.runs.is_none() && self.budget.wallclock.is_none() {
            return Err(ScenarioError::Missing("budget_runs or budget_wallclock"));
        }
        Ok(())
    }

    /// The same scenario with the test set removed. Everything that searches
    /// for configurations works on this view only.
    pub fn training_view(&self) -> Scenario {
        let mut s = self.clone();
        s.test_instances.clear();
        s
    }

    pub fn contains_instance(&self, instance: &str) -> bool {
        self.train_instances.iter().any(|i| i == instance)
            || self.test_instances.iter().any(|i| i == instance)
    }

    /// Looks up an instance given either its identifier or the path as written
    /// relative to the scenario directory.
    pub fn resolve_instance(&self, raw: &str) -> Option<String> {
        if self.contains_instance(raw) {
            return Some(raw.to_string());
        }
        let resolved = resolve(&self.source_dir, raw).display().to_string();
        self.contains_instance(&resolved).then_some(resolved)
    }

    pub fn temp_root(&self) -> PathBuf {
        self.temp_root.clone().unwrap_or_else(std::env::temp_dir)
    }

    /// Writes the scenario and its referenced files into `dir`, returning the
    /// scenario file path.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("space.pcs"), self.space.to_pcs_string())?;
        std::fs::write(dir.join("train.txt"), lines(&self.train_instances))?;
        std::fs::write(dir.join("test.txt"), lines(&self.test_instances))?;
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k} = {v}\n"));
        put("command", &self.command_template);
        put("pcs_file", &"space.pcs");
        put("train_instance_file", &"train.txt");
        put("test_instance_file", &"test.txt");
        put("cutoff_time", &self.cutoff_max);
        if let Some(r) = self.budget.runs {
            put("budget_runs", &r);
        }
        if let Some(w) = self.budget.wallclock {
            put("budget_wallclock", &w);
        }
        put("metric", &self.metric.name());
        if let Metric::Quality { worst } = self.metric {
            put("worst_quality", &worst);
        }
        put("memory_limit", &self.memory_limit);
        put("deterministic", &self.deterministic);
        put("command_builder", &self.hooks.command_builder);
        put("output_parser", &self.hooks.output_parser);
        put("solution_checker", &self.hooks.solution_checker);
        put("param_format", &self.param_format.default);
        for (name, pattern) in &self.param_format.overrides {
            put(&format!("param_format.{name}"), pattern);
        }
        if let Some(t) = &self.temp_root {
            put("temp_root", &t.display());
        }
        if !self.reference_answers.is_empty() {
            let body: String = self
                .reference_answers
                .iter()
                .map(|(i, a)| format!("{i} {a}\n"))
                .collect();
            std::fs::write(dir.join("answers.txt"), body)?;
            put("reference_answers", &"answers.txt");
        }
        put("grace", &self.grace);
        put("poll_interval", &self.poll_interval);
        put("seed_policy", &self.seed_policy);
        put("capping", &self.capping);
        put("capping_multiplier", &self.capping_multiplier);
        put("max_seeds_per_instance", &self.max_seeds_per_instance);
        put("validation_seeds", &self.validation_seeds);
        put(
            "executor",
            &match self.executor {
                ExecutorKind::Process => "process",
                ExecutorKind::Simulated => "simulated",
            },
        );
        let path = dir.join("scenario.txt");
        std::fs::write(&path, out)?;
        Ok(path)
    }
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn resolve(dir: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn read_instances(dir: &Path, file: &Path, field: &str) -> Result<Vec<String>, ScenarioError> {
    let text = read(file)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let entry = line.trim();
        if entry.is_empty() {
            continue;
        }
        let path = resolve(dir, entry);
        if !path.exists() {
            return Err(invalid(field, format!("instance `{entry}` does not exist")));
        }
        out.push(path.display().to_string());
    }
    Ok(out)
}

fn read_answers(dir: &Path, file: &Path) -> Result<BTreeMap<String, SatAnswer>, ScenarioError> {
    let text = read(file)?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (inst, answer) = line.rsplit_once(char::is_whitespace).ok_or_else(|| {
            invalid("reference_answers", format!("line {}: expected `<instance> SAT|UNSAT`", idx + 1))
        })?;
        let answer = answer
            .parse::<SatAnswer>()
            .map_err(|m| invalid("reference_answers", format!("line {}: {m}", idx + 1)))?;
        out.insert(resolve(dir, inst.trim()).display().to_string(), answer);
    }
    Ok(out)
}

fn parse_f64(s: &str, field: &str) -> Result<f64, ScenarioError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| invalid(field, format!("`{s}` is not a number")))
}

fn parse_bool(s: &str, field: &str) -> Result<bool, ScenarioError> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(invalid(field, format!("`{other}` is not a boolean"))),
    }
}

// ---------------------------------------------------------------------------
// Static checks
// ---------------------------------------------------------------------------

/// Fraction of training instances the default should solve within the cutoff.
pub const MIN_DEFAULT_SOLVED_FRACTION: f64 = 0.75;
/// Budget should cover at least this many default-configuration runs.
pub const MIN_BUDGET_DEFAULT_RUNS: f64 = 200.0;
pub const MIN_TRAIN_INSTANCES: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    LowDefaultSolvability,
    SmallBudget,
    SmallTrainingSet,
    SingleValidationSeed,
    FixedSeedSet,
}

impl WarningCode {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningCode::LowDefaultSolvability => "low_default_solvability",
            WarningCode::SmallBudget => "small_budget",
            WarningCode::SmallTrainingSet => "small_training_set",
            WarningCode::SingleValidationSeed => "single_validation_seed",
            WarningCode::FixedSeedSet => "fixed_seed_set",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioWarning {
    pub code: WarningCode,
    pub message: String,
}

impl fmt::Display for ScenarioWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

/// Setup recommendations as warnings. `probe` holds default-configuration
/// runs on a sample of training instances, when available.
pub fn check_scenario(scenario: &Scenario, probe: Option<&CostMatrix>) -> Vec<ScenarioWarning> {
    let mut out = Vec::new();
    let mut mean_default_runtime = None;
    if let Some(probe) = probe.filter(|p| p.cell_count() > 0) {
        let cells = probe.all_cells();
        let solved = cells.iter().filter(|c| c.status == RunStatus::Success).count();
        let frac = solved as f64 / cells.len() as f64;
        if frac < MIN_DEFAULT_SOLVED_FRACTION {
            out.push(ScenarioWarning {
                code: WarningCode::LowDefaultSolvability,
                message: format!(
                    "default configuration solved {:.0}% of {} probed training instances; \
                     choose instances and cutoff so that roughly 75% or more are solved",
                    frac * 100.0,
                    cells.len()
                ),
            });
        }
        let total: f64 = cells
            .iter()
            .map(|c| c.cpu_time.min(scenario.cutoff_max))
            .sum();
        mean_default_runtime = Some(total / cells.len() as f64);
    }

    match (scenario.budget.wallclock, mean_default_runtime) {
        (Some(wall), Some(mean)) => {
            let needed = MIN_BUDGET_DEFAULT_RUNS * mean;
            if wall < needed {
                out.push(ScenarioWarning {
                    code: WarningCode::SmallBudget,
                    message: format!(
                        "budget of {wall:.1}s covers {:.0} default runs (mean {mean:.3}s); \
                         rule of thumb is the default's runtime on 200 to 1000 instances",
                        wall / mean.max(f64::MIN_POSITIVE)
                    ),
                });
            }
        }
        _ => {
            if let Some(runs) = scenario.budget.runs {
                if (runs as f64) < MIN_BUDGET_DEFAULT_RUNS {
                    out.push(ScenarioWarning {
                        code: WarningCode::SmallBudget,
                        message: format!(
                            "budget of {runs} runs is below the default's runtime on 200 to 1000 instances"
                        ),
                    });
                }
            }
        }
    }

    let n_train = scenario.train_instances.len();
    if n_train < MIN_TRAIN_INSTANCES {
        out.push(ScenarioWarning {
            code: WarningCode::SmallTrainingSet,
            message: format!(
                "{n_train} training instances; heterogeneous sets need at least 300 (better 1000+)"
            ),
        });
    }
    if !scenario.deterministic && scenario.validation_seeds == 1 {
        out.push(ScenarioWarning {
            code: WarningCode::SingleValidationSeed,
            message: "stochastic target validated with a single seed per instance; \
                      use several seeds per test instance"
                .into(),
        });
    }
    if !scenario.deterministic {
        if let SeedPolicy::FixedSet(k) = scenario.seed_policy {
            out.push(ScenarioWarning {
                code: WarningCode::FixedSeedSet,
                message: format!(
                    "configuring a stochastic target on a fixed set of {k} seed(s) over-tunes to those seeds"
                ),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    pub(crate) fn fixture_dir(n_train: usize, n_test: usize, extra: &str) -> (TempDir, PathBuf) {
        let dir = TempDir::new().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("inst")).unwrap();
        let mut train = String::new();
        let mut test = String::new();
        for i in 0..n_train {
            std::fs::write(root.join(format!("inst/tr{i}.cnf")), "p cnf 1 0\n").unwrap();
            train.push_str(&format!("inst/tr{i}.cnf\n\n"));
        }
        for i in 0..n_test {
            std::fs::write(root.join(format!("inst/te{i}.cnf")), "p cnf 1 0\n").unwrap();
            test.push_str(&format!("inst/te{i}.cnf\n"));
        }
        std::fs::write(root.join("train.txt"), train).unwrap();
        std::fs::write(root.join("test.txt"), test).unwrap();
        std::fs::write(root.join("space.pcs"), "x real [0,1] default 0.5\n").unwrap();
        let text = format!(
            "# minimal\ncommand = solver {{params}} {{instance}}\npcs_file = space.pcs\n\
             train_instance_file = train.txt\ntest_instance_file = test.txt\n\
             cutoff_time = 300\nbudget_runs = 1000\nmetric = runtime_par10\nmemory_limit = 1024\n{extra}"
        );
        let path = root.join("scenario.txt");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_scenario() {
        let (_d, path) = fixture_dir(2, 2, "");
        let s = Scenario::parse_file(&path).unwrap();
        assert_eq!(s.cutoff_max, 300.0);
        assert_eq!(s.train_instances.len(), 2);
        assert_eq!(s.test_instances.len(), 2);
        assert!(s.train_instances[0].ends_with("inst/tr0.cnf"));
        assert!(Path::new(&s.train_instances[0]).is_absolute());
        assert_eq!(s.metric, Metric::RuntimePar10);
        assert!(s.capping);
        assert_eq!(s.grace, 2.0);
    }

    #[test]
    fn overlap_is_rejected() {
        let (d, path) = fixture_dir(2, 2, "");
        std::fs::write(d.path().join("test.txt"), "inst/te0.cnf\ninst/tr1.cnf\n").unwrap();
        let err = Scenario::parse_file(&path).unwrap_err();
        assert!(err.to_string().contains("train/test overlap"), "{err}");
    }

    #[test]
    fn errors_name_the_field() {
        let (d, path) = fixture_dir(2, 2, "");
        let base = std::fs::read_to_string(&path).unwrap();
        let cases = [
            ("cutoff_time = 300", "cutoff_time = 0", "cutoff_time"),
            ("budget_runs = 1000\n", "", "budget_runs or budget_wallclock"),
            ("metric = runtime_par10", "metric = quality", "worst_quality"),
            ("memory_limit = 1024", "memory_limit = lots", "memory_limit"),
        ];
        for (from, to, needle) in cases {
            std::fs::write(&path, base.replace(from, to)).unwrap();
            let err = Scenario::parse_file(&path).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} lacks {needle}");
        }
        std::fs::write(&path, format!("{base}bogus = 1\n")).unwrap();
        let err = Scenario::parse_file(&path).unwrap_err();
        assert!(err.to_string().contains("line 10"), "{err}");
        std::fs::write(d.path().join("train.txt"), "inst/missing.cnf\n").unwrap();
        std::fs::write(&path, &base).unwrap();
        let err = Scenario::parse_file(&path).unwrap_err();
        assert!(err.to_string().contains("train_instance_file"), "{err}");
    }

    #[test]
    fn round_trip_through_files() {
        let (d, path) = fixture_dir(3, 2, "seed_policy = fixed:3\nparam_format = -{name}={value}\nparam_format.x = --x {value}\nvalidation_seeds = 7\n");
        let s = Scenario::parse_file(&path).unwrap();
        let out = d.path().join("copy");
        let written = s.write_to_dir(&out).unwrap();
        let back = Scenario::parse_file(&written).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn seed_policy_parsing() {
        assert_eq!("managed".parse::<SeedPolicy>(), Ok(SeedPolicy::Managed));
        assert_eq!("fixed:10".parse::<SeedPolicy>(), Ok(SeedPolicy::FixedSet(10)));
        assert!("fixed:0".parse::<SeedPolicy>().is_err());
        assert!("random".parse::<SeedPolicy>().is_err());
    }

    #[test]
    fn relative_instances_resolve_either_way() {
        let (_d, path) = fixture_dir(2, 1, "");
        let s = Scenario::parse_file(&path).unwrap();
        assert_eq!(s.resolve_instance("inst/te0.cnf"), Some(s.test_instances[0].clone()));
        assert_eq!(s.resolve_instance(&s.train_instances[1]), Some(s.train_instances[1].clone()));
        assert_eq!(s.resolve_instance("inst/zz.cnf"), None);
        assert!(s.training_view().test_instances.is_empty());
    }
}
