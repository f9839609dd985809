//! Synthetic target algorithms with closed-form cost landscapes.
//!
//! The same argv is understood by the spawnable `acfixture` binary and by
//! [`SimulatedTarget`], which computes the outcome in-process. Both derive
//! everything from [`FixtureArgs`] and [`plan`], so they cannot disagree about
//! what a run should cost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnf::Cnf;
use crate::result::ExitStatus;
use crate::sandbox::{Executor, LimitHit, RawRunOutcome, ResourceLimits, SandboxError, TerminationReport};
use crate::space::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeKind {
    QuadraticBowl,
    SeedNoise,
    InstanceShift,
    Heterogeneous,
}

fn default_sharpness() -> f64 {
    1.0
}

fn one() -> f64 {
    1.0
}

/// A closed-form runtime model. Instances are keyed by file name so that the
/// same landscape works for relative and absolute instance paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub kind: LandscapeKind,
    /// θ* for the numeric parameters the landscape depends on.
    #[serde(default)]
    pub optimum: BTreeMap<String, f64>,
    /// Parameter ranges, used to place per-instance optima. Default [0, 1].
    #[serde(default)]
    pub ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub instance_hardness: BTreeMap<String, f64>,
    /// Hardness of unlisted instances is `exp(spread * u)`, u in [-1, 1].
    #[serde(default)]
    pub hardness_spread: f64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub shifted_optimum: BTreeMap<String, f64>,
    #[serde(default)]
    pub shifted_instances: BTreeSet<String>,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    #[serde(default = "one")]
    pub scale: f64,
    /// Mixed into every hash so that repetitions can differ.
    #[serde(default)]
    pub salt: String,
}

impl Landscape {
    pub fn new(kind: LandscapeKind, optimum: BTreeMap<String, f64>) -> Self {
        Landscape {
            kind,
            optimum,
            ranges: BTreeMap::new(),
            instance_hardness: BTreeMap::new(),
            hardness_spread: 0.0,
            noise_scale: 0.0,
            shifted_optimum: BTreeMap::new(),
            shifted_instances: BTreeSet::new(),
            sharpness: 1.0,
            scale: 1.0,
            salt: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("landscape serializes"))
    }

    pub fn hardness(&self, instance: &str) -> f64 {
        let key = instance_key(instance);
        if let Some(h) = self.instance_hardness.get(key) {
            return *h;
        }
        if self.hardness_spread == 0.0 {
            return 1.0;
        }
        let u = 2.0 * hash_unit(&["hardness", &self.salt, key]) - 1.0;
        (self.hardness_spread * u).exp()
    }

    fn range(&self, name: &str) -> [f64; 2] {
        self.ranges.get(name).copied().unwrap_or([0.0, 1.0])
    }

    /// Per-instance optimum of the heterogeneous landscape.
    pub fn instance_optimum(&self, instance: &str) -> BTreeMap<String, f64> {
        let key = instance_key(instance);
        self.optimum
            .keys()
            .map(|name| {
                let [lo, hi] = self.range(name);
                let u = hash_unit(&["optimum", &self.salt, key, name]);
                (name.clone(), lo + u * (hi - lo))
            })
            .collect()
    }
}

/// The part of an instance identifier a landscape keys on.
pub fn instance_key(instance: &str) -> &str {
    Path::new(instance)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(instance)
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().into()
}

fn hash_unit(parts: &[&str]) -> f64 {
    let d = digest(parts);
    let x = u64::from_le_bytes(d[..8].try_into().unwrap());
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn hash_normal(parts: &[&str]) -> f64 {
    let mut rng = ChaCha8Rng::from_seed(digest(parts));
    rng.sample(StandardNormal)
}

fn squared_distance(
    values: &BTreeMap<String, f64>,
    optimum: &BTreeMap<String, f64>,
    scale: impl Fn(&str) -> f64,
) -> f64 {
    optimum
        .iter()
        .map(|(name, star)| match values.get(name) {
            Some(v) => ((v - star) / scale(name)).powi(2),
            // an inactive parameter is as far as one full unit
            None => 1.0,
        })
        .sum()
}

/// Closed-form runtime in seconds of a configuration, given as the strings a
/// target would receive on its command line.
pub fn synth_runtime(
    landscape: &Landscape,
    params: &BTreeMap<String, String>,
    instance: &str,
    seed: u64,
) -> Result<f64, String> {
    let mut values = BTreeMap::new();
    for name in landscape.optimum.keys() {
        if let Some(raw) = params.get(name) {
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("parameter {name}: `{raw}` is not numeric"))?;
            if !v.is_finite() {
                return Err(format!("parameter {name}: `{raw}` is not finite"));
            }
            values.insert(name.clone(), v);
        }
    }
    let h = landscape.hardness(instance) * landscape.scale;
    let key = instance_key(instance);
    let bowl = |opt: &BTreeMap<String, f64>| h * (1.0 + squared_distance(&values, opt, |_| 1.0));
    let r = match landscape.kind {
        LandscapeKind::QuadraticBowl => bowl(&landscape.optimum),
        LandscapeKind::InstanceShift => {
            if landscape.shifted_instances.contains(key) {
                bowl(&landscape.shifted_optimum)
            } else {
                bowl(&landscape.optimum)
            }
        }
        LandscapeKind::SeedNoise => {
            let base = bowl(&landscape.optimum);
            let sigma = landscape.noise_scale;
            if sigma == 0.0 {
                base
            } else {
                // the draw depends on configuration and seed only
                let theta: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let joined = theta.join(",");
                let seed = seed.to_string();
                let z = hash_normal(&["noise", &landscape.salt, &joined, &seed]);
                base * (sigma * z - 0.5 * sigma * sigma).exp()
            }
        }
        LandscapeKind::Heterogeneous => {
            let opt = landscape.instance_optimum(instance);
            let d = squared_distance(&values, &opt, |name| {
                let [lo, hi] = landscape.range(name);
                hi - lo
            });
            h * (landscape.sharpness * d).exp()
        }
    };
    Ok(r)
}

/// Convenience form of [`synth_runtime`] for a [`Configuration`].
pub fn synth_runtime_config(
    landscape: &Landscape,
    config: &Configuration,
    instance: &str,
    seed: u64,
) -> Result<f64, String> {
    synth_runtime(landscape, &config.string_values(), instance, seed)
}

// ---------------------------------------------------------------------------
// Fixture behaviour
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureMode {
    Honest,
    /// Ignores SIGTERM.
    IgnoreKill,
    /// Leaves a detached busy child in its own session that ignores SIGTERM.
    ForkEscape,
    /// Prints a negative self-reported runtime.
    LieRuntime,
    /// Always claims the wrong satisfiability answer.
    WrongAnswer,
    /// Allocates memory until stopped.
    MemoryHog,
    /// Aborts.
    Crash,
}

impl FromStr for FixtureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "honest" => FixtureMode::Honest,
            "ignore_kill" => FixtureMode::IgnoreKill,
            "fork_escape" => FixtureMode::ForkEscape,
            "lie_runtime" => FixtureMode::LieRuntime,
            "wrong_answer" => FixtureMode::WrongAnswer,
            "memory_hog" => FixtureMode::MemoryHog,
            "crash" => FixtureMode::Crash,
            other => return Err(format!("unknown fixture mode `{other}`")),
        })
    }
}

impl fmt::Display for FixtureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixtureMode::Honest => "honest",
            FixtureMode::IgnoreKill => "ignore_kill",
            FixtureMode::ForkEscape => "fork_escape",
            FixtureMode::LieRuntime => "lie_runtime",
            FixtureMode::WrongAnswer => "wrong_answer",
            FixtureMode::MemoryHog => "memory_hog",
            FixtureMode::Crash => "crash",
        })
    }
}

/// Fixture command line: `--flag value` options plus `-name value`
/// target parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureArgs {
    pub mode: FixtureMode,
    pub landscape: Option<PathBuf>,
    pub runtime: Option<f64>,
    /// Sleep instead of burning CPU.
    pub sleep: bool,
    /// Print only the landscape value, as a quality target would.
    pub report_quality: bool,
    pub instance: Option<String>,
    pub seed: u64,
    pub cnf: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
}

impl FixtureArgs {
    pub fn parse(args: &[String]) -> Result<Self, String> {
        let mut out = FixtureArgs {
            mode: FixtureMode::Honest,
            landscape: None,
            runtime: None,
            sleep: false,
            report_quality: false,
            instance: None,
            seed: 0,
            cnf: None,
            params: BTreeMap::new(),
        };
        let mut it = args.iter();
        while let Some(tok) = it.next() {
            let mut value = |flag: &str| {
                it.next()
                    .cloned()
                    .ok_or_else(|| format!("{flag} needs a value"))
            };
            match tok.as_str() {
                "--mode" => out.mode = value("--mode")?.parse()?,
                "--landscape" => out.landscape = Some(PathBuf::from(value("--landscape")?)),
                "--runtime" => {
                    let v = value("--runtime")?;
                    out.runtime = Some(v.parse().map_err(|_| format!("bad runtime `{v}`"))?);
                }
                "--sleep" => out.sleep = true,
                "--report-quality" => out.report_quality = true,
                "--instance" => out.instance = Some(value("--instance")?),
                "--seed" => {
                    let v = value("--seed")?;
                    out.seed = v.parse().map_err(|_| format!("bad seed `{v}`"))?;
                }
                "--cnf" => out.cnf = Some(PathBuf::from(value("--cnf")?)),
                t if t.starts_with("--") => return Err(format!("unknown fixture flag `{t}`")),
                t if t.starts_with('-') && t.len() > 1 => {
                    let name = t[1..].to_string();
                    let v = value(t)?;
                    out.params.insert(name, v);
                }
                t => return Err(format!("unexpected argument `{t}`")),
            }
        }
        Ok(out)
    }
}

/// What a fixture run will do.
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePlan {
    pub mode: FixtureMode,
    /// Seconds of CPU to burn (or to sleep with `sleep`).
    pub runtime: f64,
    pub sleep: bool,
    /// Printed after the work is done.
    pub stdout: String,
}

pub fn plan(args: &FixtureArgs) -> Result<FixturePlan, String> {
    let value = match (&args.runtime, &args.landscape) {
        (Some(r), _) => *r,
        (None, Some(path)) => {
            let landscape = Landscape::load(path)?;
            let instance = args.instance.as_deref().unwrap_or("");
            synth_runtime(&landscape, &args.params, instance, args.seed)?
        }
        (None, None) => 0.0,
    };
    let (runtime, mut stdout) = if args.report_quality {
        (0.0, format!("{value}\n"))
    } else {
        (value, String::new())
    };
    let cnf = args.cnf.as_ref().map(|p| Cnf::parse_file(p)).transpose().map_err(|e| e.to_string())?;
    match args.mode {
        FixtureMode::WrongAnswer => {
            let satisfiable = cnf.as_ref().map(|c| c.solve().is_some()).unwrap_or(true);
            if satisfiable {
                stdout.push_str("s UNSATISFIABLE\n");
            } else {
                stdout.push_str("s SATISFIABLE\nv 1 0\n");
            }
        }
        FixtureMode::Crash => stdout = "c about to crash\n".into(),
        _ => {
            if let Some(cnf) = &cnf {
                match cnf.solve() {
                    Some(model) => {
                        stdout.push_str("s SATISFIABLE\nv");
                        for (v, &b) in model.iter().enumerate().skip(1) {
                            let lit = if b { v as i64 } else { -(v as i64) };
                            stdout.push_str(&format!(" {lit}"));
                        }
                        stdout.push_str(" 0\n");
                    }
                    None => stdout.push_str("s UNSATISFIABLE\n"),
                }
            }
        }
    }
    if !args.report_quality {
        let reported = if args.mode == FixtureMode::LieRuntime { -4.2 } else { runtime };
        stdout.push_str(&format!("runtime {reported}\n"));
    }
    Ok(FixturePlan {
        mode: args.mode,
        runtime,
        sleep: args.sleep,
        stdout,
    })
}

/// Executes fixture commands in-process from their closed-form plan.
///
/// A run that would exceed `cpu_cutoff` is reported as cut off at exactly the
/// cutoff, so trajectories are reproducible bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedTarget;

pub const FIXTURE_BIN: &str = "acfixture";

impl Executor for SimulatedTarget {
    fn execute(
        &self,
        argv: &[String],
        limits: &ResourceLimits,
        workdir: &Path,
        _env: &BTreeMap<String, String>,
        _tag: &str,
    ) -> Result<RawRunOutcome, SandboxError> {
        limits.validate()?;
        let program = argv.first().ok_or(SandboxError::EmptyCommand)?;
        if Path::new(program).file_name().and_then(|s| s.to_str()) != Some(FIXTURE_BIN) {
            return Err(SandboxError::Spawn {
                program: program.clone(),
                message: "the simulated executor only runs fixture commands".into(),
            });
        }
        let spawn_err = |message: String| SandboxError::Spawn {
            program: program.clone(),
            message,
        };
        let args = FixtureArgs::parse(&argv[1..]).map_err(spawn_err)?;
        let p = plan(&args).map_err(|m| SandboxError::Spawn {
            program: program.clone(),
            message: m,
        })?;

        let mut out = RawRunOutcome {
            exit: ExitStatus::Code(0),
            cpu_time: if p.sleep { 0.0 } else { p.runtime },
            wall_time: p.runtime,
            max_memory: 1.0,
            stdout_path: workdir.join("stdout.log"),
            stderr_path: workdir.join("stderr.log"),
            limit_hit: LimitHit::None,
            orphan_count_after: 0,
            termination: TerminationReport::default(),
        };
        let mut stdout = p.stdout.clone();
        let killed = if p.mode == FixtureMode::IgnoreKill {
            libc::SIGKILL
        } else {
            libc::SIGTERM
        };
        match p.mode {
            FixtureMode::Crash => {
                out.exit = ExitStatus::Signal(libc::SIGABRT);
                out.cpu_time = 0.0;
                out.wall_time = 0.0;
            }
            FixtureMode::MemoryHog => {
                out.limit_hit = LimitHit::Memory;
                out.max_memory = limits.memory_limit * 1.01;
                out.exit = ExitStatus::Signal(libc::SIGTERM);
                out.cpu_time = 0.0;
                out.wall_time = 0.0;
                stdout.clear();
            }
            _ if !p.sleep && p.runtime >= limits.cpu_cutoff => {
                out.limit_hit = LimitHit::Cpu;
                out.cpu_time = limits.cpu_cutoff;
                out.wall_time = limits.cpu_cutoff;
                out.exit = ExitStatus::Signal(killed);
                stdout.clear();
            }
            _ if p.sleep && p.runtime >= limits.wall_cutoff => {
                out.limit_hit = LimitHit::Wall;
                out.wall_time = limits.wall_cutoff;
                out.exit = ExitStatus::Signal(killed);
                stdout.clear();
            }
            _ => {}
        }
        std::fs::write(&out.stdout_path, stdout)?;
        std::fs::write(&out.stderr_path, "")?;
        std::fs::write(
            workdir.join("watcher.log"),
            format!(
                "VERDICT limit_hit={} cpu={:.3} wall={:.3} mem={:.1}\n",
                out.limit_hit.as_str(),
                out.cpu_time,
                out.wall_time,
                out.max_memory
            ),
        )?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Running as a real process (used by the acfixture binary)
// ---------------------------------------------------------------------------

fn process_cpu() -> f64 {
    // SAFETY: all-zero is a valid timespec and the pointer is valid.
    let mut ts: libc::timespec = unsafe { std::mem::zeroed() };
    unsafe {
        libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts);
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// Burns `seconds` of process CPU time, giving up after `wall_bound` seconds
/// of wallclock.
pub fn burn_cpu(seconds: f64, wall_bound: f64) {
    let start = std::time::Instant::now();
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    while process_cpu() < seconds && start.elapsed().as_secs_f64() < wall_bound {
        for _ in 0..10_000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
        }
        std::hint::black_box(x);
    }
}

fn ignore_sigterm() {
    // SAFETY: installing SIG_IGN is always sound.
    unsafe {
        libc::signal(libc::SIGTERM, libc::SIG_IGN);
    }
}

/// Escaped children stop on their own after this long so a broken sandbox
/// cannot leave them running forever.
pub const ESCAPEE_LIFETIME: f64 = 60.0;

/// Carries out `plan` in the current process. Returns the exit code.
pub fn run_fixture(plan: &FixturePlan) -> i32 {
    use std::io::Write;
    let work = |seconds: f64| {
        if plan.sleep {
            std::thread::sleep(std::time::Duration::from_secs_f64(seconds.max(0.0)));
        } else {
            burn_cpu(seconds, f64::INFINITY);
        }
    };
    match plan.mode {
        FixtureMode::Crash => {
            print!("{}", plan.stdout);
            let _ = std::io::stdout().flush();
            std::process::abort();
        }
        FixtureMode::MemoryHog => {
            let mut hoard: Vec<Vec<u8>> = Vec::new();
            let start = std::time::Instant::now();
            while start.elapsed().as_secs_f64() < ESCAPEE_LIFETIME {
                if hoard.len() < 512 {
                    hoard.push(vec![1u8; 16 << 20]);
                }
                std::thread::sleep(std::time::Duration::from_millis(20));
            }
            std::hint::black_box(&hoard);
            return 0;
        }
        FixtureMode::IgnoreKill => ignore_sigterm(),
        FixtureMode::ForkEscape => {
            // SAFETY: the child only calls async-signal-safe functions and
            // our own busy loop before exiting.
            let pid = unsafe { libc::fork() };
            if pid == 0 {
                unsafe {
                    libc::setsid();
                }
                ignore_sigterm();
                burn_cpu(ESCAPEE_LIFETIME, ESCAPEE_LIFETIME);
                unsafe { libc::_exit(0) };
            }
        }
        _ => {}
    }
    work(plan.runtime);
    print!("{}", plan.stdout);
    let _ = std::io::stdout().flush();
    0
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

/// Description of a generated synthetic scenario directory.
#[derive(Debug, Clone)]
pub struct SyntheticSetup {
    pub landscape: Landscape,
    pub n_params: usize,
    /// Domain of every parameter.
    pub range: [f64; 2],
    pub default_value: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub cutoff: f64,
    pub mode: FixtureMode,
    /// Path of the fixture binary placed in the command.
    pub fixture: PathBuf,
    /// Extra `key = value` lines (budget, executor, seed policy, ...).
    pub extra: Vec<(String, String)>,
}

impl SyntheticSetup {
    pub fn new(landscape: Landscape, fixture: impl Into<PathBuf>) -> Self {
        SyntheticSetup {
            n_params: landscape.optimum.len(),
            landscape,
            range: [0.0, 1.0],
            default_value: 0.5,
            n_train: 10,
            n_test: 10,
            cutoff: 100.0,
            mode: FixtureMode::Honest,
            fixture: fixture.into(),
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.retain(|(k, _)| k != key);
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    /// Writes `scenario.txt`, `space.pcs`, `landscape.json`, instance lists,
    /// and empty instance files under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir.join("instances"))?;
        let mut pcs = String::new();
        for i in 0..self.n_params {
            pcs.push_str(&format!(
                "x{i} real [{},{}] default {}\n",
                self.range[0], self.range[1], self.default_value
            ));
        }
        std::fs::write(dir.join("space.pcs"), pcs)?;
        self.landscape.save(&dir.join("landscape.json"))?;
        let mut lists = [String::new(), String::new()];
        for (list, (prefix, n)) in lists.iter_mut().zip([("train", self.n_train), ("test", self.n_test)]) {
            for i in 0..n {
                let name = format!("instances/{prefix}{i:04}.inst");
                std::fs::write(dir.join(&name), "")?;
                list.push_str(&name);
                list.push('\n');
            }
        }
        std::fs::write(dir.join("train.txt"), &lists[0])?;
        std::fs::write(dir.join("test.txt"), &lists[1])?;
        let mut text = format!(
            "command = {} --mode {} --landscape {{scenario_dir}}/landscape.json --instance {{instance}} --seed {{seed}} {{params}}\n\
             pcs_file = space.pcs\ntrain_instance_file = train.txt\ntest_instance_file = test.txt\n\
             cutoff_time = {}\nmetric = runtime_par10\nmemory_limit = 2048\n",
            self.fixture.display(),
            self.mode,
            self.cutoff
        );
        if !self.extra.iter().any(|(k, _)| k.starts_with("budget_")) {
            text.push_str("budget_runs = 2000\n");
        }
        for (k, v) in &self.extra {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let path = dir.join("scenario.txt");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
