//! The single mediation layer between configurators and target algorithms.
//!
//! Wire format, inbound (after the scenario):
//!
//! ```text
//! <instance> <instance_info> <cutoff> <runlength> <seed> [-<param> <value>]...
//! ```
//!
//! `instance_info` and `runlength` are accepted and ignored. Outbound is one
//! line on stdout:
//!
//! ```text
//! RESULT status=<S> cost=<%.6f> cpu=<%.6f> wall=<%.6f> seed=<uint>
//! ```
//!
//! Built-in output parsers: `exit-code`, `quality`, `sat`. Built-in solution
//! checkers: `none`, `sat`. Any other parser or command-builder name is run
//! as an executable. A parser hook gets `<stdout-path> <exit-code>` and prints
//! `status [quality] [answer]`; a builder hook gets the inbound wire format
//! and prints the target argv one token per line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::cnf::{parse_solver_output, verify_sat_solution, Claim, Cnf};
use crate::diagnostics::sanity_check_result;
use crate::result::{ExitStatus, Metric, Reported, RunResult, RunStatus, Verdict};
use crate::sandbox::{default_wall_cutoff, Executor, LimitHit, ProcessSandbox, ResourceLimits};
use crate::scenario::{ExecutorKind, Scenario};
use crate::space::Configuration;
use crate::synthetic::SimulatedTarget;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WrapperError {
    #[error("malformed call: {0}")]
    Malformed(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("instance `{0}` is not part of the scenario")]
    UnknownInstance(String),
    #[error("cutoff {cutoff} outside (0, {max}]")]
    Cutoff { cutoff: f64, max: f64 },
    #[error("unresolved placeholder `{0}` in command template")]
    Placeholder(String),
    #[error("hook `{name}` failed: {message}")]
    Hook { name: String, message: String },
    #[error("unknown {kind} `{name}`")]
    UnknownHook { kind: &'static str, name: String },
}

/// One target-algorithm invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRequest {
    pub config: Configuration,
    pub instance: String,
    pub seed: u64,
    pub cutoff: f64,
    pub limits: ResourceLimits,
}

/// What an output parser extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialResult {
    pub status: RunStatus,
    pub quality: Option<f64>,
    pub claim: Option<Claim>,
    pub detail: Option<String>,
}

impl PartialResult {
    fn crashed(detail: impl Into<String>) -> Self {
        PartialResult {
            status: RunStatus::Crashed,
            quality: None,
            claim: None,
            detail: Some(detail.into()),
        }
    }

    fn status(status: RunStatus) -> Self {
        PartialResult {
            status,
            quality: None,
            claim: None,
            detail: None,
        }
    }
}

const OUTPUT_PARSERS: &[&str] = &["exit-code", "quality", "sat"];
const CHECKERS: &[&str] = &["none", "sat"];

/// Maps raw target output to a status. Hook failures become CRASHED.
pub fn interpret_output(stdout: &Path, _stderr: &Path, exit: ExitStatus, parser: &str) -> PartialResult {
    let text = match std::fs::read(stdout) {
        Ok(b) => String::from_utf8_lossy(&b).into_owned(),
        Err(e) => return PartialResult::crashed(format!("cannot read stdout: {e}")),
    };
    let exit_ok = |codes: &[i32]| matches!(exit, ExitStatus::Code(c) if codes.contains(&c));
    match parser {
        "exit-code" => {
            if exit_ok(&[0]) {
                PartialResult::status(RunStatus::Success)
            } else {
                PartialResult::crashed(format!("target exited with {exit}"))
            }
        }
        "quality" => {
            if !exit_ok(&[0]) {
                return PartialResult::crashed(format!("target exited with {exit}"));
            }
            match text.trim().parse::<f64>() {
                Ok(q) if q.is_finite() => PartialResult {
                    status: RunStatus::Success,
                    quality: Some(q),
                    claim: None,
                    detail: None,
                },
                _ => PartialResult::crashed("output is not a single number"),
            }
        }
        "sat" => {
            if !exit_ok(&[0, 10, 20]) {
                return PartialResult::crashed(format!("target exited with {exit}"));
            }
            match parse_solver_output(&text) {
                Some(claim) => PartialResult {
                    status: RunStatus::Success,
                    quality: None,
                    claim: Some(claim),
                    detail: None,
                },
                None if text.lines().any(|l| l.trim() == "s UNKNOWN") => {
                    PartialResult::status(RunStatus::Timeout)
                }
                None => PartialResult::crashed("no `s` answer line"),
            }
        }
        hook => external_parser(hook, stdout, exit, &text),
    }
}

fn external_parser(hook: &str, stdout: &Path, exit: ExitStatus, text: &str) -> PartialResult {
    let code = match exit {
        ExitStatus::Code(c) => c.to_string(),
        ExitStatus::Signal(s) => format!("-{s}"),
        ExitStatus::Unknown => "unknown".into(),
    };
    let out = match Command::new(hook).arg(stdout).arg(&code).output() {
        Ok(o) => o,
        Err(e) => return PartialResult::crashed(format!("parser hook `{hook}`: {e}")),
    };
    if !out.status.success() {
        return PartialResult::crashed(format!("parser hook `{hook}` exited with {}", out.status));
    }
    let reply = String::from_utf8_lossy(&out.stdout);
    let mut toks = reply.split_whitespace();
    let Some(status) = toks.next().and_then(|s| s.parse::<RunStatus>().ok()) else {
        return PartialResult::crashed(format!("parser hook `{hook}` printed `{}`", reply.trim()));
    };
    let mut partial = PartialResult::status(status);
    for tok in toks {
        match tok {
            "SAT" => {
                partial.claim = Some(match parse_solver_output(text) {
                    Some(c @ Claim::Sat(_)) => c,
                    _ => Claim::Sat(Vec::new()),
                })
            }
            "UNSAT" => partial.claim = Some(Claim::Unsat),
            t => match t.parse::<f64>() {
                Ok(q) => partial.quality = Some(q),
                Err(_) => {
                    return PartialResult::crashed(format!("parser hook `{hook}`: bad token `{t}`"))
                }
            },
        }
    }
    partial
}

/// Self-reported numbers in `runtime <x>` / `quality <x>` lines.
fn self_reports(text: &str) -> Reported {
    let mut r = Reported::default();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let (Some(key), Some(val), None) = (it.next(), it.next(), it.next()) else {
            continue;
        };
        let v = match val.parse::<f64>() {
            Ok(v) => v,
            Err(_) => continue,
        };
        match key {
            "runtime" => r.runtime = Some(v),
            "quality" => r.quality = Some(v),
            _ => {}
        }
    }
    r
}

/// The bit-exact outbound record.
pub fn emit_result(result: &RunResult) -> String {
    format!(
        "RESULT status={} cost={:.6} cpu={:.6} wall={:.6} seed={}",
        result.status, result.cost, result.cpu_time, result.wall_time, result.seed
    )
}

pub fn executor_for(kind: ExecutorKind) -> Arc<dyn Executor> {
    match kind {
        ExecutorKind::Process => Arc::new(ProcessSandbox::default()),
        ExecutorKind::Simulated => Arc::new(SimulatedTarget),
    }
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

/// A wrapper bound to one scenario and one executor.
#[derive(Clone)]
pub struct Wrapper {
    scenario: Arc<Scenario>,
    executor: Arc<dyn Executor>,
    experiment: String,
}

impl std::fmt::Debug for Wrapper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Wrapper").field("experiment", &self.experiment).finish()
    }
}

impl Wrapper {
    /// Uses the executor the scenario asks for.
    pub fn new(scenario: Arc<Scenario>, experiment: impl Into<String>) -> Result<Self, WrapperError> {
        let executor = executor_for(scenario.executor);
        Self::with_executor(scenario, executor, experiment)
    }

    pub fn with_executor(
        scenario: Arc<Scenario>,
        executor: Arc<dyn Executor>,
        experiment: impl Into<String>,
    ) -> Result<Self, WrapperError> {
        let hooks = &scenario.hooks;
        if !CHECKERS.contains(&hooks.solution_checker.as_str()) {
            return Err(WrapperError::UnknownHook {
                kind: "solution checker",
                name: hooks.solution_checker.clone(),
            });
        }
        for (kind, name, builtins) in [
            ("output parser", &hooks.output_parser, OUTPUT_PARSERS),
            ("command builder", &hooks.command_builder, &["template"][..]),
        ] {
            if !builtins.contains(&name.as_str()) && !Path::new(name).is_file() {
                return Err(WrapperError::UnknownHook {
                    kind,
                    name: name.clone(),
                });
            }
        }
        let experiment = experiment.into();
        if experiment.is_empty() || experiment.contains(char::is_whitespace) {
            return Err(WrapperError::Malformed(format!("bad experiment tag `{experiment}`")));
        }
        Ok(Wrapper {
            scenario,
            executor,
            experiment,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn experiment(&self) -> &str {
        &self.experiment
    }

    pub fn limits_for(&self, cutoff: f64) -> ResourceLimits {
        ResourceLimits {
            cpu_cutoff: cutoff,
            wall_cutoff: default_wall_cutoff(cutoff),
            memory_limit: self.scenario.memory_limit,
            grace: self.scenario.grace,
            poll_interval: self.scenario.poll_interval,
        }
    }

    /// Builds a validated request.
    pub fn request(
        &self,
        config: Configuration,
        instance: &str,
        seed: u64,
        cutoff: f64,
    ) -> Result<RunRequest, WrapperError> {
        let s = &self.scenario;
        let instance = s
            .resolve_instance(instance)
            .ok_or_else(|| WrapperError::UnknownInstance(instance.to_string()))?;
        if !(cutoff > 0.0 && cutoff <= s.cutoff_max) {
            return Err(WrapperError::Cutoff {
                cutoff,
                max: s.cutoff_max,
            });
        }
        let violations = s.space.validate(&config);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(WrapperError::Config(msg.join("; ")));
        }
        Ok(RunRequest {
            config,
            instance,
            seed,
            cutoff,
            limits: self.limits_for(cutoff),
        })
    }

    /// Parses the inbound wire format.
    pub fn parse_call(&self, argv: &[String]) -> Result<RunRequest, WrapperError> {
        if argv.len() < 5 {
            return Err(WrapperError::Malformed(format!(
                "expected `<instance> <info> <cutoff> <runlength> <seed> [-param value]...`, got {} tokens",
                argv.len()
            )));
        }
        let instance = &argv[0];
        let cutoff: f64 = argv[2]
            .parse()
            .map_err(|_| WrapperError::Malformed(format!("cutoff `{}` is not a number", argv[2])))?;
        let seed: u64 = argv[4]
            .parse()
            .map_err(|_| WrapperError::Malformed(format!("seed `{}` is not a non-negative integer", argv[4])))?;
        let rest = &argv[5..];
        if rest.len() % 2 != 0 {
            return Err(WrapperError::Malformed("parameter without value".into()));
        }
        let mut pairs = Vec::new();
        for pair in rest.chunks(2) {
            let name = pair[0]
                .strip_prefix('-')
                .ok_or_else(|| WrapperError::Malformed(format!("expected `-name`, got `{}`", pair[0])))?;
            if self.scenario.space.get(name).is_none() {
                return Err(WrapperError::UnknownParameter(name.to_string()));
            }
            pairs.push((name, pair[1].as_str()));
        }
        let config = self
            .scenario
            .space
            .config_from_pairs(pairs)
            .map_err(|e| WrapperError::Config(e.to_string()))?;
        self.request(config, instance, seed, cutoff)
    }

    /// Renders the target argv for a request.
    pub fn build_command(&self, request: &RunRequest) -> Result<Vec<String>, WrapperError> {
        let s = &self.scenario;
        if s.hooks.command_builder != "template" {
            return self.external_builder(request);
        }
        let mut argv = Vec::new();
        for tok in s.command_template.split_whitespace() {
            if tok == "{params}" {
                for p in s.space.parameters() {
                    let Some(value) = request.config.get(&p.name) else {
                        continue;
                    };
                    let value = value.to_string();
                    for ptok in s.param_format.pattern_for(&p.name).split_whitespace() {
                        argv.push(ptok.replace("{name}", &p.name).replace("{value}", &value));
                    }
                }
                continue;
            }
            argv.push(self.substitute(tok, request)?);
        }
        if argv.is_empty() {
            return Err(WrapperError::Malformed("empty command".into()));
        }
        Ok(argv)
    }

    fn substitute(&self, tok: &str, request: &RunRequest) -> Result<String, WrapperError> {
        let mut out = String::new();
        let mut rest = tok;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| WrapperError::Placeholder(rest[open..].to_string()))?;
            let name = &rest[open + 1..open + close];
            match name {
                "instance" => out.push_str(&request.instance),
                "seed" => out.push_str(&request.seed.to_string()),
                "cutoff" => out.push_str(&request.cutoff.to_string()),
                "scenario_dir" => out.push_str(&self.scenario.source_dir.display().to_string()),
                other => return Err(WrapperError::Placeholder(format!("{{{other}}}"))),
            }
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn external_builder(&self, request: &RunRequest) -> Result<Vec<String>, WrapperError> {
        let hook = &self.scenario.hooks.command_builder;
        let out = Command::new(hook)
            .args(wire_args(request, &self.scenario))
            .output()
            .map_err(|e| WrapperError::Hook {
                name: hook.clone(),
                message: e.to_string(),
            })?;
        if !out.status.success() {
            return Err(WrapperError::Hook {
                name: hook.clone(),
                message: format!("exited with {}", out.status),
            });
        }
        let argv: Vec<String> = String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(str::to_string)
            .filter(|l| !l.is_empty())
            .collect();
        if argv.is_empty() {
            return Err(WrapperError::Hook {
                name: hook.clone(),
                message: "printed no command".into(),
            });
        }
        Ok(argv)
    }

    fn penalty(&self) -> f64 {
        self.scenario.metric.penalty(self.scenario.cutoff_max)
    }

    /// Turns a wrapper-level failure into an ABORT result.
    pub fn abort(&self, seed: u64, err: impl std::fmt::Display) -> RunResult {
        RunResult::abort(seed, self.penalty(), err.to_string())
    }

    fn next_tag(&self) -> String {
        let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
        format!("{}/{}-{n}", self.experiment, std::process::id())
    }

    /// Runs one request end to end.
    pub fn run_request(&self, request: &RunRequest) -> RunResult {
        let tag = self.next_tag();
        let workdir = self.scenario.temp_root().join(format!("acrun-{}", tag.replace('/', "_")));
        if let Err(e) = std::fs::create_dir_all(&workdir) {
            return self.abort(request.seed, format!("cannot create {}: {e}", workdir.display()));
        }
        let mut result = self.run_in(request, &workdir, &tag);
        match result.status {
            RunStatus::Success | RunStatus::Timeout => {
                let _ = std::fs::remove_dir_all(&workdir);
            }
            _ => result.artifacts_dir = Some(workdir),
        }
        result
    }

    fn run_in(&self, request: &RunRequest, workdir: &Path, tag: &str) -> RunResult {
        let s = &self.scenario;
        let argv = match self.build_command(request) {
            Ok(a) => a,
            Err(e) => return self.abort(request.seed, e),
        };
        let raw = match self
            .executor
            .execute(&argv, &request.limits, workdir, &BTreeMap::new(), tag)
        {
            Ok(raw) => raw,
            Err(e) => return self.abort(request.seed, e),
        };
        let text = std::fs::read(&raw.stdout_path)
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .unwrap_or_default();
        let reported = self_reports(&text);

        let mut partial = match raw.limit_hit {
            LimitHit::Cpu | LimitHit::Wall => PartialResult::status(RunStatus::Timeout),
            LimitHit::Memory => PartialResult::status(RunStatus::Memout),
            LimitHit::None => interpret_output(&raw.stdout_path, &raw.stderr_path, raw.exit, &s.hooks.output_parser),
        };
        if partial.status == RunStatus::Success && raw.cpu_time > request.cutoff {
            partial = PartialResult::status(RunStatus::Timeout);
        }

        let mut verdict = Verdict::NotChecked;
        let mut detail = partial.detail.take();
        if partial.status == RunStatus::Success && s.hooks.solution_checker == "sat" {
            if let Some(claim) = &partial.claim {
                match Cnf::parse_file(Path::new(&request.instance)) {
                    Ok(cnf) => {
                        let reference = s.reference_answers.get(&request.instance).copied();
                        let (v, why) = verify_sat_solution(&cnf, claim, reference);
                        verdict = v;
                        detail = Some(why);
                    }
                    Err(e) => {
                        verdict = Verdict::WrongAnswer;
                        detail = Some(format!("instance is not a readable CNF: {e}"));
                    }
                }
                if verdict == Verdict::WrongAnswer {
                    partial.status = RunStatus::Crashed;
                }
            }
        }

        let cost = match (partial.status, s.metric) {
            (RunStatus::Success, Metric::Quality { .. }) => match partial.quality.or(reported.quality) {
                Some(q) => q,
                None => {
                    partial.status = RunStatus::Crashed;
                    detail = Some("no quality reported".into());
                    self.penalty()
                }
            },
            (RunStatus::Success, _) => raw.cpu_time,
            _ => self.penalty(),
        };

        let mut result = RunResult {
            status: partial.status,
            cost,
            cpu_time: raw.cpu_time.max(0.0),
            wall_time: raw.wall_time.max(0.0),
            max_memory: raw.max_memory.max(0.0),
            seed: request.seed,
            exit: raw.exit,
            verdict,
            reported,
            anomalies: Vec::new(),
            artifacts_dir: None,
            detail,
        };
        result.anomalies = sanity_check_result(&result, request);
        if raw.orphan_count_after > 0 {
            result.anomalies.push(crate::result::Anomaly::OrphansLeft {
                count: raw.orphan_count_after,
            });
        }
        result
    }
}

/// The inbound wire tokens that describe `request`.
pub fn wire_args(request: &RunRequest, scenario: &Scenario) -> Vec<String> {
    let mut out = vec![
        request.instance.clone(),
        "0".to_string(),
        request.cutoff.to_string(),
        "0".to_string(),
        request.seed.to_string(),
    ];
    for p in scenario.space.parameters() {
        if let Some(v) = request.config.get(&p.name) {
            out.push(format!("-{}", p.name));
            out.push(v.to_string());
        }
    }
    out
}
