//! Process jail for target runs.
//!
//! Each run is started as the leader of a fresh session and carries a unique
//! tag in [`TAG_ENV`]. The process tree is tracked by session, process group
//! and tag, so children that call `setsid` themselves are still found. CPU time
//! is polled from `/proc` for every tracked process and finalized from the
//! kernel's accounting at reap time; the larger of the two is reported.
//!
//! A process that double-forks *and* scrubs its environment can neither be
//! found nor accounted for. This is a known limit of process-group jails.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::result::ExitStatus;

/// Environment variable carrying the run tag `<experiment>/<run>`.
pub const TAG_ENV: &str = "ACHARNESS_TAG";
/// Memory accounting slack: a memory verdict is only reached above the limit,
/// but sampled RSS can lag the true peak by this fraction.
pub const MEMORY_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceLimits {
    /// Possibly capped CPU cutoff in seconds.
    pub cpu_cutoff: f64,
    pub wall_cutoff: f64,
    /// Mebibytes.
    pub memory_limit: f64,
    /// Delay between soft and hard kill.
    pub grace: f64,
    pub poll_interval: f64,
}

impl ResourceLimits {
    /// Limits with the default wallclock backstop.
    pub fn new(cpu_cutoff: f64, memory_limit: f64, grace: f64) -> Self {
        ResourceLimits {
            cpu_cutoff,
            wall_cutoff: default_wall_cutoff(cpu_cutoff),
            memory_limit,
            grace,
            poll_interval: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let bad = |m: &str| Err(SandboxError::InvalidLimits(m.to_string()));
        if !(self.cpu_cutoff > 0.0) {
            return bad("cpu_cutoff must be > 0");
        }
        if !(self.wall_cutoff >= self.cpu_cutoff) {
            return bad("wall_cutoff must be >= cpu_cutoff");
        }
        if !(self.grace > 0.0) {
            return bad("grace must be > 0");
        }
        if !(self.poll_interval > 0.0 && self.poll_interval <= 0.5) {
            return bad("poll_interval must be in (0, 0.5]");
        }
        if !(self.memory_limit > 0.0) {
            return bad("memory_limit must be > 0");
        }
        Ok(())
    }
}

pub fn default_wall_cutoff(cpu_cutoff: f64) -> f64 {
    (2.0 * cpu_cutoff).max(cpu_cutoff + 30.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitHit {
    None,
    Cpu,
    Wall,
    Memory,
}

impl LimitHit {
    pub fn as_str(self) -> &'static str {
        match self {
            LimitHit::None => "none",
            LimitHit::Cpu => "cpu",
            LimitHit::Wall => "wall",
            LimitHit::Memory => "memory",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TerminationReport {
    /// Exited after the soft kill.
    pub soft_killed: Vec<i32>,
    /// Needed the hard kill.
    pub hard_killed: Vec<i32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RawRunOutcome {
    pub exit: ExitStatus,
    pub cpu_time: f64,
    pub wall_time: f64,
    pub max_memory: f64,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
    pub limit_hit: LimitHit,
    pub orphan_count_after: usize,
    pub termination: TerminationReport,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("empty command")]
    EmptyCommand,
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("cannot spawn `{program}`: {message}")]
    Spawn { program: String, message: String },
    #[error("processes {pids:?} survived hard kill for {waited:.1}s")]
    Unkillable { pids: Vec<i32>, waited: f64 },
    #[error("sandbox i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Io(e.to_string())
    }
}

/// Something that can run a target command under limits.
pub trait Executor: Send + Sync {
    fn execute(
        &self,
        argv: &[String],
        limits: &ResourceLimits,
        workdir: &Path,
        env: &BTreeMap<String, String>,
        tag: &str,
    ) -> Result<RawRunOutcome, SandboxError>;
}

/// The real sandbox. `kill_tree = false` reproduces the classic wrapper bug of
/// killing only the direct child; it exists for diagnostics tests.
#[derive(Debug, Clone, Copy)]
pub struct ProcessSandbox {
    pub kill_tree: bool,
}

impl Default for ProcessSandbox {
    fn default() -> Self {
        ProcessSandbox { kill_tree: true }
    }
}

impl Executor for ProcessSandbox {
    fn execute(
        &self,
        argv: &[String],
        limits: &ResourceLimits,
        workdir: &Path,
        env: &BTreeMap<String, String>,
        tag: &str,
    ) -> Result<RawRunOutcome, SandboxError> {
        execute_limited_with(argv, limits, workdir, env, tag, self.kill_tree)
    }
}

/// Runs `argv` in `workdir` under `limits` with tree-wide termination.
pub fn execute_limited(
    argv: &[String],
    limits: &ResourceLimits,
    workdir: &Path,
    env: &BTreeMap<String, String>,
    tag: &str,
) -> Result<RawRunOutcome, SandboxError> {
    execute_limited_with(argv, limits, workdir, env, tag, true)
}

fn execute_limited_with(
    argv: &[String],
    limits: &ResourceLimits,
    workdir: &Path,
    env: &BTreeMap<String, String>,
    tag: &str,
    kill_tree: bool,
) -> Result<RawRunOutcome, SandboxError> {
    limits.validate()?;
    let mut log = File::create(workdir.join("watcher.log"))?;
    let mut group = ProcessGroup::spawn(argv, workdir, env, tag)?;
    let poll = Duration::from_secs_f64(limits.poll_interval);
    let slice = poll.min(Duration::from_millis(10));
    let mut next_poll = Instant::now();
    let mut limit_hit = LimitHit::None;

    while group.try_reap().is_none() {
        let now = Instant::now();
        if now >= next_poll {
            let snap = group.measure();
            writeln!(log, "{:.3} {:.3} {:.1}", snap.wall_time, snap.cpu_time, snap.max_memory)?;
            if snap.cpu_time >= limits.cpu_cutoff {
                limit_hit = LimitHit::Cpu;
            } else if snap.max_memory > limits.memory_limit {
                limit_hit = LimitHit::Memory;
            } else if snap.wall_time >= limits.wall_cutoff {
                limit_hit = LimitHit::Wall;
            }
            if limit_hit != LimitHit::None {
                break;
            }
            next_poll += poll;
        }
        std::thread::sleep(slice);
    }

    let termination = if kill_tree {
        // Also runs after a normal exit: leftover descendants are not allowed.
        group.terminate(limits.grace)?
    } else {
        group.kill_root_only(limits.grace)
    };
    let snap = group.measure();
    let orphans = scan_tagged(tag).map(|p| p.len()).unwrap_or(0);
    writeln!(
        log,
        "VERDICT limit_hit={} cpu={:.3} wall={:.3} mem={:.1}",
        limit_hit.as_str(),
        snap.cpu_time,
        snap.wall_time,
        snap.max_memory
    )?;
    Ok(RawRunOutcome {
        exit: group.exit.unwrap_or(ExitStatus::Unknown),
        cpu_time: snap.cpu_time,
        wall_time: snap.wall_time,
        max_memory: snap.max_memory,
        stdout_path: workdir.join("stdout.log"),
        stderr_path: workdir.join("stderr.log"),
        limit_hit,
        orphan_count_after: orphans,
        termination,
    })
}

/// Resource usage of a process tree at one moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub cpu_time: f64,
    pub wall_time: f64,
    pub max_memory: f64,
    /// `/proc` could not be read; values are the last known ones.
    pub stale: bool,
}

#[derive(Debug, Clone, Copy)]
struct ProcStat {
    state: char,
    pgrp: i32,
    session: i32,
    utime: u64,
    stime: u64,
    cutime: u64,
    cstime: u64,
    starttime: u64,
    rss_pages: i64,
}

impl ProcStat {
    fn alive(&self) -> bool {
        !matches!(self.state, 'Z' | 'X' | 'x')
    }
}

fn read_stat(pid: i32) -> Option<ProcStat> {
    let text = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // the command name may contain spaces and parentheses
    let rest = &text[text.rfind(')')? + 1..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let num = |i: usize| f.get(i).and_then(|s| s.parse::<u64>().ok());
    Some(ProcStat {
        state: f.first()?.chars().next()?,
        pgrp: f.get(2)?.parse().ok()?,
        session: f.get(3)?.parse().ok()?,
        utime: num(11)?,
        stime: num(12)?,
        cutime: num(13)?,
        cstime: num(14)?,
        starttime: num(19)?,
        rss_pages: f.get(21)?.parse().ok()?,
    })
}

fn has_tag(pid: i32, tag: &str, prefix: bool) -> bool {
    let Ok(bytes) = std::fs::read(format!("/proc/{pid}/environ")) else {
        return false;
    };
    let key = format!("{TAG_ENV}=");
    bytes.split(|b| *b == 0).any(|entry| {
        let Ok(s) = std::str::from_utf8(entry) else {
            return false;
        };
        match s.strip_prefix(&key) {
            Some(v) if prefix => v == tag || v.starts_with(&format!("{tag}/")),
            Some(v) => v == tag,
            None => false,
        }
    })
}

fn list_pids() -> std::io::Result<Vec<i32>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir("/proc")? {
        let entry = entry?;
        if let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<i32>().ok()) {
            out.push(pid);
        }
    }
    Ok(out)
}

/// Live processes carrying `tag` exactly or as an experiment prefix
/// (`exp` matches `exp/run-1`). Zombies count as dead.
pub fn scan_tagged(tag: &str) -> std::io::Result<Vec<i32>> {
    let me = std::process::id() as i32;
    let mut out: Vec<i32> = list_pids()?
        .into_iter()
        .filter(|&pid| pid != me)
        .filter(|&pid| read_stat(pid).is_some_and(|s| s.alive()))
        .filter(|&pid| has_tag(pid, tag, true))
        .collect();
    out.sort_unstable();
    Ok(out)
}

fn clk_tck() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let v = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if v > 0 {
        v as f64
    } else {
        100.0
    }
}

fn page_mib() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let v = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    (if v > 0 { v as f64 } else { 4096.0 }) / (1024.0 * 1024.0)
}

fn kill(pid: i32, sig: i32) {
    // SAFETY: sending a signal has no memory-safety preconditions.
    unsafe {
        libc::kill(pid, sig);
    }
}

/// A spawned session leader and everything tracked as belonging to it.
pub struct ProcessGroup {
    root: i32,
    tag: String,
    started: Instant,
    /// per (pid, starttime): (max cpu ticks seen, is member)
    seen: HashMap<(i32, u64), (u64, bool)>,
    root_ticks: u64,
    reaped_cpu: f64,
    max_memory: f64,
    last: Snapshot,
    exit: Option<ExitStatus>,
    tck: f64,
    page: f64,
}

impl ProcessGroup {
    /// Starts `argv` as a new session leader in `workdir` with stdout and
    /// stderr redirected to files there, `TMPDIR` pointing at `workdir`, and
    /// the run tag set.
    pub fn spawn(
        argv: &[String],
        workdir: &Path,
        env: &BTreeMap<String, String>,
        tag: &str,
    ) -> Result<Self, SandboxError> {
        let program = argv.first().ok_or(SandboxError::EmptyCommand)?;
        let stdout = File::create(workdir.join("stdout.log"))?;
        let stderr = File::create(workdir.join("stderr.log"))?;
        let mut cmd = Command::new(program);
        cmd.args(&argv[1..])
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .envs(env)
            .env("TMPDIR", workdir)
            .env(TAG_ENV, tag);
        // SAFETY: setsid is async-signal-safe and touches no parent state.
        unsafe {
            cmd.pre_exec(|| {
                if libc::setsid() < 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
        let child = cmd.spawn().map_err(|e| SandboxError::Spawn {
            program: program.clone(),
            message: e.to_string(),
        })?;
        let root = child.id() as i32;
        // reaping is done with wait4 below; the handle is not needed
        drop(child);
        Ok(ProcessGroup {
            root,
            tag: tag.to_string(),
            started: Instant::now(),
            seen: HashMap::new(),
            root_ticks: 0,
            reaped_cpu: 0.0,
            max_memory: 0.0,
            last: Snapshot {
                cpu_time: 0.0,
                wall_time: 0.0,
                max_memory: 0.0,
                stale: false,
            },
            exit: None,
            tck: clk_tck(),
            page: page_mib(),
        })
    }

    pub fn root_pid(&self) -> i32 {
        self.root
    }

    /// Non-blocking reap of the session leader.
    pub fn try_reap(&mut self) -> Option<ExitStatus> {
        if let Some(e) = self.exit {
            return Some(e);
        }
        let mut status: libc::c_int = 0;
        // SAFETY: all-zero is a valid rusage value.
        let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
        // SAFETY: pointers are valid for the duration of the call.
        let r = unsafe { libc::wait4(self.root, &mut status, libc::WNOHANG, &mut usage) };
        if r != self.root {
            return None;
        }
        let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
        self.reaped_cpu = tv(usage.ru_utime) + tv(usage.ru_stime);
        let exit = if libc::WIFEXITED(status) {
            ExitStatus::Code(libc::WEXITSTATUS(status))
        } else if libc::WIFSIGNALED(status) {
            ExitStatus::Signal(libc::WTERMSIG(status))
        } else {
            ExitStatus::Unknown
        };
        self.exit = Some(exit);
        Some(exit)
    }

    fn is_member(&mut self, pid: i32, st: &ProcStat) -> bool {
        if st.session == self.root || st.pgrp == self.root || pid == self.root {
            return true;
        }
        let key = (pid, st.starttime);
        if let Some(&(_, member)) = self.seen.get(&key) {
            return member;
        }
        let member = has_tag(pid, &self.tag, false);
        self.seen.insert(key, (0, member));
        member
    }

    /// Live tracked processes.
    fn members(&mut self) -> Vec<(i32, ProcStat)> {
        let Ok(pids) = list_pids() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for pid in pids {
            let Some(st) = read_stat(pid) else { continue };
            if self.is_member(pid, &st) {
                out.push((pid, st));
            }
        }
        out
    }

    /// Current resource usage of the tree. Monotone across calls.
    pub fn measure(&mut self) -> Snapshot {
        let wall = self.started.elapsed().as_secs_f64();
        let pids = match list_pids() {
            Ok(p) => p,
            Err(_) => {
                self.last.stale = true;
                self.last.wall_time = wall;
                return self.last;
            }
        };
        let mut rss = 0.0;
        for pid in pids {
            let Some(st) = read_stat(pid) else { continue };
            if !self.is_member(pid, &st) {
                continue;
            }
            let ticks = st.utime + st.stime;
            let entry = self.seen.entry((pid, st.starttime)).or_insert((0, true));
            entry.0 = entry.0.max(ticks);
            entry.1 = true;
            if pid == self.root && self.exit.is_none() {
                self.root_ticks = self
                    .root_ticks
                    .max(st.utime + st.stime + st.cutime + st.cstime);
            }
            if st.alive() {
                rss += st.rss_pages.max(0) as f64 * self.page;
            }
        }
        let polled: u64 = self.seen.values().filter(|v| v.1).map(|v| v.0).sum();
        let polled = polled as f64 / self.tck;
        let root = self.root_ticks as f64 / self.tck;
        self.max_memory = self.max_memory.max(rss);
        let cpu = polled.max(root).max(self.reaped_cpu).max(self.last.cpu_time);
        self.last = Snapshot {
            cpu_time: cpu,
            wall_time: wall.max(self.last.wall_time),
            max_memory: self.max_memory,
            stale: false,
        };
        self.last
    }

    fn signal_all(&mut self, sig: i32) -> Vec<i32> {
        // listed first: a polite target is a zombie right after killpg
        let alive: Vec<i32> = self
            .members()
            .into_iter()
            .filter(|(_, st)| st.alive())
            .map(|(pid, _)| pid)
            .collect();
        // SAFETY: killpg has no memory-safety preconditions.
        unsafe {
            libc::killpg(self.root, sig);
        }
        for &pid in &alive {
            kill(pid, sig);
        }
        alive
    }

    fn alive_members(&mut self) -> Vec<i32> {
        self.try_reap();
        self.members()
            .into_iter()
            .filter(|(_, st)| st.alive())
            .map(|(pid, _)| pid)
            .collect()
    }

    /// Soft-kills every tracked process, hard-kills survivors after `grace`,
    /// and waits until none is left. Gives up after `5 * grace`.
    pub fn terminate(&mut self, grace: f64) -> Result<TerminationReport, SandboxError> {
        let start = Instant::now();
        let mut report = TerminationReport::default();
        let mut targets = self.alive_members();
        if targets.is_empty() {
            return Ok(report);
        }
        self.measure();
        targets = self.signal_all(libc::SIGTERM);
        let tick = Duration::from_millis(5);
        let soft_deadline = Duration::from_secs_f64(grace);
        loop {
            let alive = self.alive_members();
            if alive.is_empty() || start.elapsed() >= soft_deadline {
                break;
            }
            // new escapees get the soft signal too
            for pid in alive.iter().filter(|p| !targets.contains(p)).copied().collect::<Vec<_>>() {
                kill(pid, libc::SIGTERM);
                targets.push(pid);
            }
            std::thread::sleep(tick);
            self.measure();
        }
        let survivors = self.alive_members();
        report.soft_killed = targets.iter().filter(|p| !survivors.contains(p)).copied().collect();
        if survivors.is_empty() {
            return Ok(report);
        }
        self.measure();
        let mut hard = self.signal_all(libc::SIGKILL);
        let give_up = Duration::from_secs_f64(5.0 * grace);
        loop {
            let alive = self.alive_members();
            if alive.is_empty() {
                break;
            }
            if start.elapsed() >= give_up {
                return Err(SandboxError::Unkillable {
                    pids: alive,
                    waited: start.elapsed().as_secs_f64(),
                });
            }
            for &pid in &alive {
                kill(pid, libc::SIGKILL);
                if !hard.contains(&pid) {
                    hard.push(pid);
                }
            }
            std::thread::sleep(tick);
        }
        hard.sort_unstable();
        report.hard_killed = hard;
        report.soft_killed.sort_unstable();
        Ok(report)
    }

    /// Broken-mode kill: SIGKILL to the leader only, leaving descendants.
    fn kill_root_only(&mut self, grace: f64) -> TerminationReport {
        if self.try_reap().is_some() {
            return TerminationReport::default();
        }
        kill(self.root, libc::SIGKILL);
        let start = Instant::now();
        while self.try_reap().is_none() && start.elapsed().as_secs_f64() < 5.0 * grace {
            std::thread::sleep(Duration::from_millis(5));
        }
        TerminationReport {
            soft_killed: Vec::new(),
            hard_killed: vec![self.root],
        }
    }
}

impl Drop for ProcessGroup {
    fn drop(&mut self) {
        if self.exit.is_none() {
            kill(self.root, libc::SIGKILL);
            // SAFETY: blocking wait on our own child.
            unsafe {
                let mut status = 0;
                libc::waitpid(self.root, &mut status, 0);
            }
        }
    }
}
