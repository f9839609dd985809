#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

pub mod checks;

use acharness::synthetic::{Landscape, LandscapeKind};

/// Timing-sensitive tests share one CPU; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_acfixture"))
}

pub fn harness_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_acharness"))
}

pub fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

pub fn fixture_argv(extra: &[&str]) -> Vec<String> {
    let mut v = vec![fixture().display().to_string()];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

pub fn no_env() -> BTreeMap<String, String> {
    BTreeMap::new()
}

/// Bowl over x0..x{n-1} with the optimum at `opt`.
pub fn bowl(opt: &[f64]) -> Landscape {
    Landscape::new(
        LandscapeKind::QuadraticBowl,
        opt.iter().enumerate().map(|(i, v)| (format!("x{i}"), *v)).collect(),
    )
}

/// Kills every process carrying `tag`; cleanup for deliberately broken runs.
pub fn reap_tagged(tag: &str) {
    for pid in acharness::sandbox::scan_tagged(tag).unwrap_or_default() {
        unsafe {
            libc::kill(pid, libc::SIGKILL);
        }
    }
    std::thread::sleep(std::time::Duration::from_millis(100));
}

pub fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(&p, body).unwrap();
    p
}

/// Random 3-CNF in DIMACS text, plus its clauses.
pub fn random_cnf(rng: &mut impl rand::Rng, vars: usize, clauses: usize) -> (String, Vec<Vec<i64>>) {
    let mut list = Vec::new();
    for _ in 0..clauses {
        let clause: Vec<i64> = (0..3)
            .map(|_| {
                let v = rng.random_range(1..=vars as i64);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        list.push(clause);
    }
    let mut text = format!("c generated\np cnf {vars} {clauses}\n");
    for c in &list {
        for l in c {
            text.push_str(&format!("{l} "));
        }
        text.push_str("0\n");
    }
    (text, list)
}

/// Exhaustive satisfiability check.
pub fn brute_force_sat(vars: usize, clauses: &[Vec<i64>]) -> bool {
    (0u64..1 << vars).any(|bits| {
        clauses.iter().all(|c| {
            c.iter().any(|&l| {
                let value = bits >> (l.unsigned_abs() - 1) & 1 == 1;
                (l > 0) == value
            })
        })
    })
}

/// A scenario directory with explicit pieces. Instances are created empty
/// unless they already exist.
pub struct ScenarioFiles<'a> {
    pub pcs: &'a str,
    pub command: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub cutoff: f64,
    pub extra: Vec<(&'a str, String)>,
}

impl ScenarioFiles<'_> {
    pub fn write(&self, dir: &Path) -> PathBuf {
        write(dir, "space.pcs", self.pcs);
        for i in self.train.iter().chain(&self.test) {
            let p = dir.join(i);
            if !p.exists() {
                write(dir, i, "");
            }
        }
        write(dir, "train.txt", &(self.train.join("\n") + "\n"));
        write(dir, "test.txt", &(self.test.join("\n") + "\n"));
        let mut text = format!(
            "command = {}\npcs_file = space.pcs\ntrain_instance_file = train.txt\ntest_instance_file = test.txt\n\
             cutoff_time = {}\nmemory_limit = 2048\n",
            self.command, self.cutoff
        );
        if !self.extra.iter().any(|(k, _)| *k == "metric") {
            text.push_str("metric = runtime_par10\n");
        }
        if !self.extra.iter().any(|(k, _)| k.starts_with("budget_")) {
            text.push_str("budget_runs = 100\n");
        }
        for (k, v) in &self.extra {
            text.push_str(&format!("{k} = {v}\n"));
        }
        write(dir, "scenario.txt", &text)
    }
}
