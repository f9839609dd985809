//! DIMACS CNF formulas, a small DPLL solver for fixtures, and solution checking.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::result::Verdict;

#[derive(Debug, Error, PartialEq)]
pub enum CnfError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SatAnswer {
    #[serde(rename = "SAT")]
    Sat,
    #[serde(rename = "UNSAT")]
    Unsat,
}

impl fmt::Display for SatAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SatAnswer::Sat => "SAT",
            SatAnswer::Unsat => "UNSAT",
        })
    }
}

impl FromStr for SatAnswer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SAT" | "SATISFIABLE" => Ok(SatAnswer::Sat),
            "UNSAT" | "UNSATISFIABLE" => Ok(SatAnswer::Unsat),
            other => Err(format!("expected SAT or UNSAT, got `{other}`")),
        }
    }
}

/// What a target claims about an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Claim {
    /// Satisfiable, with the printed literals (sign = polarity).
    Sat(Vec<i64>),
    Unsat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cnf {
    pub num_vars: usize,
    pub clauses: Vec<Vec<i64>>,
}

impl Cnf {
    pub fn parse_file(path: &Path) -> Result<Self, CnfError> {
        let text = std::fs::read_to_string(path).map_err(|e| CnfError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CnfError> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
                continue;
            }
            let err = |message: String| CnfError::Syntax {
                line: idx + 1,
                message,
            };
            if let Some(rest) = line.strip_prefix('p') {
                if header.is_some() {
                    return Err(err("second problem line".into()));
                }
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 || parts[0] != "cnf" {
                    return Err(err(format!("bad problem line `{line}`")));
                }
                let v = parts[1].parse().map_err(|_| err("bad variable count".into()))?;
                let c = parts[2].parse().map_err(|_| err("bad clause count".into()))?;
                header = Some((v, c));
                continue;
            }
            let (nv, _) = header.ok_or_else(|| err("clause before problem line".into()))?;
            for tok in line.split_whitespace() {
                let lit: i64 = tok.parse().map_err(|_| err(format!("bad literal `{tok}`")))?;
                if lit == 0 {
                    clauses.push(std::mem::take(&mut current));
                } else {
                    if lit.unsigned_abs() as usize > nv {
                        return Err(err(format!("literal {lit} exceeds {nv} variables")));
                    }
                    current.push(lit);
                }
            }
        }
        let (num_vars, num_clauses) = header.ok_or(CnfError::Syntax {
            line: 0,
            message: "missing problem line".into(),
        })?;
        if !current.is_empty() {
            clauses.push(current);
        }
        if clauses.len() != num_clauses {
            return Err(CnfError::Syntax {
                line: 0,
                message: format!("header declares {num_clauses} clauses, found {}", clauses.len()),
            });
        }
        Ok(Cnf { num_vars, clauses })
    }

    pub fn to_dimacs(&self) -> String {
        let mut s = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                s.push_str(&format!("{l} "));
            }
            s.push_str("0\n");
        }
        s
    }

    /// Returns a satisfying assignment indexed by variable (index 0 unused).
    pub fn solve(&self) -> Option<Vec<bool>> {
        let mut assign: Vec<Option<bool>> = vec![None; self.num_vars + 1];
        if dpll(&self.clauses, &mut assign) {
            Some(assign.into_iter().map(|v| v.unwrap_or(false)).collect())
        } else {
            None
        }
    }
}

fn lit_value(assign: &[Option<bool>], lit: i64) -> Option<bool> {
    assign[lit.unsigned_abs() as usize].map(|v| v == (lit > 0))
}

fn dpll(clauses: &[Vec<i64>], assign: &mut Vec<Option<bool>>) -> bool {
    let mut trail = Vec::new();
    // unit propagation to fixpoint
    loop {
        let mut unit = None;
        for c in clauses {
            let mut unassigned = None;
            let mut n_unassigned = 0;
            let mut satisfied = false;
            for &l in c {
                match lit_value(assign, l) {
                    Some(true) => {
                        satisfied = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        n_unassigned += 1;
                        unassigned = Some(l);
                    }
                }
            }
            if satisfied {
                continue;
            }
            if n_unassigned == 0 {
                for v in trail {
                    assign[v] = None;
                }
                return false;
            }
            if n_unassigned == 1 {
                unit = unassigned;
                break;
            }
        }
        match unit {
            Some(l) => {
                let v = l.unsigned_abs() as usize;
                assign[v] = Some(l > 0);
                trail.push(v);
            }
            None => break,
        }
    }
    let branch = clauses
        .iter()
        .flatten()
        .map(|l| l.unsigned_abs() as usize)
        .find(|&v| assign[v].is_none());
    let Some(v) = branch else {
        return true;
    };
    for value in [true, false] {
        assign[v] = Some(value);
        if dpll(clauses, assign) {
            return true;
        }
    }
    assign[v] = None;
    for v in trail {
        assign[v] = None;
    }
    false
}

/// Checks a claimed answer. SAT claims are checked clause by clause; UNSAT
/// claims only against a known reference answer.
pub fn verify_sat_solution(
    cnf: &Cnf,
    claim: &Claim,
    reference: Option<SatAnswer>,
) -> (Verdict, String) {
    match claim {
        Claim::Unsat => match reference {
            Some(SatAnswer::Sat) => (
                Verdict::WrongAnswer,
                "claimed UNSAT but the reference answer is SAT".into(),
            ),
            Some(SatAnswer::Unsat) => (Verdict::Verified, "UNSAT matches reference".into()),
            None => (Verdict::NotChecked, "UNSAT claim without reference".into()),
        },
        Claim::Sat(model) => {
            let mut assign: Vec<Option<bool>> = vec![None; cnf.num_vars + 1];
            for &lit in model {
                let v = lit.unsigned_abs() as usize;
                if lit == 0 || v > cnf.num_vars {
                    return (
                        Verdict::WrongAnswer,
                        format!("model literal {lit} outside 1..={}", cnf.num_vars),
                    );
                }
                if assign[v].is_some_and(|b| b != (lit > 0)) {
                    return (
                        Verdict::WrongAnswer,
                        format!("model assigns variable {v} both ways"),
                    );
                }
                assign[v] = Some(lit > 0);
            }
            for (i, clause) in cnf.clauses.iter().enumerate() {
                if !clause.iter().any(|&l| lit_value(&assign, l) == Some(true)) {
                    return (
                        Verdict::WrongAnswer,
                        format!("clause {} violated: {:?}", i + 1, clause),
                    );
                }
            }
            if reference == Some(SatAnswer::Unsat) {
                // the model checks out, so the reference is what is wrong
                return (
                    Verdict::Verified,
                    "model satisfies every clause (reference says UNSAT)".into(),
                );
            }
            (Verdict::Verified, "model satisfies every clause".into())
        }
    }
}

/// Reads the answer part of solver output in the usual `s`/`v` line convention.
pub fn parse_solver_output(text: &str) -> Option<Claim> {
    let mut answer = None;
    let mut lits = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("s ") {
            answer = match rest.trim() {
                "SATISFIABLE" => Some(true),
                "UNSATISFIABLE" => Some(false),
                _ => None,
            };
        } else if let Some(rest) = line.strip_prefix("v ") {
            for tok in rest.split_whitespace() {
                match tok.parse::<i64>() {
                    Ok(0) => {}
                    Ok(l) => lits.push(l),
                    // a garbled literal makes the model fail verification
                    Err(_) => lits.push(i64::MAX),
                }
            }
        }
    }
    match answer? {
        true => Some(Claim::Sat(lits)),
        false => Some(Claim::Unsat),
    }
}
