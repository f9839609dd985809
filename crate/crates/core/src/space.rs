//! Parameter configuration spaces and configurations.
//!
//! A space is an ordered list of real, integer and categorical parameters.
//! A parameter may be conditional on a single parent taking one value; the
//! parameter is active only while that clause holds (and the parent itself is
//! active).
//!
//! The text format accepted by [`ConfigSpace::parse`] is one parameter per line:
//!
//! ```text
//! # name  kind         domain   default        flags   condition
//! alg     categorical  {a,b}    default a
//! beta    real         [0,1]    default 0.1            | alg==b
//! steps   integer      [1,1000] default 10     log
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Name reserved for the random seed, which must never be tuned.
pub const RESERVED_SEED_NAME: &str = "seed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("parameter `{name}`: {message}")]
    Param { name: String, message: String },
    #[error("{0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl SpaceError {
    fn param(name: &str, message: impl Into<String>) -> Self {
        SpaceError::Param {
            name: name.to_string(),
            message: message.into(),
        }
    }
}

/// One assigned parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            Value::Cat(_) => None,
        }
    }

    fn tag(&self) -> char {
        match self {
            Value::Real(_) => 'r',
            Value::Int(_) => 'i',
            Value::Cat(_) => 'c',
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Real(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Cat(s) => serde_json::Value::from(s.as_str()),
        }
    }
}

/// Formats reals with the shortest representation that parses back to the
/// same `f64`, so command lines and ids never lose precision.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Real(v) => serializer.serialize_f64(*v),
            Value::Int(v) => serializer.serialize_i64(*v),
            Value::Cat(s) => serializer.serialize_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    Integer,
    Categorical,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Real => "real",
            ParamKind::Integer => "integer",
            ParamKind::Categorical => "categorical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Real { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Categorical(Vec<String>),
}

impl Domain {
    pub fn kind(&self) -> ParamKind {
        match self {
            Domain::Real { .. } => ParamKind::Real,
            Domain::Integer { .. } => ParamKind::Integer,
            Domain::Categorical(_) => ParamKind::Categorical,
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (self, value) {
            (Domain::Real { lo, hi }, Value::Real(v)) => v.is_finite() && lo <= v && v <= hi,
            (Domain::Integer { lo, hi }, Value::Int(v)) => lo <= v && v <= hi,
            (Domain::Categorical(items), Value::Cat(s)) => items.iter().any(|c| c == s),
            _ => false,
        }
    }

    /// Parses a textual value into this domain's value type (range is not checked).
    pub fn parse_value(&self, raw: &str) -> Result<Value, String> {
        let raw = raw.trim();
        match self {
            Domain::Real { .. } => raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::Real)
                .ok_or_else(|| format!("`{raw}` is not a finite real")),
            Domain::Integer { .. } => raw
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| format!("`{raw}` is not an integer")),
            Domain::Categorical(_) => Ok(Value::Cat(raw.to_string())),
        }
    }

    fn value_from_json(&self, json: &serde_json::Value) -> Result<Value, String> {
        match (self, json) {
            (Domain::Real { .. }, serde_json::Value::Number(n)) => n
                .as_f64()
                .map(Value::Real)
                .ok_or_else(|| format!("{n} is not a real")),
            (Domain::Integer { .. }, serde_json::Value::Number(n)) => match n.as_i64() {
                Some(v) => Ok(Value::Int(v)),
                None => match n.as_f64() {
                    Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(Value::Int(f as i64)),
                    _ => Err(format!("{n} is not an integer")),
                },
            },
            (Domain::Categorical(_), serde_json::Value::String(s)) => Ok(Value::Cat(s.clone())),
            (Domain::Categorical(_), serde_json::Value::Number(n)) => Ok(Value::Cat(n.to_string())),
            (Domain::Categorical(_), serde_json::Value::Bool(b)) => Ok(Value::Cat(b.to_string())),
            (_, serde_json::Value::String(s)) => self.parse_value(s),
            (_, other) => Err(format!("unsupported value {other}")),
        }
    }

    fn to_pcs(&self) -> String {
        match self {
            Domain::Real { lo, hi } => format!("[{lo},{hi}]"),
            Domain::Integer { lo, hi } => format!("[{lo},{hi}]"),
            Domain::Categorical(items) => format!("{{{}}}", items.join(",")),
        }
    }
}

/// "active iff `parent` = `value`".
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub parent: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub domain: Domain,
    pub default: Value,
    pub log_scale: bool,
    pub condition: Option<Condition>,
}

impl Parameter {
    /// Builds a parameter and checks everything that does not depend on other
    /// parameters.
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        default: Value,
        log_scale: bool,
        condition: Option<Condition>,
    ) -> Result<Self, SpaceError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == '|') {
            return Err(SpaceError::param(&name, "invalid name"));
        }
        if name == RESERVED_SEED_NAME {
            return Err(SpaceError::param(
                &name,
                "the random seed must not be a tunable parameter",
            ));
        }
        match &domain {
            Domain::Real { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(SpaceError::param(&name, "real domain needs lo < hi"));
                }
                if log_scale && *lo <= 0.0 {
                    return Err(SpaceError::param(&name, "log scale needs lo > 0"));
                }
            }
            Domain::Integer { lo, hi } => {
                if lo > hi {
                    return Err(SpaceError::param(&name, "integer domain needs lo <= hi"));
                }
                if log_scale && *lo <= 0 {
                    return Err(SpaceError::param(&name, "log scale needs lo > 0"));
                }
            }
            Domain::Categorical(items) => {
                if items.is_empty() {
                    return Err(SpaceError::param(&name, "empty categorical domain"));
                }
                for (i, item) in items.iter().enumerate() {
                    if item.is_empty() {
                        return Err(SpaceError::param(&name, "empty category"));
                    }
                    if items[..i].contains(item) {
                        return Err(SpaceError::param(
                            &name,
                            format!("duplicate category `{item}`"),
                        ));
                    }
                }
                if log_scale {
                    return Err(SpaceError::param(&name, "log scale on a categorical"));
                }
            }
        }
        if !domain.contains(&default) {
            return Err(SpaceError::param(&name, "default outside domain"));
        }
        Ok(Parameter {
            name,
            domain,
            default,
            log_scale,
            condition,
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.domain.kind()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match &self.domain {
            Domain::Real { lo, hi } => {
                if self.log_scale {
                    let v = rng.random_range(lo.ln()..=hi.ln()).exp();
                    Value::Real(v.clamp(*lo, *hi))
                } else {
                    Value::Real(rng.random_range(*lo..=*hi))
                }
            }
            Domain::Integer { lo, hi } => {
                if self.log_scale && lo < hi {
                    let v = rng.random_range((*lo as f64).ln()..=(*hi as f64).ln()).exp();
                    Value::Int((v.round() as i64).clamp(*lo, *hi))
                } else {
                    Value::Int(rng.random_range(*lo..=*hi))
                }
            }
            Domain::Categorical(items) => {
                Value::Cat(items[rng.random_range(0..items.len())].clone())
            }
        }
    }

    fn to_pcs_line(&self) -> String {
        let mut line = format!(
            "{} {} {} default {}",
            self.name,
            self.kind(),
            self.domain.to_pcs(),
            self.default
        );
        if self.log_scale {
            line.push_str(" log");
        }
        if let Some(c) = &self.condition {
            line.push_str(&format!(" | {}=={}", c.parent, c.value));
        }
        line
    }
}

/// Stable identifier of a configuration's active values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ConfigId(String);

impl ConfigId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An assignment of values to the active parameters of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    values: BTreeMap<String, Value>,
    id: ConfigId,
}

impl Configuration {
    pub fn new(values: BTreeMap<String, Value>) -> Self {
        let mut hasher = Sha256::new();
        for (name, value) in &values {
            hasher.update(name.as_bytes());
            hasher.update([0u8, value.tag() as u8]);
            hasher.update(value.to_string().as_bytes());
            hasher.update([b'\n']);
        }
        let digest = hasher.finalize();
        let id = ConfigId(hex::encode(&digest[..8]));
        Configuration { values, id }
    }

    pub fn id(&self) -> &ConfigId {
        &self.id
    }

    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect(),
        )
    }

    /// Compact single-line JSON, keys sorted.
    pub fn to_json_string(&self) -> String {
        self.to_json().to_string()
    }

    /// Values rendered as strings, as a target algorithm would see them.
    pub fn string_values(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }
}

impl Serialize for Configuration {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (k, v) in &self.values {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// A reason why a configuration is not valid in a space.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownParameter(String),
    OutOfRange(String),
    InactiveAssigned(String),
    MissingActive(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownParameter(n) => write!(f, "unknown parameter {n}"),
            Violation::OutOfRange(n) => write!(f, "{n} out of range"),
            Violation::InactiveAssigned(n) => write!(f, "inactive parameter assigned: {n}"),
            Violation::MissingActive(n) => write!(f, "active parameter missing: {n}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConfigSpace {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    /// Parameter indices ordered so that parents precede children.
    order: Vec<usize>,
}

impl PartialEq for ConfigSpace {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ConfigSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self, SpaceError> {
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(SpaceError::param(&p.name, "duplicate name"));
            }
        }
        for p in &params {
            if let Some(c) = &p.condition {
                let parent = index
                    .get(&c.parent)
                    .map(|&i| &params[i])
                    .ok_or_else(|| {
                        SpaceError::param(&p.name, format!("unknown parent `{}`", c.parent))
                    })?;
                if !parent.domain.contains(&c.value) {
                    return Err(SpaceError::param(
                        &p.name,
                        format!("condition value `{}` outside parent's domain", c.value),
                    ));
                }
            }
        }
        let order = topological_order(&params, &index)?;
        Ok(ConfigSpace {
            params,
            index,
            order,
        })
    }

    pub fn empty() -> Self {
        ConfigSpace {
            params: Vec::new(),
            index: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    fn is_active(&self, p: &Parameter, assigned: &BTreeMap<String, Value>) -> bool {
        match &p.condition {
            None => true,
            Some(c) => assigned.get(&c.parent) == Some(&c.value),
        }
    }

    /// Builds a configuration by filling parameters top-down, skipping the ones
    /// whose condition does not hold.
    fn build_with(&self, mut pick: impl FnMut(&Parameter) -> Value) -> Configuration {
        let mut values = BTreeMap::new();
        for &i in &self.order {
            let p = &self.params[i];
            if self.is_active(p, &values) {
                let v = pick(p);
                values.insert(p.name.clone(), v);
            }
        }
        Configuration::new(values)
    }

    pub fn default_config(&self) -> Configuration {
        self.build_with(|p| p.default.clone())
    }

    /// Uniform sample per parameter (log-uniform for log-scale ones).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        self.build_with(|p| p.sample(rng))
    }

    pub fn validate(&self, config: &Configuration) -> Vec<Violation> {
        let mut out = Vec::new();
        for name in config.values().keys() {
            if !self.index.contains_key(name) {
                out.push(Violation::UnknownParameter(name.clone()));
            }
        }
        // Activity is judged from the values the configuration actually holds,
        // after removing assignments to parameters that are themselves inactive.
        let mut effective = BTreeMap::new();
        for &i in &self.order {
            let p = &self.params[i];
            let active = self.is_active(p, &effective);
            match (active, config.get(&p.name)) {
                (true, Some(v)) => {
                    if !p.domain.contains(v) {
                        out.push(Violation::OutOfRange(p.name.clone()));
                    }
                    effective.insert(p.name.clone(), v.clone());
                }
                (true, None) => out.push(Violation::MissingActive(p.name.clone())),
                (false, Some(_)) => out.push(Violation::InactiveAssigned(p.name.clone())),
                (false, None) => {}
            }
        }
        out
    }

    /// Parses `(name, raw value)` pairs and requires the result to be valid.
    pub fn config_from_pairs<'a, I>(&self, pairs: I) -> Result<Configuration, SpaceError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut values = BTreeMap::new();
        for (name, raw) in pairs {
            let p = self
                .get(name)
                .ok_or_else(|| SpaceError::Config(format!("unknown parameter {name}")))?;
            let v = p
                .domain
                .parse_value(raw)
                .map_err(|m| SpaceError::Config(format!("{name}: {m}")))?;
            if values.insert(name.to_string(), v).is_some() {
                return Err(SpaceError::Config(format!("parameter {name} given twice")));
            }
        }
        self.checked(Configuration::new(values))
    }

    pub fn config_from_json(&self, json: &serde_json::Value) -> Result<Configuration, SpaceError> {
        let obj = json
            .as_object()
            .ok_or_else(|| SpaceError::Config("configuration must be a JSON object".into()))?;
        let mut values = BTreeMap::new();
        for (name, raw) in obj {
            let p = self
                .get(name)
                .ok_or_else(|| SpaceError::Config(format!("unknown parameter {name}")))?;
            let v = p
                .domain
                .value_from_json(raw)
                .map_err(|m| SpaceError::Config(format!("{name}: {m}")))?;
            values.insert(name.clone(), v);
        }
        self.checked(Configuration::new(values))
    }

    fn checked(&self, config: Configuration) -> Result<Configuration, SpaceError> {
        let violations = self.validate(&config);
        if violations.is_empty() {
            Ok(config)
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(SpaceError::Config(msg.join("; ")))
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self, SpaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpaceError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SpaceError> {
        struct Pending {
            line: usize,
            name: String,
            domain: Domain,
            default: String,
            log: bool,
            condition: Option<(String, String)>,
        }
        let mut pending = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| SpaceError::Syntax {
                line: line_no,
                message,
            };
            let (decl, cond) = match line.split_once('|') {
                Some((d, c)) => (d.trim(), Some(c.trim())),
                None => (line, None),
            };
            let condition = match cond {
                None => None,
                Some(c) => {
                    let (parent, value) = c
                        .split_once("==")
                        .ok_or_else(|| syntax(format!("condition `{c}` is not `parent==value`")))?;
                    let (parent, value) = (parent.trim(), value.trim());
                    if parent.is_empty() || value.is_empty() {
                        return Err(syntax(format!("condition `{c}` is incomplete")));
                    }
                    Some((parent.to_string(), value.to_string()))
                }
            };
            let mut head = decl.splitn(3, char::is_whitespace);
            let name = head.next().unwrap_or("").to_string();
            let kind = head.next().map(str::trim).unwrap_or("");
            let rest = head.next().unwrap_or("").trim_start();
            let (open, close) = match kind {
                "real" | "integer" => ('[', ']'),
                "categorical" => ('{', '}'),
                "" => return Err(syntax(format!("missing kind for `{name}`"))),
                other => return Err(syntax(format!("unknown kind `{other}`"))),
            };
            if !rest.starts_with(open) {
                return Err(syntax(format!("expected domain starting with `{open}`")));
            }
            let end = rest
                .find(close)
                .ok_or_else(|| syntax(format!("unterminated domain, expected `{close}`")))?;
            let inner = &rest[1..end];
            let items: Vec<&str> = inner.split(',').map(str::trim).collect();
            let domain = match kind {
                "real" => {
                    let [lo, hi] = items[..] else {
                        return Err(syntax("real domain needs `[lo,hi]`".into()));
                    };
                    let lo = lo.parse::<f64>().map_err(|_| syntax(format!("bad bound `{lo}`")))?;
                    let hi = hi.parse::<f64>().map_err(|_| syntax(format!("bad bound `{hi}`")))?;
                    Domain::Real { lo, hi }
                }
                "integer" => {
                    let [lo, hi] = items[..] else {
                        return Err(syntax("integer domain needs `[lo,hi]`".into()));
                    };
                    let lo = lo.parse::<i64>().map_err(|_| syntax(format!("bad bound `{lo}`")))?;
                    let hi = hi.parse::<i64>().map_err(|_| syntax(format!("bad bound `{hi}`")))?;
                    Domain::Integer { lo, hi }
                }
                _ => Domain::Categorical(items.iter().map(|s| s.to_string()).collect()),
            };
            let mut tail = rest[end + 1..].split_whitespace();
            let mut default = None;
            let mut log = false;
            while let Some(tok) = tail.next() {
                match tok {
                    "default" => {
                        let v = tail
                            .next()
                            .ok_or_else(|| syntax("`default` needs a value".into()))?;
                        default = Some(v.to_string());
                    }
                    "log" => log = true,
                    other => return Err(syntax(format!("unexpected token `{other}`"))),
                }
            }
            let default = default.ok_or_else(|| syntax(format!("`{name}` has no default")))?;
            pending.push(Pending {
                line: line_no,
                name,
                domain,
                default,
                log,
                condition,
            });
        }

        let domains: HashMap<&str, &Domain> =
            pending.iter().map(|p| (p.name.as_str(), &p.domain)).collect();
        let mut params = Vec::with_capacity(pending.len());
        for p in &pending {
            let at_line = |e: SpaceError| SpaceError::Syntax {
                line: p.line,
                message: e.to_string(),
            };
            let default = p.domain.parse_value(&p.default).map_err(|m| SpaceError::Syntax {
                line: p.line,
                message: format!("parameter `{}`: default {m}", p.name),
            })?;
            let condition = match &p.condition {
                None => None,
                Some((parent, raw)) => {
                    let parent_domain = domains.get(parent.as_str()).ok_or_else(|| {
                        at_line(SpaceError::param(&p.name, format!("unknown parent `{parent}`")))
                    })?;
                    let value = parent_domain.parse_value(raw).map_err(|m| {
                        at_line(SpaceError::param(&p.name, format!("condition value {m}")))
                    })?;
                    Some(Condition {
                        parent: parent.clone(),
                        value,
                    })
                }
            };
            let param = Parameter::new(p.name.clone(), p.domain.clone(), default, p.log, condition)
                .map_err(at_line)?;
            if params.iter().any(|q: &Parameter| q.name == param.name) {
                return Err(at_line(SpaceError::param(&param.name, "duplicate name")));
            }
            params.push(param);
        }
        ConfigSpace::new(params)
    }

    /// Text form accepted by [`ConfigSpace::parse`].
    pub fn to_pcs_string(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            out.push_str(&p.to_pcs_line());
            out.push('\n');
        }
        out
    }
}

fn topological_order(
    params: &[Parameter],
    index: &HashMap<String, usize>,
) -> Result<Vec<usize>, SpaceError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; params.len()];
    let mut order = Vec::with_capacity(params.len());
    for start in 0..params.len() {
        if state[start] == 2 {
            continue;
        }
        // Single-parent conditions form a forest of chains, so walking up from
        // each node is enough.
        let mut chain = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match state[i] {
                2 => break,
                1 => return Err(SpaceError::param(&params[i].name, "cyclic condition")),
                _ => {}
            }
            state[i] = 1;
            chain.push(i);
            cur = params[i]
                .condition
                .as_ref()
                .and_then(|c| index.get(&c.parent).copied());
        }
        for &i in chain.iter().rev() {
            state[i] = 2;
            order.push(i);
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conditional() -> ConfigSpace {
        ConfigSpace::parse(
            "alg categorical {a,b} default a\nbeta real [0,1] default 0.1 | alg==b\n",
        )
        .unwrap()
    }

    #[test]
    fn parses_single_real() {
        let space = ConfigSpace::parse("x real [0,1] default 0.5").unwrap();
        assert_eq!(space.len(), 1);
        let p = &space.parameters()[0];
        assert_eq!(p.kind(), ParamKind::Real);
        assert_eq!(p.domain, Domain::Real { lo: 0.0, hi: 1.0 });
        assert_eq!(p.default, Value::Real(0.5));
    }

    #[test]
    fn parses_conditional_space() {
        let space = conditional();
        assert_eq!(space.len(), 2);
        let beta = space.get("beta").unwrap();
        assert_eq!(
            beta.condition,
            Some(Condition {
                parent: "alg".into(),
                value: Value::Cat("b".into())
            })
        );
        let def = space.default_config();
        assert_eq!(def.values().len(), 1, "beta inactive under alg=a");
    }

    #[test]
    fn parent_may_be_declared_after_child() {
        let space =
            ConfigSpace::parse("beta real [0,1] default 0.1 | alg==b\nalg categorical {a,b} default b")
                .unwrap();
        let def = space.default_config();
        assert_eq!(def.get("beta"), Some(&Value::Real(0.1)));
    }

    #[test]
    fn rejects_bad_files() {
        let unknown = ConfigSpace::parse("x real [0,1] default 0.5 | y==1").unwrap_err();
        assert!(unknown.to_string().contains("unknown parent"), "{unknown}");
        assert!(unknown.to_string().starts_with("line 1"));

        let outside = ConfigSpace::parse("# c\n\nx real [0,1] default 2").unwrap_err();
        let msg = outside.to_string();
        assert!(msg.contains("line 3") && msg.contains("default outside domain"), "{msg}");

        let dup = ConfigSpace::parse("x real [0,1] default 0.5\nx integer [0,3] default 1")
            .unwrap_err();
        assert!(dup.to_string().contains("duplicate name"));

        let seed = ConfigSpace::parse("seed integer [0,100] default 1").unwrap_err();
        assert!(seed.to_string().contains("seed"));

        let log0 = ConfigSpace::parse("x real [0,1] default 0.5 log").unwrap_err();
        assert!(log0.to_string().contains("log scale"));

        assert!(ConfigSpace::parse("x real [1,1] default 1").is_err());
        assert!(ConfigSpace::parse("n integer [1,1] default 1").is_ok());
        assert!(ConfigSpace::parse("c categorical {a,a} default a").is_err());
        assert!(ConfigSpace::parse("c categorical {} default a").is_err());
        assert!(ConfigSpace::parse("x real [0,1]").is_err());
        assert!(ConfigSpace::parse("x float [0,1] default 0").is_err());
    }

    #[test]
    fn rejects_cycles() {
        let err = ConfigSpace::parse(
            "a categorical {x,y} default x | b==y\nb categorical {x,y} default x | a==y",
        )
        .unwrap_err();
        assert!(err.to_string().contains("cyclic"), "{err}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let space = ConfigSpace::parse("x real [0,1] default 0.5").unwrap();
        let a = space.sample(&mut ChaCha8Rng::seed_from_u64(7));
        let b = space.sample(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn categorical_frequencies_are_balanced() {
        // 10,000 fair coin flips: the sd of the frequency is 0.005, so the
        // [0.47, 0.53] band is six standard deviations wide on either side.
        let space = ConfigSpace::parse("c categorical {a,b} default a").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let a = (0..n)
            .filter(|_| space.sample(&mut rng).get("c") == Some(&Value::Cat("a".into())))
            .count();
        let freq = a as f64 / n as f64;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
        assert!((0.47..=0.53).contains(&(1.0 - freq)));
    }

    #[test]
    fn inactive_child_is_absent_from_samples() {
        let space = conditional();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = [false, false];
        for _ in 0..200 {
            let c = space.sample(&mut rng);
            match c.get("alg") {
                Some(Value::Cat(s)) if s == "a" => {
                    assert!(c.get("beta").is_none());
                    seen[0] = true;
                }
                _ => {
                    assert!(c.get("beta").is_some());
                    seen[1] = true;
                }
            }
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn log_integers_stay_in_range() {
        let space = ConfigSpace::parse("n integer [1,1000] default 10 log").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut small = 0;
        for _ in 0..2000 {
            let Some(Value::Int(v)) = space.sample(&mut rng).get("n").cloned() else {
                panic!()
            };
            assert!((1..=1000).contains(&v));
            if v <= 31 {
                small += 1;
            }
        }
        // log-uniform puts about half the mass below sqrt(1000)
        assert!(small > 800 && small < 1200, "{small}");
    }

    #[test]
    fn validate_reports_violations() {
        let space = ConfigSpace::parse("x real [0,1] default 0.5").unwrap();
        assert!(space.validate(&space.default_config()).is_empty());
        let bad = Configuration::new(BTreeMap::from([("x".to_string(), Value::Real(1.5))]));
        let v: Vec<String> = space.validate(&bad).iter().map(|v| v.to_string()).collect();
        assert_eq!(v, vec!["x out of range".to_string()]);

        let space = conditional();
        let bad = Configuration::new(BTreeMap::from([
            ("alg".to_string(), Value::Cat("a".into())),
            ("beta".to_string(), Value::Real(0.3)),
        ]));
        let v = space.validate(&bad);
        assert_eq!(v, vec![Violation::InactiveAssigned("beta".into())]);
        assert!(v[0].to_string().starts_with("inactive parameter assigned"));

        let missing = Configuration::new(BTreeMap::from([("alg".to_string(), Value::Cat("b".into()))]));
        assert_eq!(space.validate(&missing), vec![Violation::MissingActive("beta".into())]);
    }

    #[test]
    fn id_ignores_insertion_order() {
        let mut a = BTreeMap::new();
        a.insert("x".to_string(), Value::Real(0.25));
        a.insert("y".to_string(), Value::Int(3));
        let mut b = BTreeMap::new();
        b.insert("y".to_string(), Value::Int(3));
        b.insert("x".to_string(), Value::Real(0.25));
        assert_eq!(Configuration::new(a).id(), Configuration::new(b).id());
        let c = Configuration::new(BTreeMap::from([("x".to_string(), Value::Real(0.5))]));
        let d = Configuration::new(BTreeMap::from([("x".to_string(), Value::Int(0))]));
        assert_ne!(c.id(), d.id());
    }

    #[test]
    fn json_round_trip() {
        let space = ConfigSpace::parse(
            "x real [0,1] default 0.5\nn integer [0,9] default 2\nc categorical {u,v} default v",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let cfg = space.sample(&mut rng);
            let back = space
                .config_from_json(&serde_json::from_str(&cfg.to_json_string()).unwrap())
                .unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn pairs_parse_and_reject_unknown() {
        let space = conditional();
        let c = space.config_from_pairs([("alg", "b"), ("beta", "0.8")]).unwrap();
        assert_eq!(c.get("beta"), Some(&Value::Real(0.8)));
        let err = space.config_from_pairs([("gamma", "1")]).unwrap_err();
        assert!(err.to_string().contains("unknown parameter"));
    }

    #[test]
    fn many_parameter_file() {
        let mut text = String::new();
        for i in 0..75 {
            match i % 3 {
                0 => text.push_str(&format!("p{i} real [0,10] default 1\n")),
                1 => text.push_str(&format!("p{i} integer [1,64] default 8 log\n")),
                _ => text.push_str(&format!("p{i} categorical {{on,off}} default on\n")),
            }
        }
        let space = ConfigSpace::parse(&text).unwrap();
        assert_eq!(space.len(), 75);
        assert_eq!(ConfigSpace::parse(&space.to_pcs_string()).unwrap(), space);
    }
}
