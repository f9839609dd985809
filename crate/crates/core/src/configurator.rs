//! ROAR-style racing configurator with adaptive capping.
//!
//! Random challengers race the incumbent on a prefix of its (instance, seed)
//! list. The list order is fixed once per configurator run. A challenger is
//! dropped as soon as its mean on the shared prefix is worse, and replaces the
//! incumbent only with a strictly better mean on the whole list. After every
//! race the incumbent is run on one more pair at the full cutoff.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::result::{Metric, RunResult, RunStatus};
use crate::scenario::{Budget, ExecutorKind, Scenario, SeedPolicy};
use crate::space::{ConfigSpace, Configuration};
use crate::wrapper::{Wrapper, WrapperError};

/// Lower bound of any capped cutoff, in seconds.
pub const MIN_CUTOFF: f64 = 0.1;
/// Per-call overhead charged to the simulated clock.
pub const SIMULATED_CALL_OVERHEAD: f64 = 1e-3;

const STREAM_SCHEDULE: u64 = 1;
const STREAM_SEEDS: u64 = 2;
const STREAM_CHALLENGERS: u64 = 3;

#[derive(Debug, Error)]
pub enum ConfigureError {
    #[error("target run aborted: {detail}")]
    Abort {
        detail: String,
        partial: Box<ConfigureOutput>,
    },
    #[error(transparent)]
    Wrapper(#[from] WrapperError),
    #[error("cannot write run log: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot aggregate an empty result list")]
pub struct EmptyResults;

/// Mean cost where every unsuccessful run counts as the metric's penalty.
pub fn aggregate_cost(results: &[RunResult], metric: Metric, cutoff_max: f64) -> Result<f64, EmptyResults> {
    if results.is_empty() {
        return Err(EmptyResults);
    }
    let costs: Vec<f64> = results.iter().map(|r| run_cost(r, metric, cutoff_max)).collect();
    Ok(mean(&costs))
}

/// Cost of one run under `metric`. Successful runs keep their cost.
pub fn run_cost(r: &RunResult, metric: Metric, cutoff_max: f64) -> f64 {
    if r.status == RunStatus::Success {
        r.cost
    } else {
        metric.penalty(cutoff_max)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    for x in xs {
        sum += x;
    }
    sum / xs.len() as f64
}

/// Capped cutoff for the next challenger run.
pub fn adaptive_cap(incumbent_prefix_cost_sum: f64, challenger_spent: f64, multiplier: f64, cutoff_max: f64) -> f64 {
    let slack = multiplier * incumbent_prefix_cost_sum - challenger_spent;
    cutoff_max.min(MIN_CUTOFF.max(slack))
}

/// Seed for a new pair. `round` numbers the pairs already made for this
/// instance; `index` is the instance's position in the schedule.
pub fn next_seed<R: Rng + ?Sized>(
    policy: SeedPolicy,
    deterministic: bool,
    fixed_set: &[u64],
    rng: &mut R,
    index: usize,
    round: usize,
) -> u64 {
    if deterministic {
        return 0;
    }
    match policy {
        SeedPolicy::Managed => rng.random(),
        SeedPolicy::FixedSet(_) => fixed_set[(index + round) % fixed_set.len()],
    }
}

/// One round per distinct seed an instance can get.
pub fn rounds(policy: SeedPolicy, deterministic: bool, max_seeds: usize) -> usize {
    if deterministic {
        return 1;
    }
    match policy {
        SeedPolicy::Managed => max_seeds,
        SeedPolicy::FixedSet(k) => max_seeds.min(k),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub instance: String,
    pub seed: u64,
}

/// The full ordered (instance, seed) list for one configurator run.
pub fn pair_schedule(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    let mut order = scenario.train_instances.clone();
    rng.set_stream(STREAM_SCHEDULE);
    order.shuffle(rng);
    rng.set_stream(STREAM_SEEDS);
    let fixed: Vec<u64> = match scenario.seed_policy {
        SeedPolicy::FixedSet(k) => (0..k).map(|_| rng.random()).collect(),
        SeedPolicy::Managed => Vec::new(),
    };
    let n_rounds = rounds(scenario.seed_policy, scenario.deterministic, scenario.max_seeds_per_instance);
    let mut pairs = Vec::with_capacity(order.len() * n_rounds);
    for round in 0..n_rounds {
        for (index, instance) in order.iter().enumerate() {
            let seed = next_seed(scenario.seed_policy, scenario.deterministic, &fixed, rng, index, round);
            pairs.push(Pair {
                instance: instance.clone(),
                seed,
            });
        }
    }
    pairs
}

/// Why a run was issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// First evaluation of the default configuration.
    Initial,
    /// Challenger run inside a race.
    Race,
    /// Incumbent run on a fresh pair.
    Intensify,
    /// Default-configuration probe for scenario checks.
    Probe,
    Validation,
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub run_seed: u64,
    pub phase: Phase,
    /// Index of the race this run belongs to, if any.
    pub race: Option<usize>,
    pub config_id: String,
    pub config: serde_json::Value,
    pub instance: String,
    pub seed: u64,
    pub cutoff: f64,
    pub elapsed: f64,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedPair {
    pub pair: Pair,
    pub result: RunResult,
}

/// A configuration with its results on a prefix of the pair schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct IncumbentStats {
    pub config: Configuration,
    pub evaluated: Vec<EvaluatedPair>,
    pub aggregate: f64,
}

impl IncumbentStats {
    pub fn new(config: Configuration) -> Self {
        IncumbentStats {
            config,
            evaluated: Vec::new(),
            aggregate: f64::NAN,
        }
    }

    pub fn results(&self) -> Vec<RunResult> {
        self.evaluated.iter().map(|e| e.result.clone()).collect()
    }

    pub fn push(&mut self, pair: Pair, result: RunResult, metric: Metric, cutoff_max: f64) {
        debug_assert!(!self.evaluated.iter().any(|e| e.pair == pair), "duplicate pair");
        self.evaluated.push(EvaluatedPair { pair, result });
        self.aggregate = mean(&self.costs(metric, cutoff_max));
    }

    /// Recomputes the aggregate and checks the list for duplicates.
    pub fn check(&self, metric: Metric, cutoff_max: f64) -> bool {
        let mut seen = std::collections::HashSet::new();
        let unique = self
            .evaluated
            .iter()
            .all(|e| seen.insert((e.pair.instance.clone(), e.pair.seed)));
        let agg = aggregate_cost(&self.results(), metric, cutoff_max);
        unique && agg.map(|a| a.to_bits() == self.aggregate.to_bits()).unwrap_or(self.evaluated.is_empty())
    }

    fn costs(&self, metric: Metric, cutoff_max: f64) -> Vec<f64> {
        self.evaluated
            .iter()
            .map(|e| run_cost(&e.result, metric, cutoff_max))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RaceSettings {
    pub metric: Metric,
    pub cutoff_max: f64,
    pub capping: bool,
    pub multiplier: f64,
}

impl RaceSettings {
    pub fn from_scenario(s: &Scenario) -> Self {
        RaceSettings {
            metric: s.metric,
            cutoff_max: s.cutoff_max,
            capping: s.capping && s.metric.is_runtime(),
            multiplier: s.capping_multiplier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Replace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaceOutcome {
    pub decision: Decision,
    pub challenger: IncumbentStats,
    /// Target CPU spent on challenger runs in this race.
    pub race_cpu: f64,
    /// False when the budget ran out before a decision; the incumbent is kept.
    pub complete: bool,
}

/// Issues runs, tracks budget and clock, and logs every run.
pub struct Session<'a> {
    wrapper: Wrapper,
    budget: Budget,
    run_seed: u64,
    simulated_clock: bool,
    started: Instant,
    sim_elapsed: f64,
    pub runs: u64,
    pub target_cpu: f64,
    pub records: Vec<RunLogRecord>,
    log: Option<&'a mut dyn Write>,
    race_index: Option<usize>,
}

impl<'a> Session<'a> {
    pub fn new(wrapper: Wrapper, run_seed: u64, log: Option<&'a mut dyn Write>) -> Self {
        let s = wrapper.scenario();
        Session {
            budget: s.budget,
            simulated_clock: s.executor == ExecutorKind::Simulated,
            wrapper,
            run_seed,
            started: Instant::now(),
            sim_elapsed: 0.0,
            runs: 0,
            target_cpu: 0.0,
            records: Vec::new(),
            log,
            race_index: None,
        }
    }

    pub fn wrapper(&self) -> &Wrapper {
        &self.wrapper
    }

    pub fn scenario(&self) -> &Scenario {
        self.wrapper.scenario()
    }

    /// Wallclock seconds since the start; simulated seconds for the
    /// in-process executor.
    pub fn elapsed(&self) -> f64 {
        if self.simulated_clock {
            self.sim_elapsed
        } else {
            self.started.elapsed().as_secs_f64()
        }
    }

    pub fn exhausted(&self) -> bool {
        self.budget.runs.is_some_and(|b| self.runs >= b)
            || self.budget.wallclock.is_some_and(|w| self.elapsed() >= w)
    }

    /// Runs one pair unless the budget is used up.
    pub fn run(
        &mut self,
        config: &Configuration,
        pair: &Pair,
        cutoff: f64,
        phase: Phase,
    ) -> Result<Option<RunResult>, ConfigureError> {
        if self.exhausted() {
            return Ok(None);
        }
        let request = self.wrapper.request(config.clone(), &pair.instance, pair.seed, cutoff)?;
        let result = self.wrapper.run_request(&request);
        self.runs += 1;
        self.target_cpu += result.cpu_time;
        self.sim_elapsed += result.wall_time + SIMULATED_CALL_OVERHEAD;
        let record = RunLogRecord {
            run_seed: self.run_seed,
            phase,
            race: self.race_index,
            config_id: config.id().to_string(),
            config: config.to_json(),
            instance: request.instance.clone(),
            seed: pair.seed,
            cutoff,
            elapsed: self.elapsed(),
            result: result.clone(),
        };
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut **log, &record).map_err(std::io::Error::from)?;
            log.write_all(b"\n")?;
        }
        self.records.push(record);
        if result.status == RunStatus::Abort {
            return Err(ConfigureError::Abort {
                detail: result.detail.clone().unwrap_or_else(|| "ABORT".into()),
                partial: Box::new(ConfigureOutput::default()),
            });
        }
        Ok(Some(result))
    }
}

/// Races `challenger` against `incumbent` on the incumbent's pair list.
pub fn race_challenger(
    session: &mut Session<'_>,
    incumbent: &IncumbentStats,
    challenger: Configuration,
    settings: &RaceSettings,
) -> Result<RaceOutcome, ConfigureError> {
    assert!(!incumbent.evaluated.is_empty(), "incumbent needs at least one evaluated pair");
    let inc_costs = incumbent.costs(settings.metric, settings.cutoff_max);
    let mut stats = IncumbentStats::new(challenger);
    let mut spent = 0.0;
    let mut inc_sum = 0.0;
    let mut race_cpu = 0.0;
    for (j, ev) in incumbent.evaluated.iter().enumerate() {
        inc_sum += inc_costs[j];
        let cutoff = if settings.capping {
            adaptive_cap(inc_sum, spent, settings.multiplier, settings.cutoff_max)
        } else {
            settings.cutoff_max
        };
        let Some(result) = session.run(&stats.config, &ev.pair, cutoff, Phase::Race)? else {
            return Ok(RaceOutcome {
                decision: Decision::Keep,
                challenger: stats,
                race_cpu,
                complete: false,
            });
        };
        race_cpu += result.cpu_time;
        spent += result.cpu_time;
        stats.push(ev.pair.clone(), result, settings.metric, settings.cutoff_max);
        let inc_prefix = mean(&inc_costs[..=j]);
        if stats.aggregate > inc_prefix {
            return Ok(RaceOutcome {
                decision: Decision::Keep,
                challenger: stats,
                race_cpu,
                complete: true,
            });
        }
    }
    let decision = if stats.aggregate < incumbent.aggregate {
        Decision::Replace
    } else {
        Decision::Keep
    };
    Ok(RaceOutcome {
        decision,
        challenger: stats,
        race_cpu,
        complete: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEntry {
    pub elapsed: f64,
    pub target_cpu: f64,
    pub config: Configuration,
    /// None until the first run completes.
    pub train_cost: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub run_seed: u64,
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn final_entry(&self) -> Option<&TrajectoryEntry> {
        self.entries.last()
    }

    pub fn final_incumbent(&self) -> Option<&Configuration> {
        self.entries.last().map(|e| &e.config)
    }

    pub fn final_train_cost(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.train_cost)
    }

    fn push(&mut self, entry: TrajectoryEntry) {
        match self.entries.last_mut() {
            // same moment: the newer state supersedes
            Some(last) if entry.elapsed <= last.elapsed => *last = entry,
            _ => self.entries.push(entry),
        }
    }

    pub const CSV_HEADER: [&'static str; 5] = ["elapsed_s", "target_cpu_s", "train_cost", "config_id", "config_json"];

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for e in &self.entries {
            out.write_record([
                format!("{:.6}", e.elapsed),
                format!("{:.6}", e.target_cpu),
                e.train_cost.map(|c| format!("{c:.6}")).unwrap_or_default(),
                e.config.id().to_string(),
                e.config.to_json_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &std::path::Path, space: &ConfigSpace, run_seed: u64) -> Result<Self, String> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut t = Trajectory {
            run_seed,
            entries: Vec::new(),
        };
        for row in rdr.records() {
            let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
            let num = |i: usize| -> Result<f64, String> {
                row.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| format!("{}: bad number in column {i}", path.display()))
            };
            let json: serde_json::Value =
                serde_json::from_str(row.get(4).unwrap_or("")).map_err(|e| format!("{}: {e}", path.display()))?;
            let config = space.config_from_json(&json).map_err(|e| e.to_string())?;
            let train = row.get(2).unwrap_or("");
            t.entries.push(TrajectoryEntry {
                elapsed: num(0)?,
                target_cpu: num(1)?,
                config,
                train_cost: if train.is_empty() { None } else { Some(num(2)?) },
            });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConfigureOutput {
    pub trajectory: Trajectory,
    pub records: Vec<RunLogRecord>,
    pub incumbent: Option<IncumbentStats>,
    pub races: usize,
    pub runs: u64,
    pub target_cpu: f64,
}

/// One configurator run on the scenario's training instances.
pub fn configure(scenario: &Scenario, run_seed: u64) -> Result<ConfigureOutput, ConfigureError> {
    let wrapper = Wrapper::new(Arc::new(scenario.training_view()), format!("configure-{run_seed}"))?;
    configure_with(wrapper, run_seed, None)
}

/// Like [`configure`] with an explicit wrapper and an optional JSONL sink.
/// The wrapper must be bound to a scenario without test instances.
pub fn configure_with(
    wrapper: Wrapper,
    run_seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<ConfigureOutput, ConfigureError> {
    if !wrapper.scenario().test_instances.is_empty() {
        return Err(ConfigureError::Invalid(
            "configurator must be given the training view of a scenario".into(),
        ));
    }
    let mut session = Session::new(wrapper, run_seed, log);
    let mut out = ConfigureOutput::default();
    match configure_loop(&mut session, run_seed, &mut out) {
        Ok(()) => {
            out.records = std::mem::take(&mut session.records);
            out.runs = session.runs;
            out.target_cpu = session.target_cpu;
            Ok(out)
        }
        Err(ConfigureError::Abort { detail, .. }) => {
            out.records = std::mem::take(&mut session.records);
            out.runs = session.runs;
            out.target_cpu = session.target_cpu;
            Err(ConfigureError::Abort {
                detail,
                partial: Box::new(out),
            })
        }
        Err(e) => Err(e),
    }
}

fn configure_loop(session: &mut Session<'_>, run_seed: u64, out: &mut ConfigureOutput) -> Result<(), ConfigureError> {
    let scenario = session.scenario().clone();
    let settings = RaceSettings::from_scenario(&scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let pairs = pair_schedule(&scenario, &mut rng);
    let mut challenger_rng = ChaCha8Rng::seed_from_u64(run_seed);
    challenger_rng.set_stream(STREAM_CHALLENGERS);

    let default = scenario.space.default_config();
    let mut incumbent = IncumbentStats::new(default.clone());
    out.trajectory.run_seed = run_seed;

    let entry = |session: &Session<'_>, inc: &IncumbentStats| TrajectoryEntry {
        elapsed: session.elapsed(),
        target_cpu: session.target_cpu,
        config: inc.config.clone(),
        train_cost: (!inc.evaluated.is_empty()).then_some(inc.aggregate),
    };

    if let Some(r) = session.run(&default, &pairs[0], scenario.cutoff_max, Phase::Initial)? {
        incumbent.push(pairs[0].clone(), r, settings.metric, settings.cutoff_max);
    }
    out.trajectory.push(entry(session, &incumbent));
    if incumbent.evaluated.is_empty() {
        out.incumbent = Some(incumbent);
        return Ok(());
    }

    while !session.exhausted() {
        let challenger = scenario.space.sample(&mut challenger_rng);
        if challenger.id() == incumbent.config.id() {
            continue;
        }
        session.race_index = Some(out.races);
        let outcome = race_challenger(session, &incumbent, challenger, &settings)?;
        out.races += 1;
        let replaced = outcome.decision == Decision::Replace;
        if replaced {
            incumbent = outcome.challenger;
        }
        // intensification: one fresh pair for whoever holds the title
        let next = incumbent.evaluated.len();
        if next < pairs.len() {
            if let Some(r) = session.run(&incumbent.config, &pairs[next], scenario.cutoff_max, Phase::Intensify)? {
                incumbent.push(pairs[next].clone(), r, settings.metric, settings.cutoff_max);
            }
        }
        session.race_index = None;
        if replaced {
            out.trajectory.push(entry(session, &incumbent));
        }
    }
    // the last row always describes the returned incumbent
    let last = entry(session, &incumbent);
    if out.trajectory.entries.last().map(|l| l.train_cost) != Some(last.train_cost) {
        out.trajectory.push(last);
    }
    debug_assert!(incumbent.check(settings.metric, settings.cutoff_max));
    out.incumbent = Some(incumbent);
    Ok(())
}
