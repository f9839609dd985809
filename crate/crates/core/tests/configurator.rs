mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use acharness::configurator::{
    configure_with, pair_schedule, ConfigureError, Decision, IncumbentStats, Pair, Phase, RaceSettings, Session,
};
use acharness::result::RunStatus;
use acharness::synthetic::{synth_runtime_config, Landscape, SyntheticSetup};
use acharness::{configure, race_challenger, Configuration, Scenario, Trajectory, Wrapper};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(dir: &Path, setup: SyntheticSetup) -> Scenario {
    let path = setup.with("executor", "simulated").write(dir).unwrap();
    let mut s = Scenario::parse_file(&path).unwrap();
    s.temp_root = Some(dir.join("tmp"));
    s
}

fn bowl_setup(extra: &[(&str, &str)]) -> SyntheticSetup {
    let mut setup = SyntheticSetup::new(bowl(&[0.3, 0.7]), fixture());
    setup.cutoff = 10.0;
    setup.extra.push(("deterministic".into(), "true".into()));
    for (k, v) in extra {
        setup = setup.with(k, v);
    }
    setup
}

fn cfg(s: &Scenario, pairs: &[(&str, &str)]) -> Configuration {
    s.space.config_from_pairs(pairs.iter().copied()).unwrap()
}

fn true_mean(landscape: &Landscape, c: &Configuration, instances: &[String]) -> f64 {
    instances
        .iter()
        .map(|i| synth_runtime_config(landscape, c, i, 0).unwrap())
        .sum::<f64>()
        / instances.len() as f64
}

#[test]
fn finds_the_top_percent_of_a_bowl() {
    let dir = tempfile::tempdir().unwrap();
    let mut setup = bowl_setup(&[]);
    setup.landscape.hardness_spread = 0.5;
    let landscape = setup.landscape.clone();
    let s = scenario(dir.path(), setup);
    let out = configure(&s, 3).unwrap();
    let inc = out.trajectory.final_incumbent().unwrap();

    // brute force over a 101 x 101 grid
    let mut costs = Vec::new();
    for a in 0..=100 {
        for b in 0..=100 {
            let c = cfg(&s, &[("x0", &format!("{}", a as f64 / 100.0)), ("x1", &format!("{}", b as f64 / 100.0))]);
            costs.push(true_mean(&landscape, &c, &s.train_instances));
        }
    }
    let lo = costs.iter().cloned().fold(f64::MAX, f64::min);
    let hi = costs.iter().cloned().fold(f64::MIN, f64::max);
    let got = true_mean(&landscape, inc, &s.train_instances);
    assert!(got <= lo + 0.01 * (hi - lo), "{got} vs [{lo}, {hi}]");
    assert!(out.runs <= 2000);
}

#[test]
fn zero_budget_returns_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_runs", "0")]));
    let out = configure(&s, 0).unwrap();
    assert_eq!(out.trajectory.entries.len(), 1);
    assert_eq!(out.trajectory.final_incumbent().unwrap(), &s.space.default_config());
    assert_eq!(out.trajectory.final_train_cost(), None);
    assert_eq!(out.runs, 0);
}

#[test]
fn same_seed_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_runs", "300")]));
    let a = configure(&s, 11).unwrap();
    let b = configure(&s, 11).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    let c = configure(&s, 12).unwrap();
    assert_ne!(a.trajectory, c.trajectory);
}

#[test]
fn trajectory_and_log_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_runs", "400"), ("deterministic", "false")]).with("seed_policy", "managed"));
    let out = configure(&s, 5).unwrap();
    let t = &out.trajectory;
    assert!(t.entries.windows(2).all(|w| w[1].elapsed > w[0].elapsed));
    assert_eq!(t.entries[0].config, s.space.default_config());
    let inc = out.incumbent.as_ref().unwrap();
    assert_eq!(t.final_incumbent(), Some(&inc.config));
    assert_eq!(t.final_train_cost(), Some(inc.aggregate));
    assert!(inc.check(s.metric, s.cutoff_max));

    // only training instances, never above the scenario cutoff
    for r in &out.records {
        assert!(s.train_instances.contains(&r.instance), "{}", r.instance);
        assert!(!s.test_instances.contains(&r.instance));
        assert!(r.cutoff > 0.0 && r.cutoff <= s.cutoff_max);
        if r.phase != Phase::Race {
            assert_eq!(r.cutoff, s.cutoff_max);
        }
    }
    assert_eq!(out.records.len() as u64, out.runs);

    // every race shows up in the log
    let mut by_race: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in out.records.iter().filter(|r| r.phase == Phase::Race) {
        by_race.entry(r.race.unwrap()).or_default().push(r.result.cost);
    }
    assert_eq!(by_race.len(), out.races);
}

#[test]
fn wallclock_budget_bounds_target_cpu() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_wallclock", "60")]));
    let out = configure(&s, 1).unwrap();
    assert!(out.target_cpu <= 60.0 + s.cutoff_max, "{}", out.target_cpu);
    assert!(out.runs > 10);
}

#[test]
fn seed_policies_shape_the_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let fixed = scenario(&dir.path().join("a"), bowl_setup(&[("deterministic", "false"), ("seed_policy", "fixed:1")]));
    let pairs = pair_schedule(&fixed, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(pairs.len(), fixed.train_instances.len());
    assert!(pairs.iter().all(|p| p.seed == pairs[0].seed));

    let managed = scenario(&dir.path().join("b"), bowl_setup(&[("deterministic", "false")]));
    let pairs = pair_schedule(&managed, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(pairs.len(), managed.train_instances.len() * managed.max_seeds_per_instance);
    let first = &pairs[0].instance;
    let seeds: Vec<u64> = pairs.iter().filter(|p| &p.instance == first).map(|p| p.seed).collect();
    assert_eq!(seeds.len(), 5);
    assert!(seeds.windows(2).all(|w| w[0] != w[1]));

    let det = scenario(&dir.path().join("c"), bowl_setup(&[]));
    let pairs = pair_schedule(&det, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(pairs.len(), det.train_instances.len());
    assert!(pairs.iter().all(|p| p.seed == 0));
}

fn session_for(s: &Scenario) -> Session<'static> {
    Session::new(Wrapper::new(Arc::new(s.training_view()), "t-race").unwrap(), 0, None)
}

fn evaluated(session: &mut Session<'_>, c: Configuration, n: usize) -> IncumbentStats {
    let s = session.scenario().clone();
    let mut inc = IncumbentStats::new(c);
    for i in 0..n {
        let pair = Pair {
            instance: s.train_instances[i].clone(),
            seed: 0,
        };
        let r = session.run(&inc.config, &pair, s.cutoff_max, Phase::Intensify).unwrap().unwrap();
        inc.push(pair, r, s.metric, s.cutoff_max);
    }
    inc
}

#[test]
fn capped_loser_is_rejected_after_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("capping_multiplier", "1")]));
    let mut session = session_for(&s);
    let inc = evaluated(&mut session, cfg(&s, &[("x0", "0.3"), ("x1", "0.7")]), 3);
    assert_eq!(inc.aggregate, 1.0);
    let before = session.runs;
    let out = race_challenger(&mut session, &inc, cfg(&s, &[("x0", "1"), ("x1", "0")]), &RaceSettings::from_scenario(&s))
        .unwrap();
    assert_eq!(out.decision, Decision::Keep);
    assert_eq!(session.runs - before, 1);
    assert_eq!(out.challenger.evaluated[0].result.status, RunStatus::Timeout);
    assert!(out.race_cpu <= 1.0 + 1e-12);
}

#[test]
fn uniformly_better_challenger_replaces() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[]));
    let mut session = session_for(&s);
    let inc = evaluated(&mut session, cfg(&s, &[("x0", "1"), ("x1", "1")]), 4);
    let out = race_challenger(&mut session, &inc, cfg(&s, &[("x0", "0.3"), ("x1", "0.7")]), &RaceSettings::from_scenario(&s))
        .unwrap();
    assert_eq!(out.decision, Decision::Replace);
    assert_eq!(out.challenger.evaluated.len(), 4);
    assert!(out.challenger.aggregate < inc.aggregate);
    // an identical challenger ties and the incumbent stays
    let tie = race_challenger(&mut session, &inc, inc.config.clone(), &RaceSettings::from_scenario(&s)).unwrap();
    assert_eq!(tie.decision, Decision::Keep);
}

#[test]
fn runs_stop_when_the_budget_is_spent() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_runs", "3")]));
    let mut session = session_for(&s);
    let inc = evaluated(&mut session, cfg(&s, &[("x0", "1"), ("x1", "1")]), 2);
    let out = race_challenger(&mut session, &inc, cfg(&s, &[("x0", "0.3"), ("x1", "0.7")]), &RaceSettings::from_scenario(&s))
        .unwrap();
    assert!(!out.complete);
    assert_eq!(out.decision, Decision::Keep);
    assert!(session.exhausted());
}

#[test]
fn abort_ends_the_experiment_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    // the simulated executor refuses non-fixture commands, which is an ABORT
    let mut s = scenario(dir.path(), bowl_setup(&[]));
    s.command_template = "not-a-fixture {instance}".into();
    let err = configure(&s, 0).unwrap_err();
    match err {
        ConfigureError::Abort { detail, partial } => {
            assert!(detail.contains("not-a-fixture"), "{detail}");
            assert_eq!(partial.runs, 1);
            assert_eq!(partial.trajectory.entries.len(), 0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn test_instances_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[]));
    let w = Wrapper::new(Arc::new(s), "t").unwrap();
    assert!(matches!(configure_with(w, 0, None), Err(ConfigureError::Invalid(_))));
}

#[test]
fn run_log_and_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario(dir.path(), bowl_setup(&[("budget_runs", "200")]));
    let w = Wrapper::new(Arc::new(s.training_view()), "t-files").unwrap();
    let mut log = Vec::new();
    let out = configure_with(w, 2, Some(&mut log)).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count() as u64, out.runs);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("result").and_then(|r| r.get("status")).is_some());
        assert!(v.get("phase").is_some());
    }

    let path = dir.path().join("trajectory.csv");
    out.trajectory.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let csv_text = std::fs::read_to_string(&path).unwrap();
    assert!(csv_text.starts_with("elapsed_s,target_cpu_s,train_cost,config_id,config_json\n"));
    let back = Trajectory::read_csv(&path, &s.space, 2).unwrap();
    assert_eq!(back.entries.len(), out.trajectory.entries.len());
    for (a, b) in back.entries.iter().zip(&out.trajectory.entries) {
        assert_eq!(a.config, b.config);
        assert!((a.train_cost.unwrap() - b.train_cost.unwrap()).abs() < 1e-6);
    }
}
