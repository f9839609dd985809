mod common;

use std::path::PathBuf;

use acharness::configurator::{Phase, RunLogRecord};
use acharness::diagnostics::{experiment_health, sanity_check_result, scan_orphans, HealthLevel, HealthThresholds};
use acharness::result::{Anomaly, ExitStatus, Reported, RunResult, RunStatus, Verdict};
use acharness::sandbox::{execute_limited, Executor, ProcessSandbox, ResourceLimits};
use acharness::synthetic::SyntheticSetup;
use acharness::wrapper::RunRequest;
use acharness::{configure, ConfigSpace, Scenario};
use common::*;

fn request(cutoff: f64) -> RunRequest {
    let space = ConfigSpace::parse("x real [0,1] default 0.5\n").unwrap();
    RunRequest {
        config: space.default_config(),
        instance: "i1".into(),
        seed: 1,
        cutoff,
        limits: ResourceLimits::new(cutoff, 1024.0, 1.0),
    }
}

fn result(status: RunStatus, cpu: f64, wall: f64) -> RunResult {
    RunResult {
        status,
        cost: cpu,
        cpu_time: cpu,
        wall_time: wall,
        max_memory: 10.0,
        seed: 1,
        exit: ExitStatus::Code(0),
        verdict: Verdict::NotChecked,
        reported: Reported::default(),
        anomalies: vec![],
        artifacts_dir: None,
        detail: None,
    }
}

fn record(phase: RunStatus, race: bool) -> RunLogRecord {
    RunLogRecord {
        run_seed: 0,
        phase: if race { Phase::Race } else { Phase::Intensify },
        race: race.then_some(0),
        config_id: "c".into(),
        config: serde_json::json!({}),
        instance: "i1".into(),
        seed: 1,
        cutoff: 10.0,
        elapsed: 0.0,
        result: result(phase, 1.0, 1.0),
    }
}

#[test]
fn cpu_far_beyond_the_cutoff() {
    let got = sanity_check_result(&result(RunStatus::Timeout, 40.0, 40.0), &request(10.0));
    assert_eq!(got.len(), 1);
    assert!(matches!(got[0], Anomaly::CutoffNotRespected { cpu_time, cutoff } if cpu_time == 40.0 && cutoff == 10.0));
}

#[test]
fn negative_self_reported_runtime() {
    let mut r = result(RunStatus::Success, 1.0, 1.0);
    r.reported.runtime = Some(-4.2);
    let got = sanity_check_result(&r, &request(10.0));
    assert_eq!(
        got,
        vec![Anomaly::FaultyReportedNumber {
            field: "runtime".into(),
            value: "-4.2".into()
        }]
    );
}

#[test]
fn waiting_target() {
    let got = sanity_check_result(&result(RunStatus::Success, 1.0, 10.0), &request(30.0));
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].code(), "wallclock_exceeds_cpu");
    // a timeout that idled is not a success, so it is not flagged
    assert!(sanity_check_result(&result(RunStatus::Timeout, 1.0, 10.0), &request(30.0)).is_empty());
    // tiny absolute gaps are noise
    assert!(sanity_check_result(&result(RunStatus::Success, 0.01, 0.2), &request(30.0)).is_empty());
}

#[test]
fn clean_result_has_no_anomalies() {
    let got = sanity_check_result(&result(RunStatus::Success, 9.9, 10.0), &request(10.0));
    assert!(got.is_empty());
    let mut nan = result(RunStatus::Success, 1.0, 1.0);
    nan.reported.quality = Some(f64::NAN);
    assert_eq!(sanity_check_result(&nan, &request(10.0))[0].code(), "faulty_reported_number");
}

#[test]
fn health_of_a_clean_experiment() {
    let records: Vec<RunLogRecord> = (0..20).map(|i| record(RunStatus::Success, i % 2 == 0)).collect();
    let h = experiment_health(&records, &[10.0, 12.0, 11.0], &[], HealthThresholds::default());
    assert_eq!(h.level, HealthLevel::Healthy);
    assert_eq!(h.level.exit_code(), 0);
    assert_eq!(h.challenger_runs, 10);
    assert!(h.warnings.is_empty());
}

#[test]
fn forty_percent_crashes() {
    let mut records: Vec<RunLogRecord> = (0..6).map(|_| record(RunStatus::Success, true)).collect();
    records.extend((0..4).map(|_| record(RunStatus::Crashed, true)));
    // incumbent crashes do not count
    records.extend((0..10).map(|_| record(RunStatus::Crashed, false)));
    let h = experiment_health(&records, &[], &[], HealthThresholds::default());
    assert_eq!(h.crashed_challenger_runs, 4);
    assert!((h.crash_rate - 0.4).abs() < 1e-12);
    assert_eq!(h.level, HealthLevel::Warnings);
    assert_eq!(h.level.exit_code(), 1);
    assert_eq!(h.warnings.len(), 1);
}

#[test]
fn diverging_independent_runs() {
    let h = experiment_health(&[], &[10.0, 80.0], &[], HealthThresholds::default());
    assert_eq!(h.variance_ratio, Some(8.0));
    assert_eq!(h.level, HealthLevel::Warnings);
    let h = experiment_health(&[], &[10.0, 40.0], &[], HealthThresholds::default());
    assert_eq!(h.level, HealthLevel::Healthy);
}

#[test]
fn anomalies_and_orphans_dominate() {
    let mut r = record(RunStatus::Success, true);
    r.result.anomalies.push(Anomaly::OrphansLeft { count: 1 });
    let h = experiment_health(&[r.clone(), r], &[10.0, 80.0], &[], HealthThresholds::default());
    assert_eq!(h.anomaly_counts["orphans_left"], 2);
    assert_eq!(h.level.exit_code(), 2);
    let h = experiment_health(&[], &[], &[4242], HealthThresholds::default());
    assert_eq!(h.level, HealthLevel::Anomalies);
}

#[test]
fn orphan_scan_after_clean_and_broken_runs() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let limits = ResourceLimits::new(0.4, 1024.0, 0.2);
    let escape = fixture_argv(&["--mode", "fork_escape", "--runtime", "30"]);

    let tag = "t-diag/clean";
    execute_limited(&escape, &limits, dir.path(), &no_env(), tag).unwrap();
    assert_eq!(scan_orphans("t-diag/clean").unwrap(), Vec::<i32>::new());

    let tag = "t-diag/broken";
    ProcessSandbox { kill_tree: false }
        .execute(&escape, &limits, dir.path(), &no_env(), tag)
        .unwrap();
    let found = scan_orphans("t-diag").unwrap();
    reap_tagged(tag);
    assert!(!found.is_empty());
    assert!(scan_orphans("t-diag").unwrap().is_empty());
}

#[test]
fn healthy_real_run_reports_nothing() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut setup = SyntheticSetup::new(bowl(&[0.3]), fixture());
    setup.landscape.scale = 0.05;
    setup.cutoff = 1.0;
    setup.n_train = 4;
    let setup = setup.with("budget_runs", 12).with("deterministic", "true");
    let path: PathBuf = setup.write(dir.path()).unwrap();
    let mut s = Scenario::parse_file(&path).unwrap();
    s.temp_root = Some(dir.path().join("tmp"));
    let out = configure(&s, 1).unwrap();
    assert!(out.runs >= 12);
    let finals: Vec<f64> = out.trajectory.final_train_cost().into_iter().collect();
    let h = experiment_health(&out.records, &finals, &scan_orphans("configure-1").unwrap(), HealthThresholds::default());
    assert_eq!(h.level, HealthLevel::Healthy, "{h:?}");
    assert!(out.records.iter().all(|r| r.result.status == RunStatus::Success));
}
