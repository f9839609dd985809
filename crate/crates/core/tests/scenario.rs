mod common;

use std::collections::BTreeMap;

use acharness::scenario::{ScenarioError, WarningCode};
use acharness::{ConfigSpace, Scenario};
use common::checks;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn check_scenario_matches_the_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let got = checks::render(&checks::cases(dir.path()));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(checks::golden_path(), &got).unwrap();
    }
    let want = std::fs::read_to_string(checks::golden_path()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn each_violation_raises_exactly_its_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cases: BTreeMap<String, Vec<WarningCode>> = checks::cases(dir.path())
        .into_iter()
        .map(|(n, w)| (n, w.iter().map(|w| w.code).collect()))
        .collect();
    assert_eq!(cases["healthy"], vec![]);
    assert_eq!(cases["probe_half_solved"], vec![WarningCode::LowDefaultSolvability]);
    assert_eq!(cases["budget_100x_mean_runtime"], vec![WarningCode::SmallBudget]);
    assert_eq!(cases["budget_50_runs_no_probe"], vec![WarningCode::SmallBudget]);
    assert_eq!(cases["train_set_of_10"], vec![WarningCode::SmallTrainingSet]);
    assert_eq!(cases["stochastic_single_validation_seed"], vec![WarningCode::SingleValidationSeed]);
    assert_eq!(cases["stochastic_fixed_seed_set"], vec![WarningCode::FixedSeedSet]);
}

#[test]
fn three_hundred_second_cutoff_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = ScenarioFiles {
        pcs: "x real [0,1] default 0.5\n",
        command: "solver {instance}".into(),
        train: vec!["a".into(), "b".into()],
        test: vec!["c".into(), "d".into()],
        cutoff: 300.0,
        extra: vec![],
    }
    .write(dir.path());
    let s = Scenario::parse_file(&path).unwrap();
    assert_eq!(s.cutoff_max, 300.0);
    assert_eq!(s.train_instances.len(), 2);
}

#[test]
fn missing_instance_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = ScenarioFiles {
        pcs: "x real [0,1] default 0.5\n",
        command: "solver {instance}".into(),
        train: vec!["a".into()],
        test: vec!["b".into()],
        cutoff: 10.0,
        extra: vec![],
    }
    .write(dir.path());
    std::fs::remove_file(dir.path().join("b")).unwrap();
    let err = Scenario::parse_file(&path).unwrap_err();
    assert!(err.to_string().contains('b'), "{err}");
}

#[test]
fn seventy_five_parameters() {
    let text: String = (0..75).map(|i| format!("p{i} real [0,1] default 0.5\n")).collect();
    assert_eq!(ConfigSpace::parse(&text).unwrap().len(), 75);
}

#[test]
fn seed_is_not_a_parameter() {
    assert!(ConfigSpace::parse("seed integer [0,100] default 1\n").is_err());
}

#[test]
fn bad_budget_is_a_field_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = ScenarioFiles {
        pcs: "x real [0,1] default 0.5\n",
        command: "solver {instance}".into(),
        train: vec!["a".into()],
        test: vec!["b".into()],
        cutoff: 10.0,
        extra: vec![("budget_runs", "lots".into())],
    }
    .write(dir.path());
    match Scenario::parse_file(&path).unwrap_err() {
        ScenarioError::Invalid { field, .. } => assert_eq!(field, "budget_runs"),
        e => panic!("{e:?}"),
    }
}

/// PCS text for a random space: reals, integers and categoricals, where some
/// parameters depend on an earlier categorical.
fn space_text() -> impl Strategy<Value = String> {
    let param = (0u8..3, -20i32..20, 1i32..40, any::<bool>(), 2usize..5, any::<u32>());
    prop::collection::vec(param, 1..7).prop_map(|specs| {
        let mut lines = Vec::new();
        let mut cats: Vec<(String, usize)> = Vec::new();
        for (i, (kind, lo, width, log, k, pick)) in specs.into_iter().enumerate() {
            let name = format!("p{i}");
            let mut line = match kind {
                0 => {
                    let (lo, hi) = if log { (1.0 + lo.abs() as f64, 1.0 + lo.abs() as f64 + width as f64) } else { (lo as f64 / 4.0, (lo + width) as f64 / 4.0) };
                    let d = lo + (hi - lo) * (pick % 5) as f64 / 4.0;
                    format!("{name} real [{lo},{hi}] default {d}{}", if log { " log" } else { "" })
                }
                1 => {
                    let (lo, hi) = if log { (1 + lo.abs(), 1 + lo.abs() + width) } else { (lo, lo + width) };
                    let d = lo + (pick as i32).rem_euclid(width + 1);
                    format!("{name} integer [{lo},{hi}] default {d}{}", if log { " log" } else { "" })
                }
                _ => {
                    let vals: Vec<String> = (0..k).map(|j| format!("v{j}")).collect();
                    let d = &vals[pick as usize % k];
                    let l = format!("{name} categorical {{{}}} default {d}", vals.join(","));
                    cats.push((name.clone(), k));
                    l
                }
            };
            if pick % 3 == 0 {
                if let Some((parent, k)) = cats.iter().rev().find(|(p, _)| *p != name) {
                    line.push_str(&format!(" | {parent}==v{}", pick as usize % k));
                }
            }
            lines.push(line);
        }
        lines.join("\n") + "\n"
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_always_validate(text in space_text(), seed in any::<u64>()) {
        let space = ConfigSpace::parse(&text).unwrap();
        prop_assert!(space.validate(&space.default_config()).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let c = space.sample(&mut rng);
            prop_assert!(space.validate(&c).is_empty(), "{:?}", space.validate(&c));
        }
    }

    #[test]
    fn spaces_round_trip(text in space_text()) {
        let space = ConfigSpace::parse(&text).unwrap();
        let again = ConfigSpace::parse(&space.to_pcs_string()).unwrap();
        prop_assert_eq!(space, again);
    }

    #[test]
    fn ids_ignore_order(text in space_text(), seed in any::<u64>()) {
        let space = ConfigSpace::parse(&text).unwrap();
        let c = space.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let pairs: Vec<(String, String)> = c.string_values().into_iter().collect();
        let forward = space.config_from_pairs(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap();
        let backward = space.config_from_pairs(pairs.iter().rev().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap();
        prop_assert_eq!(forward.id(), c.id());
        prop_assert_eq!(backward.id(), c.id());
    }

    #[test]
    fn scenarios_round_trip(cutoff in 0.5f64..500.0, runs in 1u64..5000, det in any::<bool>(), policy in 0usize..3) {
        let dir = tempfile::tempdir().unwrap();
        let mut extra = vec![("budget_runs", runs.to_string()), ("deterministic", det.to_string())];
        if policy > 0 {
            extra.push(("seed_policy", format!("fixed:{policy}")));
        }
        let path = ScenarioFiles {
            pcs: "alg categorical {a,b} default a\nbeta real [0,1] default 0.1 | alg==b\n",
            command: "solver -s {seed} {params} {instance}".into(),
            train: vec!["i/a.cnf".into(), "i/b.cnf".into()],
            test: vec!["i/c.cnf".into()],
            cutoff,
            extra,
        }
        .write(dir.path());
        let s = Scenario::parse_file(&path).unwrap();
        let out = dir.path().join("copy");
        std::fs::create_dir_all(&out).unwrap();
        let again = Scenario::parse_file(&s.write_to_dir(&out).unwrap()).unwrap();
        prop_assert_eq!(s, again);
    }
}
