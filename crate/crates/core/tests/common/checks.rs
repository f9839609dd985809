//! Constructed scenarios for the `check_scenario` golden file.

use std::path::{Path, PathBuf};

use acharness::configurator::Pair;
use acharness::evaluation::{Cell, CostMatrix, SetTag};
use acharness::result::{Metric, RunStatus};
use acharness::scenario::ScenarioWarning;
use acharness::synthetic::SyntheticSetup;
use acharness::{check_scenario, Scenario};

pub fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/check_scenario.txt")
}

/// Default-configuration probe: `solved` of `n` runs succeed taking `cpu`
/// seconds each, the rest time out at `cutoff`.
pub fn probe(scenario: &Scenario, n: usize, solved: usize, cpu: f64) -> CostMatrix {
    let columns: Vec<Pair> = scenario.train_instances[..n]
        .iter()
        .map(|i| Pair { instance: i.clone(), seed: 0 })
        .collect();
    let cells = vec![(0..n)
        .map(|j| {
            if j < solved {
                Cell { status: RunStatus::Success, cost: cpu, cpu_time: cpu }
            } else {
                Cell {
                    status: RunStatus::Timeout,
                    cost: 10.0 * scenario.cutoff_max,
                    cpu_time: scenario.cutoff_max,
                }
            }
        })
        .collect()];
    CostMatrix {
        set: SetTag::Train,
        configs: vec![scenario.space.default_config()],
        columns,
        cells,
        metric: Metric::RuntimePar10,
        cutoff_max: scenario.cutoff_max,
    }
}

fn build(dir: &Path, name: &str, n_train: usize, extra: &[(&str, &str)]) -> Scenario {
    let mut setup = SyntheticSetup::new(super::bowl(&[0.3, 0.7]), super::fixture());
    setup.n_train = n_train;
    setup.n_test = 20;
    setup.cutoff = 10.0;
    for (k, v) in extra {
        setup = setup.with(k, v);
    }
    Scenario::parse_file(&setup.write(&dir.join(name)).unwrap()).unwrap()
}

/// (case name, warnings) for the healthy reference and each violation.
pub fn cases(dir: &Path) -> Vec<(String, Vec<ScenarioWarning>)> {
    let healthy = [("budget_wallclock", "100000"), ("deterministic", "true")];
    let mut out = Vec::new();
    let mut case = |name: &str, s: &Scenario, p: Option<&CostMatrix>| {
        out.push((name.to_string(), check_scenario(s, p)));
    };

    let s = build(dir, "healthy", 300, &healthy);
    // 82% solved by the default
    case("healthy", &s, Some(&probe(&s, 100, 82, 2.0)));

    let s = build(dir, "unsolvable", 300, &healthy);
    case("probe_half_solved", &s, Some(&probe(&s, 100, 50, 2.0)));

    // mean default runtime 10 s, budget 100 x that
    let s = build(dir, "tight", 300, &[("budget_wallclock", "1000"), ("deterministic", "true")]);
    case("budget_100x_mean_runtime", &s, Some(&probe(&s, 100, 100, 10.0)));

    let s = build(dir, "few_runs", 300, &[("budget_runs", "50"), ("deterministic", "true")]);
    case("budget_50_runs_no_probe", &s, None);

    let s = build(dir, "tiny", 10, &healthy);
    case("train_set_of_10", &s, None);

    let s = build(dir, "one_seed", 300, &[("budget_wallclock", "100000"), ("validation_seeds", "1")]);
    case("stochastic_single_validation_seed", &s, None);

    let s = build(dir, "fixed", 300, &[("budget_wallclock", "100000"), ("seed_policy", "fixed:1")]);
    case("stochastic_fixed_seed_set", &s, None);
    out
}

pub fn render(cases: &[(String, Vec<ScenarioWarning>)]) -> String {
    let mut text = String::new();
    for (name, warnings) in cases {
        text.push_str(&format!("[{name}]\n"));
        for w in warnings {
            text.push_str(&format!("{w}\n"));
        }
    }
    text
}
