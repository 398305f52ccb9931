use std::collections::BTreeMap;

use irs_noma::harness::{
    read_csv, run_experiment, write_csv, Placement, Sweep, SweepParam, SweepValue, SCHEMA_VERSION,
};
use irs_noma::{ExperimentConfig, ResultRow, Scheme};

const HEADER: &str = "trial,sweep_value,scheme,user_index,rate,q_linear,iterations,runtime_ms,seed,status";

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 2;
    cfg.master_seed = 99;
    cfg.scenario.elements = 4;
    cfg.solver.randomization_trials = 30;
    cfg
}

fn csv_text(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn row_count_is_trials_times_points_times_schemes_times_users() {
    let mut cfg = small_config();
    cfg.sweep = Some(Sweep {
        param: SweepParam::PowerDbm,
        values: vec![SweepValue::Number(0.0), SweepValue::Number(10.0), SweepValue::Number(20.0)],
    });
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * 3 * Scheme::ALL.len() * 2);
    assert!(rows.iter().all(|r| !r.failed()), "{rows:?}");

    cfg.schemes = vec![Scheme::IrsNoma, Scheme::Oma];
    cfg.scenario.placement = Placement::Random;
    cfg.sweep = Some(Sweep {
        param: SweepParam::Users,
        values: vec![SweepValue::Number(2.0), SweepValue::Number(3.0)],
    });
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2 * 2 * (2 + 3));
}

#[test]
fn rows_are_deterministic_and_round_trip() {
    let mut cfg = small_config();
    cfg.scenario.antennas = 2;
    let a = csv_text(&run_experiment(&cfg).unwrap());
    let b = csv_text(&run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().next().unwrap(), HEADER);
    let back = read_csv(a.as_bytes()).unwrap();
    assert_eq!(csv_text(&back), a);
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
}

#[test]
fn rates_agree_with_linear_sinr_and_seeds_are_per_scheme() {
    let rows = run_experiment(&small_config()).unwrap();
    for r in &rows {
        assert!((r.rate - (1.0 + r.q_linear).log2()).abs() <= 1e-9 * r.rate.max(1.0));
        assert_eq!(r.runtime_ms, 0.0);
    }
    // One solver seed per (trial, scheme), distinct across them.
    let mut seeds: BTreeMap<(usize, String), u64> = BTreeMap::new();
    for r in &rows {
        assert_eq!(*seeds.entry((r.trial, r.scheme.clone())).or_insert(r.seed), r.seed);
    }
    let mut distinct: Vec<u64> = seeds.values().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), seeds.len());
}

#[test]
fn user_count_trades_sum_rate_for_fairness() {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 4;
    cfg.master_seed = 5;
    cfg.schemes = vec![Scheme::IrsNoma];
    cfg.scenario.placement = Placement::Random;
    cfg.scenario.elements = 8;
    cfg.scenario.power_dbm = 10.0;
    cfg.solver.randomization_trials = 30;
    let users = [2usize, 4, 8, 16];
    cfg.sweep = Some(Sweep {
        param: SweepParam::Users,
        values: users.iter().map(|&k| SweepValue::Number(k as f64)).collect(),
    });
    let rows = run_experiment(&cfg).unwrap();
    assert!(rows.iter().all(|r| !r.failed()));

    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    let mut per_trial: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let k: usize = r.sweep_value.parse().unwrap();
        *sums.entry(k).or_default() += r.rate / cfg.trials as f64;
        per_trial.entry((k, r.trial)).or_default().push(r.rate);
    }
    for ((k, trial), rates) in &per_trial {
        let max = rates.iter().copied().fold(0.0, f64::max);
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min <= 1.1, "K={k} trial {trial}: rates {rates:?}");
    }
    let sum: Vec<f64> = users.iter().map(|k| sums[k]).collect();
    let peak = sum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(peak > 0 && peak < users.len() - 1, "sum rates by K {sum:?}");
}
