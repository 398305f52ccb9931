//! Acceptance suite. Every criterion prints one PASS/FAIL line; the binary
//! exits non-zero when any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 1 5 12`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use irs_noma::baselines::{noma_no_irs, oma_maxmin, quantized_result, Mode, OmaPhases, QuantizationSpec};
use irs_noma::channels::{dbm_to_watts, derive_seed, rng_from, ChannelSet, PhaseConfig};
use irs_noma::harness::{
    closed_form_power_score, exhaustive_order_oracle, grid_phase_oracle, run_experiment, trial_channels,
    write_csv, ExperimentConfig, Placement, Point, Scheme, Sweep, SweepParam, SweepValue,
};
use irs_noma::miso::{beamforming_opt, rank_profile, solve_miso};
use irs_noma::numerics::ComplexMatrix;
use irs_noma::ordering::{max_combined_strength_detailed, order_users, sort_ascending};
use irs_noma::phase_step::{min_target_sinr, Bisection};
use irs_noma::sdp::{solve, ConstraintMatrix, Relation, SdpProblem, SdpSettings, SdpStatus, Sense};
use irs_noma::siso::{
    closed_form_phases_two_user, optimal_power_allocation, sinr_siso, sinr_upper_bound, solve_siso,
    strengths_at, SolveResult, SolverConfig,
};

type Outcome = Result<String, String>;

// ---------------------------------------------------------------------------
// Blanket monotonicity bookkeeping: every joint solve in the suite is checked.

static SOLVES_CHECKED: AtomicUsize = AtomicUsize::new(0);
static TRACE_VIOLATIONS: Mutex<Vec<String>> = Mutex::new(Vec::new());

fn track(label: &str, r: &SolveResult) {
    SOLVES_CHECKED.fetch_add(1, Ordering::Relaxed);
    for w in r.q_trace.windows(2) {
        if w[1] < w[0] - 1e-9 * w[0].abs().max(1.0) {
            TRACE_VIOLATIONS
                .lock()
                .unwrap()
                .push(format!("{label}: {:?}", r.q_trace));
            return;
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Scenario helpers.

fn scenario(users: usize, elements: usize, antennas: usize, power_dbm: f64, seed: u64) -> (ExperimentConfig, Point) {
    let mut cfg = ExperimentConfig::default();
    cfg.master_seed = seed;
    cfg.scenario.users = users;
    cfg.scenario.elements = elements;
    cfg.scenario.antennas = antennas;
    cfg.scenario.power_dbm = power_dbm;
    if users > cfg.scenario.geometry.user_positions.len() {
        cfg.scenario.placement = Placement::Random;
    }
    let point = cfg.points().unwrap().remove(0);
    (cfg, point)
}

fn drop_channels(cfg: &ExperimentConfig, point: &Point, trial: usize) -> ChannelSet {
    trial_channels(cfg, point, trial).unwrap()
}

fn solver(power_dbm: f64, seed: u64) -> SolverConfig {
    SolverConfig {
        power: dbm_to_watts(power_dbm),
        seed,
        ..SolverConfig::default()
    }
}

fn solve_ordered(ch: &ChannelSet, mode: Mode, cfg: &SolverConfig) -> SolveResult {
    let ordering = order_users(ch, cfg.randomization_trials, cfg.seed).unwrap();
    let r = match mode {
        Mode::Siso => solve_siso(ch, &ordering, cfg).unwrap(),
        Mode::Miso => solve_miso(ch, &ordering, cfg).unwrap(),
    };
    track("joint solve", &r);
    r
}

// ---------------------------------------------------------------------------
// 1. Closed-form power split against the equal-SINR recursion.

/// Power fractions meeting SINR `q` for every user with equality,
/// computed from the strongest user backwards.
fn recursion_fractions(s: &[f64], snr: f64, q: f64) -> Vec<f64> {
    let k = s.len();
    let mut alpha = vec![0.0; k];
    let mut tail = 0.0;
    for i in (0..k).rev() {
        alpha[i] = q * (tail + 1.0 / (snr * s[i]));
        tail += alpha[i];
    }
    alpha
}

/// The total of the recursion fractions grows strictly with `q`; bisect it to one.
fn recursion_oracle(s: &[f64], snr: f64) -> f64 {
    let total = |q: f64| recursion_fractions(s, snr, q).iter().sum::<f64>();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while total(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_1() -> Outcome {
    let mut rng = rng_from(101);
    let mut worst_q = 0.0f64;
    let mut worst_imbalance = 0.0f64;
    for _ in 0..500 {
        let k = rng.random_range(2..=8);
        let mut s: Vec<f64> = (0..k).map(|_| 10f64.powf(rng.random_range(-6.0..0.0))).collect();
        s.sort_by(f64::total_cmp);
        let snr = 10f64.powf(rng.random_range(0.0..6.0));
        let (alpha, q) = optimal_power_allocation(&s, snr, 1.0).map_err(|e| e.to_string())?;
        let q_ref = recursion_oracle(&s, snr);
        worst_q = worst_q.max((q - q_ref).abs() / q_ref);
        let sinrs: Vec<f64> = (0..k).map(|i| sinr_siso(&s, &alpha, snr, 1.0, i)).collect();
        let hi = sinrs.iter().copied().fold(f64::MIN, f64::max);
        let lo = sinrs.iter().copied().fold(f64::MAX, f64::min);
        worst_imbalance = worst_imbalance.max((hi - lo) / lo);
    }
    check(worst_q <= 1e-8, || format!("max relative Q error {worst_q:e}"))?;
    check(worst_imbalance <= 1e-8, || format!("max SINR imbalance {worst_imbalance:e}"))?;
    Ok(format!("max |ΔQ|/Q {worst_q:.2e}, max imbalance {worst_imbalance:.2e}"))
}

// ---------------------------------------------------------------------------
// 2. Hand-derived two-user cases.

fn criterion_2() -> Outcome {
    let (_, q1) = optimal_power_allocation(&[1.0, 1.0], 1.0, 1.0).map_err(|e| e.to_string())?;
    let (_, q2) = optimal_power_allocation(&[1.0, 4.0], 10.0, 1.0).map_err(|e| e.to_string())?;
    let e1 = (q1 - (2f64.sqrt() - 1.0)).abs();
    let e2 = (q2 - (-5.0 + 185f64.sqrt()) / 2.0).abs();
    check(e1 <= 1e-10 && e2 <= 1e-10, || format!("errors {e1:e}, {e2:e}"))?;
    Ok(format!("errors {e1:.1e}, {e2:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. Rank of the lifted beamforming solution.

fn criterion_3() -> Outcome {
    let mut rng = rng_from(303);
    let mut max_rank = 0;
    let mut histogram = [0usize; 5];
    for trial in 0..100 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=4);
        let m = rng.random_range(2..=6);
        let (cfg, point) = scenario(k, m, n, 10.0, 3000 + trial);
        let ch = drop_channels(&cfg, &point, 0);
        let phases = PhaseConfig::from_theta((0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect());
        let order = sort_ascending(&strengths_at(&ch, &phases).map_err(|e| e.to_string())?);
        let ch = ch.permuted(&order).map_err(|e| e.to_string())?;
        let power = dbm_to_watts(10.0);
        let bracket = Bisection::new(0.0, sinr_upper_bound(&ch, power).map_err(|e| e.to_string())?, 1e-4)
            .map_err(|e| e.to_string())?;
        let (beams, _) = beamforming_opt(&ch, &phases, power, &bracket).map_err(|e| e.to_string())?;
        for r in rank_profile(&beams, 1e-6).map_err(|e| e.to_string())? {
            max_rank = max_rank.max(r);
            histogram[r.min(4)] += 1;
        }
    }
    check(max_rank <= 2, || format!("rank {max_rank} found; histogram {histogram:?}"))?;
    Ok(format!("max rank {max_rank}, blocks by rank 0..4 {histogram:?}"))
}

// ---------------------------------------------------------------------------
// 4. Monotone objective traces; evaluated after every other criterion.

fn criterion_4() -> Outcome {
    // A dedicated batch so both solver families are covered even when run alone.
    for (mode, n) in [(Mode::Siso, 1), (Mode::Miso, 3)] {
        for trial in 0..5 {
            let (cfg, point) = scenario(3, 6, n, 10.0, 404);
            let ch = drop_channels(&cfg, &point, trial);
            solve_ordered(&ch, mode, &solver(10.0, trial as u64));
        }
    }
    let count = SOLVES_CHECKED.load(Ordering::Relaxed);
    let violations = TRACE_VIOLATIONS.lock().unwrap();
    check(violations.is_empty(), || {
        format!("{} of {count} traces decrease, first {}", violations.len(), violations[0])
    })?;
    Ok(format!("{count} joint solves, all traces non-decreasing"))
}

// ---------------------------------------------------------------------------
// 5. Two-user closed-form phases at high power.

fn closed_form_rate(ch: &ChannelSet, power: f64, seed: u64) -> f64 {
    let ordering = order_users(ch, 400, seed).unwrap();
    let ordered = ch.permuted(&ordering.permutation).unwrap();
    let phases = closed_form_phases_two_user(&ordered).unwrap();
    let (alpha, _) = optimal_power_allocation(&strengths_at(&ordered, &phases).unwrap(), power, ch.noise_power).unwrap();
    (1.0 + min_target_sinr(&ordered, &phases, &alpha.beams(power)).unwrap()).log2()
}

fn criterion_5() -> Outcome {
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for (p_dbm, tol) in [(40.0, 0.02), (16.0, 0.10), (20.0, 0.10), (25.0, 0.10), (30.0, 0.10)] {
        let (cfg, point) = scenario(2, 8, 1, p_dbm, 505);
        let pairs: Vec<(f64, f64)> = (0..50)
            .into_par_iter()
            .map(|t| {
                let ch = drop_channels(&cfg, &point, t);
                let sc = solver(p_dbm, t as u64);
                let general = solve_ordered(&ch, Mode::Siso, &sc).min_rate();
                (closed_form_rate(&ch, sc.power, t as u64), general)
            })
            .collect();
        let cf = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let general = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let gap = (cf - general).abs() / general;
        details.push(format!("{p_dbm} dBm gap {:.2}%", 100.0 * gap));
        if gap > tol {
            failures.push(format!("{p_dbm} dBm: closed form {cf:.4} vs general {general:.4}"));
        }
    }
    check(failures.is_empty(), || failures.join("; "))?;
    Ok(details.join(", "))
}

// ---------------------------------------------------------------------------
// 6. Relaxation quality against a 64-level phase grid.

fn criterion_6() -> Outcome {
    let p_dbm = 10.0;
    let mut within = 0;
    let mut bound_misses = 0;
    let mut worst_ratio = f64::INFINITY;
    let drops = 50;
    for t in 0..drops {
        let m = if t % 2 == 0 { 3 } else { 2 };
        let (cfg, point) = scenario(2, m, 1, p_dbm, 606);
        let ch = drop_channels(&cfg, &point, t);
        let sc = solver(p_dbm, t as u64);
        let q_alg = solve_ordered(&ch, Mode::Siso, &sc).q_star;
        let (q_grid, _) = grid_phase_oracle(&ch, 64, closed_form_power_score(sc.power, ch.noise_power))
            .map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.min(q_alg / q_grid);
        if q_alg >= 0.95 * q_grid {
            within += 1;
        }
        for u in 0..2 {
            let s = max_combined_strength_detailed(&ch, u, 400, derive_seed(t as u64, &[u as u64]))
                .map_err(|e| e.to_string())?;
            if s.strength < PI / 4.0 * s.relaxation_bound {
                bound_misses += 1;
            }
        }
    }
    check(within * 10 >= drops * 9, || format!("{within}/{drops} drops within 5% of the grid"))?;
    check(bound_misses == 0, || format!("{bound_misses} of {} instances below π/4 of the bound", 2 * drops))?;
    Ok(format!(
        "{within}/{drops} drops within 5% (worst ratio {worst_ratio:.4}), π/4 bound met on {} instances",
        2 * drops
    ))
}

// ---------------------------------------------------------------------------
// 7. Strength-based ordering against exhaustive search.

fn criterion_7() -> Outcome {
    let (cfg, point) = scenario(3, 2, 1, 10.0, 707);
    let gaps: Vec<f64> = (0..20)
        .into_par_iter()
        .map(|t| {
            let ch = drop_channels(&cfg, &point, t);
            let sc = solver(10.0, t as u64);
            let q = solve_ordered(&ch, Mode::Siso, &sc).q_star;
            let (_, q_best) = exhaustive_order_oracle(&ch, Mode::Siso, &sc).unwrap();
            (q_best - q).max(0.0) / q_best
        })
        .collect();
    let g = mean(&gaps);
    check(g <= 0.03, || format!("mean gap {:.2}%", 100.0 * g))?;
    Ok(format!("mean gap {:.3}%, max {:.3}%", 100.0 * g, 100.0 * gaps.iter().copied().fold(0.0, f64::max)))
}

// ---------------------------------------------------------------------------
// 8. Benchmark ordering at 10 dBm.

const BENCHMARK_ELEMENTS: usize = 32;

fn scheme_rates(ch: &ChannelSet, mode: Mode, sc: &SolverConfig) -> [f64; 4] {
    let irs_noma = solve_ordered(ch, mode, sc).min_rate();
    let irs_oma = oma_maxmin(ch, sc.power, OmaPhases::Shared, sc.randomization_trials, sc.seed)
        .unwrap()
        .min_rate;
    let noma = noma_no_irs(ch, mode, sc).unwrap();
    track("noma", &noma);
    let oma = oma_maxmin(ch, sc.power, OmaPhases::None, 1, sc.seed).unwrap().min_rate;
    [irs_noma, irs_oma, noma.min_rate(), oma]
}

fn criterion_8() -> Outcome {
    let mut details = Vec::new();
    let mut failures = Vec::new();
    for (n, mode) in [(1, Mode::Siso), (4, Mode::Miso)] {
        let (cfg, point) = scenario(2, BENCHMARK_ELEMENTS, n, 10.0, 808);
        let rates: Vec<[f64; 4]> = (0..100)
            .into_par_iter()
            .map(|t| scheme_rates(&drop_channels(&cfg, &point, t), mode, &solver(10.0, t as u64)))
            .collect();
        let m: Vec<f64> = (0..4).map(|i| mean(&rates.iter().map(|r| r[i]).collect::<Vec<_>>())).collect();
        details.push(format!(
            "N={n}: irs-noma {:.3} > irs-oma {:.3} > noma {:.3} > oma {:.3}",
            m[0], m[1], m[2], m[3]
        ));
        if !(m[0] > m[1] && m[1] > m[2] && m[2] > m[3]) {
            failures.push(details.last().unwrap().clone());
        }
    }
    check(failures.is_empty(), || failures.join("; "))?;
    Ok(details.join("; "))
}

// ---------------------------------------------------------------------------
// 9. Finite phase resolution.

fn criterion_9() -> Outcome {
    let (cfg, point) = scenario(2, 16, 1, 10.0, 909);
    let specs = [
        QuantizationSpec::Bits(1),
        QuantizationSpec::Bits(2),
        QuantizationSpec::Bits(3),
        QuantizationSpec::Bits(4),
        QuantizationSpec::Continuous,
    ];
    let per_drop: Vec<Vec<f64>> = (0..100)
        .into_par_iter()
        .map(|t| {
            let ch = drop_channels(&cfg, &point, t);
            let sc = solver(10.0, t as u64);
            let r = solve_ordered(&ch, Mode::Siso, &sc);
            specs
                .iter()
                .map(|&b| quantized_result(&ch, &r, b, sc.power).unwrap().min_rate())
                .collect()
        })
        .collect();
    let m: Vec<f64> = (0..specs.len())
        .map(|i| mean(&per_drop.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .collect();
    check(m.windows(2).take(3).all(|w| w[1] >= w[0] - 1e-3), || {
        format!("mean rate by bits not monotone: {m:?}")
    })?;
    let loss = (m[4] - m[3]).abs() / m[4];
    check(loss <= 0.05, || format!("4-bit loss {:.2}%", 100.0 * loss))?;
    Ok(format!(
        "B=1..4 {:.4} {:.4} {:.4} {:.4}, continuous {:.4}, 4-bit loss {:.2}%",
        m[0],
        m[1],
        m[2],
        m[3],
        m[4],
        100.0 * loss
    ))
}

// ---------------------------------------------------------------------------
// 10. Growth with the number of elements.

fn criterion_10() -> Outcome {
    let mut means = Vec::new();
    for m in [4, 8, 16] {
        let (cfg, point) = scenario(2, m, 1, 10.0, 1010);
        let rates: Vec<f64> = (0..100)
            .into_par_iter()
            .map(|t| solve_ordered(&drop_channels(&cfg, &point, t), Mode::Siso, &solver(10.0, t as u64)).min_rate())
            .collect();
        means.push(mean(&rates));
    }
    check(means.windows(2).all(|w| w[1] > w[0]), || format!("means {means:?}"))?;
    Ok(format!("M=4 {:.4}, M=8 {:.4}, M=16 {:.4}", means[0], means[1], means[2]))
}

// ---------------------------------------------------------------------------
// 11. Byte-identical CSV.

fn csv_bytes(cfg: &ExperimentConfig, threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let rows = pool.install(|| run_experiment(cfg).unwrap());
    let mut out = Vec::new();
    write_csv(&rows, &mut out).unwrap();
    out
}

fn criterion_11() -> Outcome {
    let (mut siso, _) = scenario(3, 4, 1, 10.0, 1111);
    siso.trials = 3;
    siso.sweep = Some(Sweep {
        param: SweepParam::PowerDbm,
        values: vec![SweepValue::Number(0.0), SweepValue::Number(10.0)],
    });
    let (mut miso, _) = scenario(2, 4, 2, 10.0, 1112);
    miso.trials = 2;
    miso.schemes = vec![Scheme::IrsNoma, Scheme::Noma];
    for cfg in [&siso, &miso] {
        let reference = csv_bytes(cfg, 1);
        for threads in [1, 4] {
            check(csv_bytes(cfg, threads) == reference, || {
                format!("output differs with {threads} threads")
            })?;
        }
        let text = String::from_utf8(reference).map_err(|e| e.to_string())?;
        check(!text.contains("failed"), || "a row failed".to_string())?;
    }
    Ok("repeated single- and multi-threaded runs are byte-identical".into())
}

// ---------------------------------------------------------------------------
// 12. Interior-point solver on problems with known optima.

fn unit_diagonal_2x2() -> (SdpProblem, usize) {
    let mut p = SdpProblem::new(Sense::Maximize);
    let e = p.add_block("X", 2);
    p.fix_diagonal(e, 0, 1.0);
    p.fix_diagonal(e, 1, 1.0);
    (p, e)
}

fn criterion_12() -> Outcome {
    let settings = SdpSettings::default();
    let ones = ComplexMatrix::from_element(2, 2, 1.0.into());
    let cut = ComplexMatrix::from_fn(2, 2, |i, j| if i == j { 0.0.into() } else { 1.0.into() });
    let mut gaps = Vec::new();
    for (c, optimum) in [(ones, 4.0), (cut, 2.0)] {
        let (mut p, e) = unit_diagonal_2x2();
        p.add_objective(e, c);
        let s = solve(&p, &settings).map_err(|err| err.to_string())?;
        check(s.status == SdpStatus::Optimal, || format!("status {:?}", s.status))?;
        check((s.objective_value - optimum).abs() <= 1e-7, || {
            format!("objective {} vs {optimum}", s.objective_value)
        })?;
        check(s.duality_gap <= 1e-7, || format!("gap {:e}", s.duality_gap))?;
        gaps.push(s.duality_gap);
    }
    let (mut p, e) = unit_diagonal_2x2();
    p.add_objective(e, ComplexMatrix::identity(2, 2));
    p.add_constraint(
        vec![(e, ConstraintMatrix::Dense(ComplexMatrix::identity(2, 2)))],
        Relation::LessEq,
        0.5,
    );
    let s = solve(&p, &settings).map_err(|err| err.to_string())?;
    check(s.status == SdpStatus::Infeasible, || format!("trace budget status {:?}", s.status))?;
    Ok(format!("gaps {:.1e}, {:.1e}; trace budget certified infeasible", gaps[0], gaps[1]))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "closed-form power split vs equal-SINR recursion", criterion_1),
        (2, "hand-derived two-user cases", criterion_2),
        (3, "lifted beamforming rank ≤ 2", criterion_3),
        (5, "two-user closed-form phases", criterion_5),
        (6, "relaxation vs 64-level grid and π/4 bound", criterion_6),
        (7, "strength ordering vs exhaustive", criterion_7),
        (8, "benchmark ordering at 10 dBm", criterion_8),
        (9, "finite phase resolution", criterion_9),
        (10, "growth with element count", criterion_10),
        (11, "deterministic CSV", criterion_11),
        (12, "interior-point solver optima", criterion_12),
        // Last: it audits the traces recorded by the runs above.
        (4, "monotone objective traces", criterion_4),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
