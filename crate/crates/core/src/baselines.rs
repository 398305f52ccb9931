//! Benchmark schemes and finite-resolution phase quantization.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{derive_seed, rng_from, wrap_phase, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::miso::solve_miso;
use crate::ordering::{co_phasing_phases, max_combined_strength, order_users, OrderingResult};
use crate::relax::{randomized_phases, solve_lifted, strength_matrix, unit_diagonal_problem};
use crate::sdp::{ConstraintMatrix, Relation, Sense};
use crate::siso::{power_split_at, solve_siso, strengths_at, Allocation, SolveResult, SolverConfig};

/// Phase resolution of the IRS elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBits", into = "RawBits")]
pub enum QuantizationSpec {
    Continuous,
    Bits(u32),
}

/// Text form accepted in configuration files: a bit count or `"continuous"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBits {
    Bits(u32),
    Text(String),
}

impl TryFrom<RawBits> for QuantizationSpec {
    type Error = Error;

    fn try_from(raw: RawBits) -> Result<Self> {
        match raw {
            RawBits::Bits(b) => b.to_string().parse(),
            RawBits::Text(t) => t.parse(),
        }
    }
}

impl From<QuantizationSpec> for RawBits {
    fn from(q: QuantizationSpec) -> Self {
        match q {
            QuantizationSpec::Continuous => RawBits::Text("continuous".into()),
            QuantizationSpec::Bits(b) => RawBits::Bits(b),
        }
    }
}

impl std::str::FromStr for QuantizationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("continuous") {
            return Ok(Self::Continuous);
        }
        match s.parse::<u32>() {
            Ok(b) if (1..=30).contains(&b) => Ok(Self::Bits(b)),
            _ => Err(Error::Config(format!("phase resolution must be 1..=30 bits or 'continuous', got '{s}'"))),
        }
    }
}

impl std::fmt::Display for QuantizationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Continuous => write!(f, "continuous"),
            Self::Bits(b) => write!(f, "{b}"),
        }
    }
}

/// Map each phase to the nearest of `2^B` uniform levels on the circle.
pub fn quantize_phases(phases: &PhaseConfig, spec: QuantizationSpec) -> PhaseConfig {
    match spec {
        QuantizationSpec::Continuous => phases.clone(),
        QuantizationSpec::Bits(b) => {
            let levels = 1u64 << b;
            let step = 2.0 * PI / levels as f64;
            let theta = phases
                .theta
                .iter()
                .map(|&t| {
                    let idx = (wrap_phase(t) / step).round() as u64 % levels;
                    idx as f64 * step
                })
                .collect();
            PhaseConfig { theta, lifted: None }
        }
    }
}

/// Re-evaluate a finished solve after quantizing its phases. The
/// single-antenna power split is recomputed in closed form; beams are kept.
pub fn quantized_result(
    ch: &ChannelSet,
    result: &SolveResult,
    spec: QuantizationSpec,
    power: f64,
) -> Result<SolveResult> {
    let ordered = ch.permuted(&result.order)?;
    let phases = quantize_phases(&result.phases, spec);
    let hs = crate::phase_step::combined_channels(&ordered, &phases)?;
    let (allocation, beams) = match &result.allocation {
        Allocation::Power(_) => {
            let (alpha, _) = power_split_at(&ordered, &phases, power)?;
            let beams = alpha.beams(power);
            (Allocation::Power(alpha), beams)
        }
        Allocation::Beams(b) => (Allocation::Beams(b.clone()), b.omegas.clone()),
    };
    let targets = crate::phase_step::target_sinrs(&hs, &beams, ordered.noise_power);
    let q = targets.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SolveResult {
        q_star: q,
        rates: targets.iter().map(|g| (1.0 + g).log2()).collect(),
        allocation,
        phases,
        iterations: result.iterations,
        q_trace: result.q_trace.clone(),
        wall_time: result.wall_time,
        order: result.order.clone(),
        flags: result.flags.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Siso,
    Miso,
}

/// NOMA with optimized power or beams and no IRS, users ordered by direct
/// channel strength.
pub fn noma_no_irs(ch: &ChannelSet, mode: Mode, config: &SolverConfig) -> Result<SolveResult> {
    let bare = ch.without_irs();
    let ordering = order_users(&bare, 1, config.seed)?;
    match mode {
        Mode::Siso => solve_siso(&bare, &ordering, config),
        Mode::Miso => solve_miso(&bare, &ordering, config),
    }
}

/// Time-division OMA outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OmaResult {
    /// bits/s/Hz per user, in input order.
    pub rates: Vec<f64>,
    pub min_rate: f64,
    pub time_fractions: Vec<f64>,
    /// Transmit power during each user's slot, Watts.
    pub powers: Vec<f64>,
    /// Effective strength `s_k` used for each user.
    pub strengths: Vec<f64>,
    /// Shared IRS phases, when one configuration serves every slot.
    pub phases: Option<PhaseConfig>,
}

/// How IRS phases are chosen for OMA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmaPhases {
    /// No IRS.
    None,
    /// One configuration maximizing the weakest combined strength.
    Shared,
    /// Each slot uses its own user's best configuration.
    PerSlot,
}

/// Energy `τ (2^{R/τ} − 1) σ² / s` needed for rate `R` in a slot of length `τ`.
fn slot_energy(rate: f64, tau: f64, gain: f64) -> f64 {
    let e = (rate / tau).exp2();
    if e.is_finite() {
        tau * (e - 1.0) * gain
    } else {
        f64::MAX
    }
}

/// `dE/dτ = g (2^{R/τ} (1 − R ln2 / τ) − 1)`, negative and increasing in τ.
fn slot_energy_slope(rate: f64, tau: f64, gain: f64) -> f64 {
    let x = rate / tau;
    let e = x.exp2();
    if !e.is_finite() {
        return f64::MIN;
    }
    gain * (e * (1.0 - x * std::f64::consts::LN_2) - 1.0)
}

/// Slot length whose energy slope equals `-lambda`.
fn tau_for_slope(rate: f64, gain: f64, lambda: f64) -> f64 {
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    // Slope is -∞ at 0⁺; if it is still below -λ at τ = 1 the whole slot is used.
    if slot_energy_slope(rate, hi, gain) <= -lambda {
        return hi;
    }
    for _ in 0..200 {
        let mid = if lo > 0.0 && hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if slot_energy_slope(rate, mid, gain) < -lambda {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Minimum total energy over `Σ τ_k = 1` for a common rate, with the
/// minimizing slot lengths.
fn min_energy(rate: f64, gains: &[f64]) -> (f64, Vec<f64>) {
    if rate <= 0.0 {
        let k = gains.len() as f64;
        return (0.0, vec![1.0 / k; gains.len()]);
    }
    let total = |lambda: f64| -> (f64, Vec<f64>) {
        let taus: Vec<f64> = gains.iter().map(|&g| tau_for_slope(rate, g, lambda)).collect();
        (taus.iter().sum(), taus)
    };
    // Σ τ(λ) decreases in λ; bracket the root of Σ τ = 1 geometrically.
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    while total(hi).0 > 1.0 && hi < 1e300 {
        lo = hi;
        hi *= 16.0;
    }
    for _ in 0..300 {
        let mid = (lo * hi).sqrt();
        if total(mid).0 > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let (sum, mut taus) = total(hi);
    for t in taus.iter_mut() {
        *t /= sum;
    }
    let energy = gains.iter().zip(&taus).map(|(&g, &t)| slot_energy(rate, t, g)).sum();
    (energy, taus)
}

/// Max-min TDMA rates for effective strengths `s_k`.
///
/// Rate `R_k = τ_k log₂(1 + p_k s_k / σ²)` with `Σ τ_k = 1` and
/// `Σ τ_k p_k ≤ P`. The common rate is bisected; each trial is checked by
/// the minimum-energy slot split.
pub fn oma_maxmin_strengths(strengths: &[f64], power: f64, noise: f64) -> Result<OmaResult> {
    if strengths.is_empty() {
        return Err(Error::Contract("OMA needs K ≥ 1".into()));
    }
    if strengths.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain("channel strengths must be positive and finite".into()));
    }
    if !(power > 0.0 && noise > 0.0) {
        return Err(Error::Domain("power and noise must be positive".into()));
    }
    // Energy per unit of (2^x − 1) is σ²/s.
    let gains: Vec<f64> = strengths.iter().map(|s| noise / s).collect();
    let r_hi = strengths
        .iter()
        .map(|s| (power * s / noise).ln_1p() / std::f64::consts::LN_2)
        .fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0, r_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if min_energy(mid, &gains).0 <= power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1e-300) {
            break;
        }
    }
    let rate = lo;
    let (_, taus) = min_energy(rate, &gains);
    let powers: Vec<f64> = taus
        .iter()
        .zip(&gains)
        .map(|(&t, &g)| ((rate / t).exp2() - 1.0) * g)
        .collect();
    let rates: Vec<f64> = taus
        .iter()
        .zip(&powers)
        .zip(strengths)
        .map(|((&t, &p), &s)| t * (1.0 + p * s / noise).log2())
        .collect();
    let min_rate = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(OmaResult {
        rates,
        min_rate,
        time_fractions: taus,
        powers,
        strengths: strengths.to_vec(),
        phases: None,
    })
}

/// Phases maximizing the smallest combined strength: relax
/// `max t s.t. Tr(S_k E) ≥ t, diag(E) = 1`, then randomize.
pub fn max_min_strength_phases(ch: &ChannelSet, trials: usize, seed: u64) -> Result<(PhaseConfig, f64)> {
    let m = ch.elements();
    let k_users = ch.users();
    let min_strength = |p: &PhaseConfig| -> Result<f64> {
        Ok(strengths_at(ch, p)?.into_iter().fold(f64::INFINITY, f64::min))
    };
    if m == 0 {
        let p = PhaseConfig::zeros(0);
        let s = min_strength(&p)?;
        return Ok((p, s));
    }
    let mats: Vec<_> = (0..k_users).map(|k| strength_matrix(ch, k)).collect::<Result<_>>()?;
    let scale = crate::relax::common_scale(&mats);
    let (mut problem, e) = unit_diagonal_problem(m, Sense::Maximize);
    let t = problem.add_block("t", 1);
    problem.add_objective(t, ComplexMatrix::identity(1, 1));
    let minus_one = ComplexMatrix::from_element(1, 1, Complex64::from(-1.0));
    for s in &mats {
        problem.add_constraint(
            vec![
                (e, ConstraintMatrix::Dense(s / Complex64::from(scale))),
                (t, ConstraintMatrix::Dense(minus_one.clone())),
            ],
            Relation::GreaterEq,
            0.0,
        );
    }
    let sol = solve_lifted(&problem)?;
    let mut candidates = vec![PhaseConfig::zeros(m)];
    for k in 0..k_users {
        candidates.push(co_phasing_phases(ch, k)?);
    }
    let mut rng = rng_from(seed);
    candidates.extend(randomized_phases(&sol.blocks[e], trials, &mut rng)?);
    let mut best: Option<(f64, PhaseConfig)> = None;
    for c in candidates {
        let s = min_strength(&c)?;
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, c));
        }
    }
    let (s, p) = best.expect("non-empty candidates");
    Ok((p, s))
}

/// TDMA benchmark, with effective strength `‖h_k‖²` (maximum-ratio
/// transmission within each slot).
pub fn oma_maxmin(
    ch: &ChannelSet,
    power: f64,
    phases_mode: OmaPhases,
    trials: usize,
    seed: u64,
) -> Result<OmaResult> {
    let (strengths, phases) = match phases_mode {
        OmaPhases::None => (strengths_at(&ch.without_irs(), &PhaseConfig::zeros(0))?, None),
        OmaPhases::Shared => {
            let (p, _) = max_min_strength_phases(ch, trials, seed)?;
            (strengths_at(ch, &p)?, Some(p))
        }
        OmaPhases::PerSlot => {
            let s = (0..ch.users())
                .map(|k| max_combined_strength(ch, k, trials, derive_seed(seed, &[k as u64])).map(|r| r.0))
                .collect::<Result<Vec<_>>>()?;
            (s, None)
        }
    };
    let mut r = oma_maxmin_strengths(&strengths, power, ch.noise_power)?;
    r.phases = phases;
    Ok(r)
}

/// Ordering of an M = 0 channel by direct strength.
pub fn direct_ordering(ch: &ChannelSet) -> Result<OrderingResult> {
    order_users(&ch.without_irs(), 1, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_examples() {
        let q = |t: f64, b: u32| quantize_phases(&PhaseConfig::from_theta(vec![t]), QuantizationSpec::Bits(b)).theta[0];
        assert_eq!(q(0.0, 3), 0.0);
        assert!((q(PI / 2.0 + 0.01, 1) - PI).abs() < 1e-15);
        assert_eq!(q(2.0 * PI - 0.01, 1), 0.0);
        let p = PhaseConfig::from_theta(vec![1.0, 2.5]);
        assert_eq!(quantize_phases(&p, QuantizationSpec::Continuous), p);
    }

    #[test]
    fn quantization_spec_parsing() {
        assert_eq!("continuous".parse::<QuantizationSpec>().unwrap(), QuantizationSpec::Continuous);
        assert_eq!("3".parse::<QuantizationSpec>().unwrap(), QuantizationSpec::Bits(3));
        assert!("0".parse::<QuantizationSpec>().is_err());
        assert!("x".parse::<QuantizationSpec>().is_err());
    }

    #[test]
    fn oma_single_user() {
        let r = oma_maxmin_strengths(&[2.0], 5.0, 1.0).unwrap();
        assert!((r.min_rate - 11f64.log2()).abs() < 1e-10);
    }

    #[test]
    fn oma_symmetric_pair() {
        let r = oma_maxmin_strengths(&[3.0, 3.0], 2.0, 1.0).unwrap();
        let expect = 0.5 * 7f64.log2();
        for rate in &r.rates {
            assert!((rate - expect).abs() < 1e-9);
        }
        for t in &r.time_fractions {
            assert!((t - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn oma_budget_is_met() {
        let r = oma_maxmin_strengths(&[1.0, 4.0, 0.3], 10.0, 1.0).unwrap();
        let used: f64 = r.time_fractions.iter().zip(&r.powers).map(|(t, p)| t * p).sum();
        assert!(used <= 10.0 * (1.0 + 1e-9));
        assert!((r.time_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let spread = r.rates.iter().fold(0.0f64, |m, x| m.max((x - r.min_rate).abs()));
        assert!(spread < 1e-8);
    }
}
