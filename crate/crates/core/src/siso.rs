//! Single-antenna BS: alternating IRS phase updates and closed-form power
//! allocation.

use std::time::Instant;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{derive_seed, rng_from, wrap_phase, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::miso::BeamSet;
use crate::numerics::{dominant_eigpair, ComplexMatrix, ComplexVector, RealMatrix};
use crate::ordering::OrderingResult;
use crate::phase_step::{bisect, optimize_phases, respects_order, target_sinrs, Bisection, PairSet, PhaseStep};
use crate::relax::{common_scale, randomized_phases, strength_matrix, unit_diagonal_problem};
use crate::sdp::{solve, ConstraintMatrix, Relation, SdpSettings, SdpStatus, Sense};

#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// Power fractions in decoding order.
    pub alpha: Vec<f64>,
}

impl PowerAllocation {
    /// Per-user beams `√(α_k P)` for a single antenna.
    pub fn beams(&self, power: f64) -> Vec<ComplexVector> {
        self.alpha
            .iter()
            .map(|a| ComplexVector::from_element(1, Complex64::from((a * power).max(0.0).sqrt())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Power(PowerAllocation),
    Beams(BeamSet),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SolveFlags {
    /// Some phase update found no candidate respecting the decoding order.
    pub ordering_unmet: bool,
    pub iteration_cap_reached: bool,
    /// Some beam extraction found no draw beating its incumbent.
    pub extraction_fallback: bool,
}

/// Outcome of a joint solve. Per-user vectors are in decoding order;
/// `order[i]` is the original index of the `i`-th decoded user.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Linear max-min target SINR.
    pub q_star: f64,
    /// bits/s/Hz, `log₂(1 + γ^tar_t)`.
    pub rates: Vec<f64>,
    pub allocation: Allocation,
    pub phases: PhaseConfig,
    pub iterations: usize,
    pub q_trace: Vec<f64>,
    /// Seconds.
    pub wall_time: f64,
    pub order: Vec<usize>,
    pub flags: SolveFlags,
}

impl SolveResult {
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// How the single-antenna solver updates the IRS phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseUpdate {
    /// Relax phases and power split together ([`joint_phase_opt_siso`]).
    #[default]
    Joint,
    /// Hold the power split fixed during the phase update ([`phase_opt_siso`]).
    /// Once a step reaches the strength Pareto frontier no later step can
    /// raise every SINR, so the result depends strongly on the starting split.
    FixedSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Transmit power budget, Watts.
    pub power: f64,
    /// Relative BCD stopping threshold on the objective increase.
    pub eps: f64,
    /// Relative bisection width.
    pub eps_b: f64,
    pub randomization_trials: usize,
    pub iteration_cap: usize,
    pub seed: u64,
    /// Single-antenna phase update; the multi-antenna solver ignores it.
    pub phase_update: PhaseUpdate,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            power: crate::channels::dbm_to_watts(10.0),
            eps: 0.01,
            eps_b: 1e-4,
            randomization_trials: crate::ordering::DEFAULT_TRIALS,
            iteration_cap: 50,
            seed: 0,
            phase_update: PhaseUpdate::Joint,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Domain("transmit power must be positive".into()));
        }
        if !(self.eps > 0.0) || !(self.eps_b > 0.0) {
            return Err(Error::Contract("eps and eps_b must be positive".into()));
        }
        if self.randomization_trials == 0 || self.iteration_cap == 0 {
            return Err(Error::Contract("trials and iteration cap must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `α_k P s_k / (Σ_{i>k} α_i P s_k + σ²)`.
pub fn sinr_siso(strengths: &[f64], alpha: &PowerAllocation, power: f64, noise: f64, k: usize) -> f64 {
    let s = strengths[k];
    let interference: f64 = alpha.alpha[k + 1..].iter().sum::<f64>() * power * s;
    alpha.alpha[k] * power * s / (interference + noise)
}

/// Max-min power split for fixed strengths in decoding order.
///
/// The equal-SINR conditions `[α; 1] = Q Π [α; 1]` make `1/Q` the Perron
/// root of `Π = [[U, d], [1ᵀU, 1ᵀd]]`, with `U` strictly upper triangular
/// ones and `d_k = σ² / (P s_k)`.
pub fn optimal_power_allocation(strengths: &[f64], power: f64, noise: f64) -> Result<(PowerAllocation, f64)> {
    let k = strengths.len();
    if k == 0 {
        return Err(Error::Contract("no users".into()));
    }
    if strengths.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Domain("channel strengths must be positive and finite".into()));
    }
    if !(power > 0.0 && noise > 0.0) {
        return Err(Error::Domain("power and noise must be positive".into()));
    }
    let d: Vec<f64> = strengths.iter().map(|s| noise / (power * s)).collect();
    let mut pi = RealMatrix::zeros(k + 1, k + 1);
    for r in 0..k {
        for c in r + 1..k {
            pi[(r, c)] = 1.0;
        }
        pi[(r, k)] = d[r];
    }
    for c in 0..k {
        pi[(k, c)] = c as f64;
    }
    pi[(k, k)] = d.iter().sum();
    let (lambda, v) = dominant_eigpair(&pi)?;
    if !(lambda > 0.0) {
        return Err(Error::Numerical("non-positive Perron root".into()));
    }
    let mut alpha: Vec<f64> = (0..k).map(|i| v[i] / v[k]).collect();
    let total: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= total;
    }
    Ok((PowerAllocation { alpha }, 1.0 / lambda))
}

/// Co-phase every reflected path of the stronger (second) user with its
/// direct path: `θ_i = ξ − φ_i − ψ_i`, where `ξ`, `φ_i`, `ψ_i` are the phases
/// of the direct term, of `[g^H]_i` and of `f_i` as they enter `h^H`.
/// A vanishing direct link takes `ξ = 0`.
pub fn closed_form_phases_two_user(ch: &ChannelSet) -> Result<PhaseConfig> {
    if ch.antennas() != 1 || ch.users() != 2 {
        return Err(Error::Contract(format!(
            "closed form needs N = 1 and K = 2, got N = {}, K = {}",
            ch.antennas(),
            ch.users()
        )));
    }
    let v = ch.v[1][0].conj();
    let xi = if v.norm() > 0.0 { v.arg() } else { 0.0 };
    let theta = (0..ch.elements())
        .map(|i| wrap_phase(xi - ch.g[1][i].conj().arg() - ch.f[(i, 0)].arg()))
        .collect();
    Ok(PhaseConfig::from_theta(theta))
}

/// Strengths `|h_k|²` of every user at `phases`.
pub fn strengths_at(ch: &ChannelSet, phases: &PhaseConfig) -> Result<Vec<f64>> {
    (0..ch.users()).map(|k| ch.strength(phases, k)).collect()
}

/// Strength that limits each decoding position under SIC: `min_{k≥t} s_k`.
///
/// The SINR of flow `t` at user `k` grows with `s_k`, so its SIC-aware
/// target is set by the weakest later user. Ascending input is returned
/// unchanged.
pub fn sic_effective_strengths(strengths: &[f64]) -> Vec<f64> {
    let mut out = strengths.to_vec();
    for t in (0..out.len().saturating_sub(1)).rev() {
        out[t] = out[t].min(out[t + 1]);
    }
    out
}

/// Max-min power split for the fixed decoding order at `phases`.
pub fn power_split_at(ch: &ChannelSet, phases: &PhaseConfig, power: f64) -> Result<(PowerAllocation, f64)> {
    optimal_power_allocation(&sic_effective_strengths(&strengths_at(ch, phases)?), power, ch.noise_power)
}

/// Interference-free bound on the SINR any phase choice can give,
/// `P · max_k max_θ |h_k|² / σ²`, using `(Σ_i |Γ_k,i|)²` for `max_θ |h_k|²`.
pub fn sinr_upper_bound(ch: &ChannelSet, power: f64) -> Result<f64> {
    let mut best = 0.0f64;
    for k in 0..ch.users() {
        let g = ch.lifted_gamma(k)?;
        // ‖Γ^H ē‖ ≤ Σ_i ‖row_i(Γ)‖ for unit-modulus ē.
        let s: f64 = g.row_iter().map(|r| r.norm()).sum();
        best = best.max(s * s);
    }
    Ok(power * best / ch.noise_power)
}

/// One phase update at fixed power split; never worse than `incumbent`.
pub fn phase_opt_siso(
    ch: &ChannelSet,
    alpha: &PowerAllocation,
    power: f64,
    bracket: &Bisection,
    trials: usize,
    seed: u64,
    incumbent: &PhaseConfig,
) -> Result<PhaseStep> {
    if ch.antennas() != 1 {
        return Err(Error::Contract("single-antenna solver needs N = 1".into()));
    }
    if alpha.alpha.len() != ch.users() {
        return Err(Error::Contract("allocation length differs from K".into()));
    }
    optimize_phases(
        ch,
        &alpha.beams(power),
        PairSet::OwnFlowOnly,
        bracket,
        trials,
        seed,
        incumbent,
    )
}

/// Exact max-min SINR at `phases` after the SIC-aware closed-form split.
pub fn balanced_sinr(ch: &ChannelSet, phases: &PhaseConfig, power: f64) -> Result<f64> {
    let (alpha, _) = power_split_at(ch, phases, power)?;
    Ok(min_of(&evaluate(ch, phases, &alpha, power)?))
}

/// Phase update with the power split optimized jointly.
///
/// With strengths ascending along the decoding order, the equal-SINR split
/// meets level `Q` iff `Σ_k Q (1+Q)^{k} σ² / (P s_k) ≤ 1` (users indexed
/// from 0). Each term is convex in `s_k = Tr(S_k E)`, written as a 2×2 block
/// `[[u_k, √c_k], [√c_k, t_k]] ⪰ 0` with `t_k ≤ Tr(S_k E)`. For every trial
/// `Q` the smallest `Σ u_k` is computed and `Q` is accepted when it is at
/// most one. Candidates are scored by the exact SINR after the closed-form
/// split; the result is never worse than `incumbent`.
pub fn joint_phase_opt_siso(
    ch: &ChannelSet,
    power: f64,
    bracket: &Bisection,
    trials: usize,
    seed: u64,
    incumbent: &PhaseConfig,
) -> Result<PhaseStep> {
    if ch.antennas() != 1 {
        return Err(Error::Contract("single-antenna solver needs N = 1".into()));
    }
    let m = ch.elements();
    let k_users = ch.users();
    let q_inc = balanced_sinr(ch, incumbent, power)?;
    if m == 0 {
        return Ok(PhaseStep {
            phases: incumbent.clone(),
            q: q_inc,
            relaxed_q: q_inc,
            no_ordered_candidate: false,
        });
    }
    let strengths: Vec<ComplexMatrix> = (0..k_users).map(|k| strength_matrix(ch, k)).collect::<Result<_>>()?;
    let s_scale = common_scale(&strengths);
    let strengths: Vec<ComplexMatrix> = strengths.into_iter().map(|s| s / Complex64::from(s_scale)).collect();
    let inv_snr = ch.noise_power / (power * s_scale);
    let settings = SdpSettings::default();
    let off_diag = ComplexMatrix::from_fn(2, 2, |i, j| Complex64::from(if i == j { 0.0 } else { 1.0 }));
    let neg = |i: usize| {
        let mut a = ComplexMatrix::zeros(2, 2);
        a[(i, i)] = Complex64::from(-1.0);
        a
    };

    let min_budget = |q: f64| -> Result<Option<ComplexMatrix>> {
        let (mut p, e) = unit_diagonal_problem(m, Sense::Minimize);
        for (k, s) in strengths.iter().enumerate() {
            let c = q * (1.0 + q).powi(k as i32) * inv_snr;
            let b = p.add_block(format!("B{k}"), 2);
            p.add_objective(b, {
                let mut a = ComplexMatrix::zeros(2, 2);
                a[(0, 0)] = Complex64::from(1.0);
                a
            });
            // 2 Re B[0,1] = 2 √c
            p.add_constraint(vec![(b, ConstraintMatrix::Dense(off_diag.clone()))], Relation::Equal, 2.0 * c.sqrt());
            // Tr(S_k E) − B[1,1] ≥ 0
            p.add_constraint(
                vec![(e, ConstraintMatrix::Dense(s.clone())), (b, ConstraintMatrix::Dense(neg(1)))],
                Relation::GreaterEq,
                0.0,
            );
        }
        for w in strengths.windows(2) {
            let d = &w[1] - &w[0];
            if d.norm() > 0.0 {
                p.add_constraint(vec![(e, ConstraintMatrix::Dense(d))], Relation::GreaterEq, 0.0);
            }
        }
        let sol = solve(&p, &settings)?;
        Ok(match sol.status {
            SdpStatus::Optimal | SdpStatus::Feasible if sol.objective_value <= 1.0 + 1e-7 => {
                Some(sol.blocks[e].clone())
            }
            _ => None,
        })
    };

    let ordered = respects_order(ch, incumbent, 1e-9)?;
    let lo = if ordered { bracket.q_min.max(q_inc.min(bracket.q_max)) } else { bracket.q_min };
    let start = Bisection { q_min: lo, ..*bracket };
    let (relaxed_q, lifted) = if start.q_max > start.q_min {
        bisect(&start, None, min_budget)?
    } else {
        (lo, None)
    };
    let lifted = match lifted {
        Some(e) => Some(e),
        None => min_budget(relaxed_q)?,
    };

    // Ordered candidates win when there are any; otherwise the SIC-aware
    // score still ranks order-violating ones correctly.
    let mut best_ordered = (q_inc, incumbent.clone());
    let mut best_any = (q_inc, incumbent.clone());
    let mut any_ordered = false;
    if let Some(e_mat) = &lifted {
        let mut rng = rng_from(seed);
        for cand in randomized_phases(e_mat, trials, &mut rng)? {
            let q = balanced_sinr(ch, &cand, power)?;
            if respects_order(ch, &cand, 1e-9)? {
                any_ordered = true;
                if q > best_ordered.0 {
                    best_ordered = (q, cand);
                }
            } else if q > best_any.0 {
                best_any = (q, cand);
            }
        }
    }
    let (q, mut phases) = if any_ordered { best_ordered } else { best_any };
    phases.lifted = lifted;
    Ok(PhaseStep {
        phases,
        q,
        relaxed_q,
        no_ordered_candidate: !any_ordered,
    })
}

fn evaluate(ch: &ChannelSet, phases: &PhaseConfig, alpha: &PowerAllocation, power: f64) -> Result<Vec<f64>> {
    let hs = crate::phase_step::combined_channels(ch, phases)?;
    Ok(target_sinrs(&hs, &alpha.beams(power), ch.noise_power))
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Alternate phase updates and closed-form power allocation until the
/// relative increase of the objective falls below `eps`.
pub fn solve_siso(ch: &ChannelSet, ordering: &OrderingResult, config: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    config.validate()?;
    if ch.antennas() != 1 {
        return Err(Error::Contract("single-antenna solver needs N = 1".into()));
    }
    if ordering.permutation.len() != ch.users() {
        return Err(Error::Contract("ordering does not match the user count".into()));
    }
    let ch = ch.permuted(&ordering.permutation)?;
    let power = config.power;
    let m = ch.elements();

    let mut phases = PhaseConfig::zeros(m);
    let (mut alpha, _) = power_split_at(&ch, &phases, power)?;
    let mut q = min_of(&evaluate(&ch, &phases, &alpha, power)?);
    let mut q_trace = vec![q];
    let mut flags = SolveFlags::default();
    let mut iterations = 0;
    let q_max = sinr_upper_bound(&ch, power)?;

    if m > 0 {
        loop {
            iterations += 1;
            let bracket = Bisection::new(0.0, q_max.max(q * (1.0 + 1e-9)).max(f64::MIN_POSITIVE), config.eps_b)?;
            let seed = derive_seed(config.seed, &[iterations as u64]);
            let trials = config.randomization_trials;
            let step = match config.phase_update {
                PhaseUpdate::Joint => joint_phase_opt_siso(&ch, power, &bracket, trials, seed, &phases)?,
                PhaseUpdate::FixedSplit => phase_opt_siso(&ch, &alpha, power, &bracket, trials, seed, &phases)?,
            };
            flags.ordering_unmet |= step.no_ordered_candidate;
            let (next_alpha, _) = power_split_at(&ch, &step.phases, power)?;
            let next_q = min_of(&evaluate(&ch, &step.phases, &next_alpha, power)?);
            let improved = next_q > q;
            let prev = q;
            if improved {
                phases = step.phases;
                alpha = next_alpha;
                q = next_q;
            }
            q_trace.push(q);
            if !improved || (q - prev) <= config.eps * prev.abs() {
                break;
            }
            if iterations >= config.iteration_cap {
                flags.iteration_cap_reached = true;
                warn!("single-antenna solve stopped at the iteration cap ({})", config.iteration_cap);
                break;
            }
        }
    } else {
        iterations = 1;
    }

    let targets = evaluate(&ch, &phases, &alpha, power)?;
    Ok(SolveResult {
        q_star: min_of(&targets),
        rates: targets.iter().map(|g| (1.0 + g).log2()).collect(),
        allocation: Allocation::Power(alpha),
        phases,
        iterations,
        q_trace,
        wall_time: start.elapsed().as_secs_f64(),
        order: ordering.permutation.clone(),
        flags,
    })
}
