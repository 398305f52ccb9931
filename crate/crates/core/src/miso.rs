//! Multi-antenna BS: alternating IRS phase updates and lifted transmit
//! beamforming.

use std::time::Instant;

use log::{debug, warn};
use num_complex::Complex64;

use crate::channels::{complex_gaussian_vector, derive_seed, rng_from, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, numerical_rank, ComplexMatrix, ComplexVector};
use crate::ordering::OrderingResult;
use crate::phase_step::{
    bisect, combined_channels, optimize_phases, pair_sinr, target_sinrs, Bisection, PairSet, PhaseStep,
};
use crate::sdp::{solve, ConstraintMatrix, Relation, SdpProblem, SdpSettings, SdpStatus, Sense};
use crate::siso::{sinr_upper_bound, Allocation, SolveFlags, SolveResult, SolverConfig};

/// Transmit beams in decoding order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    /// `ω_k`, length N, in √W.
    pub omegas: Vec<ComplexVector>,
    /// Lifted `Ω_k ⪰ 0` they were extracted from, if any.
    pub lifted: Option<Vec<ComplexMatrix>>,
}

impl BeamSet {
    pub fn new(omegas: Vec<ComplexVector>) -> Self {
        Self { omegas, lifted: None }
    }

    pub fn total_power(&self) -> f64 {
        self.omegas.iter().map(|w| w.norm_squared()).sum()
    }

    /// Same directions with the total power set to `power`.
    pub fn rescaled(&self, power: f64) -> Self {
        let total = self.total_power();
        if total <= 0.0 {
            return self.clone();
        }
        let c = Complex64::from((power / total).sqrt());
        Self {
            omegas: self.omegas.iter().map(|w| w * c).collect(),
            lifted: self.lifted.clone(),
        }
    }
}

/// `|h_k^H ω_t|² / (Σ_{i>t} |h_k^H ω_i|² + σ²)` for `t ≤ k`.
pub fn sinr_miso(
    ch: &ChannelSet,
    phases: &PhaseConfig,
    beams: &BeamSet,
    noise: f64,
    t: usize,
    k: usize,
) -> Result<f64> {
    if t > k {
        return Err(Error::Contract(format!("flow {t} is not decoded by user {k}")));
    }
    if beams.omegas.len() != ch.users() || k >= ch.users() {
        return Err(Error::Contract("beam count or user index out of range".into()));
    }
    let h = ch.combined_channel(phases, k)?;
    Ok(pair_sinr(&h, &beams.omegas, noise, t))
}

/// Phase update at fixed beams over all decoding pairs.
pub fn phase_opt_miso(
    ch: &ChannelSet,
    beams: &BeamSet,
    bracket: &Bisection,
    trials: usize,
    seed: u64,
    incumbent: &PhaseConfig,
) -> Result<PhaseStep> {
    optimize_phases(ch, &beams.omegas, PairSet::AllPairs, bracket, trials, seed, incumbent)
}

/// Largest `Q` for which the lifted beamforming problem meets the power
/// budget. At each trial `Q` the minimum-power program
///
/// ```text
///   min Σ Tr(Ω_k)  s.t.  Tr(H_k Ω_t) − Q Σ_{i>t} Tr(H_k Ω_i) ≥ Q σ²  (t ≤ k),  Ω_k ⪰ 0
/// ```
///
/// is solved and `Q` is feasible when its optimum is within `power`.
pub fn beamforming_opt(
    ch: &ChannelSet,
    phases: &PhaseConfig,
    power: f64,
    bracket: &Bisection,
) -> Result<(BeamSet, f64)> {
    let hs = combined_channels(ch, phases)?;
    let k_users = hs.len();
    let n = ch.antennas();
    let h_scale = hs.iter().map(|h| h.norm_squared()).fold(0.0f64, f64::max);
    if !(h_scale > 0.0) {
        return Err(Error::Domain("all combined channels vanish".into()));
    }
    // Work with Ω' = Ω / P and H' = H / h_scale.
    let hmat: Vec<ComplexMatrix> = hs
        .iter()
        .map(|h| (h * h.adjoint()) / Complex64::from(h_scale))
        .collect();
    let noise = ch.noise_power / (power * h_scale);
    let settings = SdpSettings::default();

    let min_power = |q: f64| -> Result<Option<Vec<ComplexMatrix>>> {
        let mut p = SdpProblem::new(Sense::Minimize);
        let blocks: Vec<usize> = (0..k_users).map(|k| p.add_block(format!("W{k}"), n)).collect();
        for &b in &blocks {
            p.add_objective(b, ComplexMatrix::identity(n, n));
        }
        for (k, hk) in hmat.iter().enumerate() {
            for t in 0..=k {
                let mut terms = vec![(blocks[t], ConstraintMatrix::Dense(hk.clone()))];
                for &bi in &blocks[t + 1..] {
                    terms.push((bi, ConstraintMatrix::Dense(hk * Complex64::from(-q))));
                }
                p.add_constraint(terms, Relation::GreaterEq, q * noise);
            }
        }
        let sol = solve(&p, &settings)?;
        match sol.status {
            SdpStatus::Optimal | SdpStatus::Feasible if sol.objective_value <= 1.0 + 1e-7 => {
                Ok(Some(sol.blocks))
            }
            SdpStatus::NumericalFailure => {
                debug!("beamforming relaxation failed at Q = {q}; treated as infeasible");
                Ok(None)
            }
            _ => Ok(None),
        }
    };

    let (q, witness) = bisect(bracket, None, min_power)?;
    let blocks = match witness {
        Some(b) => b,
        None => match min_power(q)? {
            Some(b) => b,
            None => return Err(Error::Numerical("no feasible lifted beamformer in the bracket".into())),
        },
    };
    let lifted: Vec<ComplexMatrix> = blocks.into_iter().map(|b| b * Complex64::from(power)).collect();
    let omegas = lifted.iter().map(principal_factor).collect();
    Ok((
        BeamSet {
            omegas,
            lifted: Some(lifted),
        },
        q,
    ))
}

fn principal_factor(a: &ComplexMatrix) -> ComplexVector {
    match hermitian_eig(a) {
        Ok(eig) if eig.max_eigenvalue() > 0.0 => {
            eig.eigenvectors.column(0) * Complex64::from(eig.max_eigenvalue().sqrt())
        }
        _ => ComplexVector::zeros(a.nrows()),
    }
}

/// Rank-tolerance used to decide whether a lifted block factors exactly.
pub const RANK_TOL: f64 = 1e-6;

/// Rank-one beams from lifted blocks, rescaled to exactly `power`.
///
/// Exact when every block has rank one; otherwise the best of the
/// principal factors, `trials` Gaussian draws and `incumbent`, scored by the
/// exact min target SINR. The flag reports that no draw beat the incumbent.
pub fn extract_beams(
    lifted: &BeamSet,
    ch: &ChannelSet,
    phases: &PhaseConfig,
    power: f64,
    trials: usize,
    seed: u64,
    incumbent: Option<&BeamSet>,
) -> Result<(BeamSet, bool)> {
    let blocks = lifted
        .lifted
        .as_ref()
        .ok_or_else(|| Error::Contract("beam set carries no lifted blocks".into()))?;
    let hs = combined_channels(ch, phases)?;
    let score = |b: &BeamSet| -> f64 {
        target_sinrs(&hs, &b.omegas, ch.noise_power)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    };
    let finish = |mut b: BeamSet| {
        b = b.rescaled(power);
        b.lifted = Some(blocks.clone());
        b
    };

    let ranks = rank_profile(lifted, RANK_TOL)?;
    let principal = BeamSet::new(blocks.iter().map(principal_factor).collect());
    if ranks.iter().all(|&r| r <= 1) {
        return Ok((finish(principal), false));
    }

    let factors: Vec<ComplexMatrix> = blocks
        .iter()
        .map(|b| hermitian_eig(b).map(|e| e.psd_factor()))
        .collect::<Result<_>>()?;
    let mut rng = rng_from(seed);
    let mut best = principal.rescaled(power);
    let mut best_q = score(&best);
    for _ in 0..trials {
        let cand = BeamSet::new(
            factors
                .iter()
                .map(|u| {
                    let r = complex_gaussian_vector(&mut rng, u.ncols(), 1.0);
                    u * r
                })
                .collect(),
        )
        .rescaled(power);
        let q = score(&cand);
        if q > best_q {
            best_q = q;
            best = cand;
        }
    }
    let mut fallback = false;
    if let Some(inc) = incumbent {
        let inc = inc.rescaled(power);
        if score(&inc) > best_q {
            best = inc;
            fallback = true;
        }
    }
    Ok((finish(best), fallback))
}

/// Numerical rank of every lifted block.
pub fn rank_profile(lifted: &BeamSet, tol: f64) -> Result<Vec<usize>> {
    let blocks = lifted
        .lifted
        .as_ref()
        .ok_or_else(|| Error::Contract("beam set carries no lifted blocks".into()))?;
    blocks.iter().map(|b| numerical_rank(b, tol)).collect()
}

/// Matched filter to each user's combined channel with power `P/K` each.
pub fn matched_filter_beams(ch: &ChannelSet, phases: &PhaseConfig, power: f64) -> Result<BeamSet> {
    let k = ch.users() as f64;
    let omegas = (0..ch.users())
        .map(|u| {
            let h = ch.combined_channel(phases, u)?;
            let nrm = h.norm();
            Ok(if nrm > 0.0 {
                h * Complex64::from((power / k).sqrt() / nrm)
            } else {
                ComplexVector::from_element(ch.antennas(), Complex64::from((power / k / ch.antennas() as f64).sqrt()))
            })
        })
        .collect::<Result<_>>()?;
    Ok(BeamSet::new(omegas))
}

fn min_target(ch: &ChannelSet, phases: &PhaseConfig, beams: &BeamSet) -> Result<Vec<f64>> {
    let hs = combined_channels(ch, phases)?;
    Ok(target_sinrs(&hs, &beams.omegas, ch.noise_power))
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Interference-free bound `P · min_t ‖h_t‖² / σ²` at fixed phases.
fn beam_q_max(ch: &ChannelSet, phases: &PhaseConfig, power: f64) -> Result<f64> {
    let s = (0..ch.users())
        .map(|k| ch.strength(phases, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(power * min_of(&s) / ch.noise_power)
}

/// Beam update at fixed phases, never worse than `incumbent`.
fn beam_step(
    ch: &ChannelSet,
    phases: &PhaseConfig,
    config: &SolverConfig,
    seed: u64,
    incumbent: &BeamSet,
) -> Result<(BeamSet, f64, bool)> {
    let q_inc = min_of(&min_target(ch, phases, incumbent)?);
    let q_max = beam_q_max(ch, phases, config.power)?;
    if !(q_max > 0.0) {
        return Ok((incumbent.clone(), q_inc, true));
    }
    let lo = q_inc.clamp(0.0, q_max * (1.0 - 1e-12));
    let bracket = Bisection::new(lo, q_max, config.eps_b)?;
    let (lifted, _) = match beamforming_opt(ch, phases, config.power, &bracket) {
        Ok(r) => r,
        Err(Error::Numerical(msg)) => {
            warn!("beamforming step kept the incumbent: {msg}");
            return Ok((incumbent.clone(), q_inc, true));
        }
        Err(e) => return Err(e),
    };
    let (beams, fallback) = extract_beams(
        &lifted,
        ch,
        phases,
        config.power,
        config.randomization_trials,
        seed,
        Some(incumbent),
    )?;
    let q = min_of(&min_target(ch, phases, &beams)?);
    if q >= q_inc {
        Ok((beams, q, fallback))
    } else {
        Ok((incumbent.clone(), q_inc, true))
    }
}

/// Alternate phase and beam updates until the relative increase of the
/// objective falls below `eps`.
pub fn solve_miso(ch: &ChannelSet, ordering: &OrderingResult, config: &SolverConfig) -> Result<SolveResult> {
    let start = Instant::now();
    config.validate()?;
    if ch.users() < 2 {
        return Err(Error::Contract("multi-antenna solver needs K ≥ 2".into()));
    }
    if ordering.permutation.len() != ch.users() {
        return Err(Error::Contract("ordering does not match the user count".into()));
    }
    let ch = ch.permuted(&ordering.permutation)?;
    let power = config.power;
    let m = ch.elements();

    let mut phases = PhaseConfig::zeros(m);
    let mut beams = matched_filter_beams(&ch, &phases, power)?;
    let mut q = min_of(&min_target(&ch, &phases, &beams)?);
    let mut q_trace = vec![q];
    let mut flags = SolveFlags::default();
    let q_phase_max = sinr_upper_bound(&ch, power)?;

    let (b, q_b, fb) = beam_step(&ch, &phases, config, derive_seed(config.seed, &[0, 1]), &beams)?;
    flags.extraction_fallback |= fb;
    if q_b > q {
        beams = b;
        q = q_b;
    }
    q_trace.push(q);
    let mut iterations = 1;

    if m > 0 {
        loop {
            iterations += 1;
            let it = iterations as u64;
            let bracket = Bisection::new(0.0, q_phase_max.max(q * (1.0 + 1e-9)).max(f64::MIN_POSITIVE), config.eps_b)?;
            let step = phase_opt_miso(
                &ch,
                &beams,
                &bracket,
                config.randomization_trials,
                derive_seed(config.seed, &[it, 0]),
                &phases,
            )?;
            flags.ordering_unmet |= step.no_ordered_candidate;
            let (next_beams, next_q, fb) =
                beam_step(&ch, &step.phases, config, derive_seed(config.seed, &[it, 1]), &beams)?;
            let prev = q;
            let improved = next_q > q;
            if improved {
                flags.extraction_fallback |= fb;
                phases = step.phases;
                beams = next_beams;
                q = next_q;
            }
            q_trace.push(q);
            if !improved || (q - prev) <= config.eps * prev.abs() {
                break;
            }
            if iterations >= config.iteration_cap {
                flags.iteration_cap_reached = true;
                warn!("multi-antenna solve stopped at the iteration cap ({})", config.iteration_cap);
                break;
            }
        }
    }

    let targets = min_target(&ch, &phases, &beams)?;
    Ok(SolveResult {
        q_star: min_of(&targets),
        rates: targets.iter().map(|g| (1.0 + g).log2()).collect(),
        allocation: Allocation::Beams(beams),
        phases,
        iterations,
        q_trace,
        wall_time: start.elapsed().as_secs_f64(),
        order: ordering.permutation.clone(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c64;

    fn two_user(h1: [(f64, f64); 2], h2: [(f64, f64); 2]) -> ChannelSet {
        let v = |h: [(f64, f64); 2]| ComplexVector::from_iterator(2, h.iter().map(|&(a, b)| c64(a, b)));
        ChannelSet::new(
            ComplexMatrix::zeros(0, 2),
            vec![ComplexVector::zeros(0); 2],
            vec![v(h1), v(h2)],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn sinr_edge_cases() {
        let ch = two_user([(1.0, 0.0), (0.0, 0.0)], [(0.0, 0.0), (2.0, 0.0)]);
        let p = PhaseConfig::zeros(0);
        let beams = BeamSet::new(vec![
            ComplexVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]),
            ComplexVector::from_vec(vec![c64(0.0, 0.0), c64(1.0, 0.0)]),
        ]);
        // h₂ ⟂ ω₁ and h₁ ⟂ ω₂: no interference anywhere.
        assert_eq!(sinr_miso(&ch, &p, &beams, 1.0, 1, 1).unwrap(), 4.0);
        assert_eq!(sinr_miso(&ch, &p, &beams, 1.0, 0, 0).unwrap(), 1.0);
        assert_eq!(sinr_miso(&ch, &p, &beams, 1.0, 0, 1).unwrap(), 0.0);
        assert!(sinr_miso(&ch, &p, &beams, 1.0, 1, 0).is_err());
    }

    #[test]
    fn ranks_of_simple_blocks() {
        let w = ComplexVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 1.0)]);
        let b = BeamSet {
            omegas: vec![w.clone()],
            lifted: Some(vec![&w * w.adjoint(), ComplexMatrix::identity(2, 2)]),
        };
        assert_eq!(rank_profile(&b, 1e-6).unwrap(), vec![1, 2]);
    }

    #[test]
    fn zero_block_gives_zero_beam() {
        let z = ComplexMatrix::zeros(2, 2);
        assert_eq!(principal_factor(&z), ComplexVector::zeros(2));
    }
}
