//! User ordering by maximal achievable combined-channel strength.

use rayon::prelude::*;

use crate::channels::{derive_seed, rng_from, wrap_phase, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;
use crate::relax::{randomized_phases, solve_lifted, strength_matrix, unit_diagonal_problem};
use crate::sdp::Sense;

/// Default number of Gaussian randomization draws.
pub const DEFAULT_TRIALS: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingResult {
    /// User indices, weakest first.
    pub permutation: Vec<usize>,
    /// Maximal `‖h_k‖²` per original user index.
    pub strengths: Vec<f64>,
    /// Phases achieving `strengths[k]`.
    pub best_phases: Vec<PhaseConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrengthSolution {
    pub strength: f64,
    pub phases: PhaseConfig,
    /// Optimal value of the relaxation, an upper bound on `strength`.
    pub relaxation_bound: f64,
}

/// Per-element alignment of every reflected term with the direct link.
pub fn co_phasing_phases(ch: &ChannelSet, user: usize) -> Result<PhaseConfig> {
    let gamma = ch.lifted_gamma(user)?;
    let m = ch.elements();
    let direct = gamma.row(m).into_owned();
    let reference = if direct.norm() > 0.0 {
        direct
    } else if m > 0 {
        gamma.row(0).into_owned()
    } else {
        return Ok(PhaseConfig::zeros(0));
    };
    // Term i contributes e^{jθ_i} r_i; pick θ_i so that r_i · reference^H is real positive.
    let theta = (0..m)
        .map(|i| {
            let c = gamma.row(i).dot(&reference.conjugate());
            wrap_phase(-c.arg())
        })
        .collect();
    Ok(PhaseConfig::from_theta(theta))
}

pub fn max_combined_strength(
    ch: &ChannelSet,
    user: usize,
    randomization_trials: usize,
    seed: u64,
) -> Result<(f64, PhaseConfig)> {
    let s = max_combined_strength_detailed(ch, user, randomization_trials, seed)?;
    Ok((s.strength, s.phases))
}

/// Relax `max ‖h_user‖²` over unit-modulus phases, then pick the best of
/// the randomized candidates, `θ = 0` and the co-phasing heuristic.
pub fn max_combined_strength_detailed(
    ch: &ChannelSet,
    user: usize,
    randomization_trials: usize,
    seed: u64,
) -> Result<StrengthSolution> {
    if randomization_trials == 0 {
        return Err(Error::Contract("randomization_trials must be ≥ 1".into()));
    }
    let m = ch.elements();
    if m == 0 {
        let s = ch.strength(&PhaseConfig::zeros(0), user)?;
        return Ok(StrengthSolution {
            strength: s,
            phases: PhaseConfig::zeros(0),
            relaxation_bound: s,
        });
    }
    let s_mat = strength_matrix(ch, user)?;
    let scale = crate::relax::common_scale(std::slice::from_ref(&s_mat));
    let s_norm: ComplexMatrix = &s_mat / num_complex::Complex64::from(scale);

    let (mut problem, e) = unit_diagonal_problem(m, Sense::Maximize);
    problem.add_objective(e, s_norm);
    let sol = solve_lifted(&problem)?;
    let relaxation_bound = sol.objective_value * scale;

    let mut rng = rng_from(seed);
    let mut candidates = vec![PhaseConfig::zeros(m), co_phasing_phases(ch, user)?];
    candidates.extend(randomized_phases(&sol.blocks[e], randomization_trials, &mut rng)?);

    let mut best: Option<(f64, PhaseConfig)> = None;
    for cand in candidates {
        let s = ch.strength(&cand, user)?;
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, cand));
        }
    }
    let (strength, mut phases) = best.expect("candidate list is non-empty");
    phases.lifted = Some(sol.blocks[e].clone());
    Ok(StrengthSolution {
        strength,
        phases,
        relaxation_bound: relaxation_bound.max(strength),
    })
}

/// Ascending sort by maximal strength; ties keep the lower index first.
pub fn order_users(ch: &ChannelSet, randomization_trials: usize, seed: u64) -> Result<OrderingResult> {
    let k = ch.users();
    if k < 2 {
        return Err(Error::Contract(format!("ordering needs K ≥ 2, got {k}")));
    }
    let per_user: Vec<(f64, PhaseConfig)> = (0..k)
        .into_par_iter()
        .map(|u| max_combined_strength(ch, u, randomization_trials, derive_seed(seed, &[u as u64])))
        .collect::<Result<_>>()?;
    let strengths: Vec<f64> = per_user.iter().map(|(s, _)| *s).collect();
    let best_phases = per_user.into_iter().map(|(_, p)| p).collect();
    Ok(OrderingResult {
        permutation: sort_ascending(&strengths),
        strengths,
        best_phases,
    })
}

/// Indices sorting `values` ascending, ties by index.
pub fn sort_ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{c64, ComplexVector};

    fn siso_channel(f: &[(f64, f64)], g: &[Vec<(f64, f64)>], v: &[(f64, f64)]) -> ChannelSet {
        let m = f.len();
        let fm = ComplexMatrix::from_fn(m, 1, |i, _| c64(f[i].0, f[i].1));
        let gs = g
            .iter()
            .map(|gk| ComplexVector::from_iterator(m, gk.iter().map(|&(a, b)| c64(a, b))))
            .collect();
        let vs = v
            .iter()
            .map(|&(a, b)| ComplexVector::from_element(1, c64(a, b)))
            .collect();
        ChannelSet::new(fm, gs, vs, 1.0).unwrap()
    }

    #[test]
    fn no_elements_gives_direct_strength() {
        let ch = siso_channel(&[], &[vec![], vec![]], &[(1.0, 0.0), (0.0, 2.0)]);
        let (s, p) = max_combined_strength(&ch, 1, 10, 0).unwrap();
        assert!((s - 4.0).abs() < 1e-15);
        assert!(p.is_empty());
    }

    #[test]
    fn single_element_co_phasing() {
        let ch = siso_channel(&[(0.3, -0.7)], &[vec![(1.1, 0.4)]], &[(-0.2, 0.5)]);
        let (s, _) = max_combined_strength(&ch, 0, 20, 3).unwrap();
        let expect = (c64(1.1, 0.4).norm() * c64(0.3, -0.7).norm() + c64(-0.2, 0.5).norm()).powi(2);
        assert!((s - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn weakest_first_and_ties() {
        let ch = siso_channel(&[], &[vec![], vec![]], &[(1.0, 0.0), (2f64.sqrt(), 0.0)]);
        assert_eq!(order_users(&ch, 5, 0).unwrap().permutation, vec![0, 1]);
        let ch = siso_channel(&[], &[vec![], vec![], vec![]], &[(1.0, 0.0); 3]);
        assert_eq!(order_users(&ch, 5, 0).unwrap().permutation, vec![0, 1, 2]);
        let ch = siso_channel(&[], &[vec![], vec![]], &[(3.0, 0.0), (1.0, 0.0)]);
        assert_eq!(order_users(&ch, 5, 0).unwrap().permutation, vec![1, 0]);
    }

    #[test]
    fn zero_trials_rejected() {
        let ch = siso_channel(&[(1.0, 0.0)], &[vec![(1.0, 0.0)]], &[(1.0, 0.0)]);
        assert!(max_combined_strength(&ch, 0, 0, 0).is_err());
    }
}
