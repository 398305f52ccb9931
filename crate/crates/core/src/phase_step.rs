//! IRS phase update at fixed transmit beams, shared by the single- and
//! multi-antenna solvers.
//!
//! For a trial SINR level `Q` the lifted feasibility problem over
//! `E ⪰ 0, diag(E) = 1` requires, for every decoding pair `t ≤ k`,
//!
//! ```text
//!   Tr(R_{k,t} E) − Q Σ_{i>t} Tr(R_{k,i} E) ≥ Q σ²,      R_{k,t} = a a^H,  a = Γ_k ω_t
//! ```
//!
//! together with non-decreasing combined strengths along the decoding order.
//! `Q` is bisected; unit-modulus phases are then drawn from the last feasible
//! `E` and scored by the exact SIC-aware SINR.

use num_complex::Complex64;

use crate::channels::{rng_from, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector};
use crate::relax::{dense, randomized_phases, strength_matrix, unit_diagonal_problem};
use crate::sdp::{feasibility_point, Relation, SdpSettings, SdpStatus, Sense};

/// Bisection bracket and relative stopping width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub q_min: f64,
    pub q_max: f64,
    pub eps_b: f64,
}

impl Bisection {
    pub fn new(q_min: f64, q_max: f64, eps_b: f64) -> Result<Self> {
        if !(q_min >= 0.0 && q_max > q_min && q_max.is_finite()) {
            return Err(Error::Contract(format!(
                "invalid bisection bracket [{q_min}, {q_max}]"
            )));
        }
        if !(eps_b > 0.0) {
            return Err(Error::Contract("eps_b must be positive".into()));
        }
        Ok(Self { q_min, q_max, eps_b })
    }

    fn converged(&self, lo: f64, hi: f64) -> bool {
        hi - lo <= self.eps_b * hi.max(f64::MIN_POSITIVE)
    }

    fn midpoint(lo: f64, hi: f64) -> f64 {
        if lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * hi
        }
    }
}

/// Generic bisection: largest `q` in the bracket for which `feasible(q)`
/// returns `Some`, together with that witness.
pub fn bisect<T>(
    bracket: &Bisection,
    lo_witness: Option<T>,
    mut feasible: impl FnMut(f64) -> Result<Option<T>>,
) -> Result<(f64, Option<T>)> {
    let mut lo = bracket.q_min;
    let mut hi = bracket.q_max;
    let mut witness = lo_witness;
    if let Some(w) = feasible(hi)? {
        return Ok((hi, Some(w)));
    }
    while !bracket.converged(lo, hi) {
        let mid = Bisection::midpoint(lo, hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match feasible(mid)? {
            Some(w) => {
                lo = mid;
                witness = Some(w);
            }
            None => hi = mid,
        }
    }
    Ok((lo, witness))
}

/// `|h_k^H ω_t|² / (Σ_{i>t} |h_k^H ω_i|² + σ²)`.
pub fn pair_sinr(h: &ComplexVector, beams: &[ComplexVector], noise: f64, t: usize) -> f64 {
    let gain = |w: &ComplexVector| h.dotc(w).norm_sqr();
    let interference: f64 = beams[t + 1..].iter().map(gain).sum();
    gain(&beams[t]) / (interference + noise)
}

/// Per-flow target SINR `min_{k ≥ t} γ_{t→k}` for users in decoding order.
pub fn target_sinrs(hs: &[ComplexVector], beams: &[ComplexVector], noise: f64) -> Vec<f64> {
    (0..beams.len())
        .map(|t| {
            (t..hs.len())
                .map(|k| pair_sinr(&hs[k], beams, noise, t))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Exact max-min SINR at the given phases and beams.
pub fn min_target_sinr(
    ch: &ChannelSet,
    phases: &PhaseConfig,
    beams: &[ComplexVector],
) -> Result<f64> {
    let hs = combined_channels(ch, phases)?;
    Ok(target_sinrs(&hs, beams, ch.noise_power)
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

pub fn combined_channels(ch: &ChannelSet, phases: &PhaseConfig) -> Result<Vec<ComplexVector>> {
    (0..ch.users()).map(|k| ch.combined_channel(phases, k)).collect()
}

/// Whether strengths are non-decreasing along the decoding order, within a
/// relative slack.
pub fn respects_order(ch: &ChannelSet, phases: &PhaseConfig, slack: f64) -> Result<bool> {
    let s: Vec<f64> = (0..ch.users())
        .map(|k| ch.strength(phases, k))
        .collect::<Result<_>>()?;
    Ok(s.windows(2).all(|w| w[1] >= w[0] * (1.0 - slack)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairSet {
    /// Only `t = k` constraints; cross-decoding follows from the ordering rows.
    OwnFlowOnly,
    /// All `t ≤ k`.
    AllPairs,
}

#[derive(Debug, Clone)]
pub struct PhaseStep {
    pub phases: PhaseConfig,
    /// Exact SINR at `phases`.
    pub q: f64,
    /// Largest `Q` certified feasible for the relaxation.
    pub relaxed_q: f64,
    /// No randomized candidate met the ordering constraint.
    pub no_ordered_candidate: bool,
}

/// Relative slack when checking ordering of candidate phases.
const ORDER_SLACK: f64 = 1e-9;

/// One phase update holding `beams` fixed; never returns worse than
/// `incumbent`.
pub fn optimize_phases(
    ch: &ChannelSet,
    beams: &[ComplexVector],
    pairs: PairSet,
    bracket: &Bisection,
    trials: usize,
    seed: u64,
    incumbent: &PhaseConfig,
) -> Result<PhaseStep> {
    let m = ch.elements();
    let k_users = ch.users();
    if beams.len() != k_users {
        return Err(Error::Contract(format!(
            "{} beams for {k_users} users",
            beams.len()
        )));
    }
    if incumbent.len() != m {
        return Err(Error::Contract("incumbent phase length differs from M".into()));
    }
    let q_inc = min_target_sinr(ch, incumbent, beams)?;
    if m == 0 {
        return Ok(PhaseStep {
            phases: incumbent.clone(),
            q: q_inc,
            relaxed_q: q_inc,
            no_ordered_candidate: false,
        });
    }

    // r[k][t] = Γ_k ω_t; constraint matrices are its outer products.
    let gammas: Vec<ComplexMatrix> = (0..k_users)
        .map(|k| ch.lifted_gamma(k))
        .collect::<Result<_>>()?;
    let strengths: Vec<ComplexMatrix> = (0..k_users)
        .map(|k| strength_matrix(ch, k))
        .collect::<Result<_>>()?;
    let rmat: Vec<Vec<ComplexMatrix>> = gammas
        .iter()
        .map(|g| {
            beams
                .iter()
                .map(|w| {
                    let a = g * w;
                    &a * a.adjoint()
                })
                .collect()
        })
        .collect();
    let r_scale = rmat
        .iter()
        .flatten()
        .map(|r| r.norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let s_scale = crate::relax::common_scale(&strengths);
    let noise = ch.noise_power / r_scale;
    let unit = Complex64::from(1.0 / r_scale);
    let rmat: Vec<Vec<ComplexMatrix>> = rmat
        .into_iter()
        .map(|row| row.into_iter().map(|r| r * unit).collect())
        .collect();
    let order_rows: Vec<ComplexMatrix> = strengths
        .windows(2)
        .map(|w| (&w[1] - &w[0]) / Complex64::from(s_scale))
        .collect();

    let settings = SdpSettings::default();
    let inc_ordered = respects_order(ch, incumbent, ORDER_SLACK)?;
    let feasible_at = |q: f64| -> Result<Option<ComplexMatrix>> {
        let (mut problem, e) = unit_diagonal_problem(m, Sense::Minimize);
        for k in 0..k_users {
            let ts: Vec<usize> = match pairs {
                PairSet::OwnFlowOnly => vec![k],
                PairSet::AllPairs => (0..=k).collect(),
            };
            for t in ts {
                let mut a = rmat[k][t].clone();
                for i in t + 1..k_users {
                    a -= &rmat[k][i] * Complex64::from(q);
                }
                if a.norm() == 0.0 {
                    // 0 ≥ Qσ² has no solution for Q > 0.
                    if q > 0.0 {
                        return Ok(None);
                    }
                    continue;
                }
                problem.add_constraint(vec![(e, dense(a))], Relation::GreaterEq, q * noise);
            }
        }
        for d in &order_rows {
            if d.norm() > 0.0 {
                problem.add_constraint(vec![(e, dense(d.clone()))], Relation::GreaterEq, 0.0);
            }
        }
        let (status, point) = feasibility_point(&problem, &settings)?;
        Ok(match status {
            SdpStatus::Feasible | SdpStatus::Optimal => point.map(|mut b| b.swap_remove(e)),
            _ => None,
        })
    };

    // The incumbent lifts to a feasible point when it respects the order.
    let lo = if inc_ordered { bracket.q_min.max(q_inc.min(bracket.q_max)) } else { bracket.q_min };
    let start = Bisection { q_min: lo, ..*bracket };
    let (relaxed_q, lifted) = if start.q_max > start.q_min {
        bisect(&start, None, feasible_at)?
    } else {
        (lo, None)
    };
    let lifted = match lifted {
        Some(e) => Some(e),
        None => feasible_at(relaxed_q)?,
    };

    let mut best = (q_inc, incumbent.clone());
    let mut any_ordered = false;
    if let Some(e_mat) = &lifted {
        let mut rng = rng_from(seed);
        for cand in randomized_phases(e_mat, trials, &mut rng)? {
            if !respects_order(ch, &cand, ORDER_SLACK)? {
                continue;
            }
            any_ordered = true;
            let q = min_target_sinr(ch, &cand, beams)?;
            if q > best.0 {
                best = (q, cand);
            }
        }
    }
    let (q, mut phases) = best;
    phases.lifted = lifted;
    Ok(PhaseStep {
        phases,
        q,
        relaxed_q,
        no_ordered_candidate: !any_ordered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_finds_threshold() {
        let b = Bisection::new(0.0, 100.0, 1e-9).unwrap();
        let (q, w) = bisect(&b, None, |q| Ok((q <= 3.7).then_some(q))).unwrap();
        assert!((q - 3.7).abs() < 1e-7);
        assert_eq!(w, Some(q));
        let (q, _) = bisect(&b, None, |q| Ok((q <= 200.0).then_some(()))).unwrap();
        assert_eq!(q, 100.0);
    }

    #[test]
    fn bad_bracket() {
        assert!(Bisection::new(1.0, 1.0, 1e-3).is_err());
        assert!(Bisection::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn target_sinr_is_min_over_decoders() {
        use crate::numerics::c64;
        let hs = vec![
            ComplexVector::from_element(1, c64(1.0, 0.0)),
            ComplexVector::from_element(1, c64(0.5, 0.0)),
        ];
        let beams = vec![
            ComplexVector::from_element(1, c64(2.0, 0.0)),
            ComplexVector::from_element(1, c64(1.0, 0.0)),
        ];
        // γ_{1→1} = 4/(1+1) = 2, γ_{1→2} = 1/(0.25+1) = 0.8.
        let t = target_sinrs(&hs, &beams, 1.0);
        assert!((t[0] - 0.8).abs() < 1e-15);
        assert!((t[1] - 0.25).abs() < 1e-15);
    }
}
