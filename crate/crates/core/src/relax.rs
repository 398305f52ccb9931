//! Lifted phase variables shared by the ordering, siso and miso solvers.

use rand::Rng;

use crate::channels::{complex_gaussian_vector, ChannelSet, PhaseConfig};
use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, ComplexMatrix, ComplexVector};
use crate::sdp::{ConstraintMatrix, SdpProblem, SdpSettings, SdpSolution, SdpStatus, Sense};

/// `Γ_k Γ_k^H`, so that `‖h_k‖² = Tr(S E)` for `E = ē ē^H`.
pub fn strength_matrix(ch: &ChannelSet, user: usize) -> Result<ComplexMatrix> {
    let gamma = ch.lifted_gamma(user)?;
    Ok(&gamma * gamma.adjoint())
}

/// An `(M+1)`-dimensional lifted block with every diagonal entry fixed to 1.
pub fn unit_diagonal_problem(m: usize, sense: Sense) -> (SdpProblem, usize) {
    let mut p = SdpProblem::new(sense);
    let e = p.add_block("E", m + 1);
    for i in 0..=m {
        p.fix_diagonal(e, i, 1.0);
    }
    (p, e)
}

pub fn dense(a: ComplexMatrix) -> ConstraintMatrix {
    ConstraintMatrix::Dense(a)
}

/// Unit-modulus candidates from a lifted solution: the principal
/// eigenvector first, then `trials` Gaussian draws `U Λ^{1/2} r`.
pub fn randomized_phases<R: Rng + ?Sized>(
    lifted: &ComplexMatrix,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<PhaseConfig>> {
    let eig = hermitian_eig(lifted)?;
    let dim = eig.dim();
    let factor = eig.psd_factor();
    let mut out = Vec::with_capacity(trials + 1);
    let principal: ComplexVector = eig.eigenvectors.column(0).into_owned();
    out.push(phases_from(&principal));
    for _ in 0..trials {
        let r = complex_gaussian_vector(rng, dim, 1.0);
        out.push(phases_from(&(&factor * r)));
    }
    Ok(out)
}

/// Phases of `e^{j∠(x / x_last)}`; a vanishing last entry falls back to the
/// raw angles.
fn phases_from(x: &ComplexVector) -> PhaseConfig {
    let m = x.len() - 1;
    if x[m].norm() > 1e-300 {
        PhaseConfig::from_lifted_vector(x)
    } else {
        PhaseConfig::from_theta((0..m).map(|i| -x[i].arg()).collect())
    }
}

/// Solve a lifted SDP and require a usable point.
pub fn solve_lifted(problem: &SdpProblem) -> Result<SdpSolution> {
    let sol = crate::sdp::solve(problem, &SdpSettings::default())?;
    match sol.status {
        SdpStatus::Optimal | SdpStatus::Feasible => Ok(sol),
        SdpStatus::Infeasible => Err(Error::Numerical("lifted relaxation reported infeasible".into())),
        SdpStatus::NumericalFailure => Err(Error::Numerical("lifted relaxation failed to converge".into())),
    }
}

/// Normalizer that brings the given Hermitian matrices to unit scale.
pub fn common_scale(mats: &[ComplexMatrix]) -> f64 {
    let s = mats.iter().map(|a| a.norm()).fold(0.0f64, f64::max);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}
