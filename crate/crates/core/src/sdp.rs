//! Dense primal-dual interior-point solver for small complex semidefinite
//! programs.
//!
//! Problems are stated over Hermitian PSD blocks with real-linear trace
//! constraints `Σ_b Tr(A_b X_b) ⋈ r`. Internally every inequality receives a
//! nonnegative slack and the program is solved in the standard form
//!
//! ```text
//!   min  Σ Tr(C_b X_b) + c·x      s.t.  Σ Tr(A_ib X_b) + d_i·x = b_i,  X_b ⪰ 0, x ≥ 0
//! ```
//!
//! with an infeasible-start path-following method (HKM search direction,
//! Mehrotra predictor-corrector). Feasibility questions are answered by a
//! phase-I program that minimizes a common violation budget `τ ≥ 0` over the
//! inequality rows.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{hermitian_part, inner, ComplexMatrix};

/// Largest supported block dimension.
pub const MAX_BLOCK_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LessEq,
    GreaterEq,
    Equal,
}

/// Coefficient matrix of one block in a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintMatrix {
    Dense(ComplexMatrix),
    /// `e_i e_i^T`, i.e. the term `X[i,i]`.
    Diagonal(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, ConstraintMatrix)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub dim: usize,
}

/// A semidefinite program over Hermitian PSD blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub blocks: Vec<BlockSpec>,
    pub sense: Sense,
    pub objective: Vec<(usize, ComplexMatrix)>,
    pub constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            blocks: Vec::new(),
            sense,
            objective: Vec::new(),
            constraints: Vec::new(),
        }
    }

    /// Adds a PSD block and returns its index.
    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.blocks.push(BlockSpec {
            name: name.into(),
            dim,
        });
        self.blocks.len() - 1
    }

    pub fn add_objective(&mut self, block: usize, c: ComplexMatrix) {
        self.objective.push((block, c));
    }

    pub fn add_constraint(
        &mut self,
        terms: Vec<(usize, ConstraintMatrix)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            terms,
            relation,
            rhs,
        });
    }

    /// Constrain `X_block[i,i] = value`.
    pub fn fix_diagonal(&mut self, block: usize, i: usize, value: f64) {
        self.add_constraint(
            vec![(block, ConstraintMatrix::Diagonal(i))],
            Relation::Equal,
            value,
        );
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Contract("SDP has no variable blocks".into()));
        }
        for b in &self.blocks {
            if b.dim == 0 {
                return Err(Error::Contract(format!("block '{}' has dimension 0", b.name)));
            }
            if b.dim > MAX_BLOCK_DIM {
                return Err(Error::Contract(format!(
                    "block '{}' has dimension {} above the cap {MAX_BLOCK_DIM}",
                    b.name, b.dim
                )));
            }
        }
        let check = |block: usize, m: &ConstraintMatrix| -> Result<()> {
            let dim = self
                .blocks
                .get(block)
                .ok_or_else(|| Error::Contract(format!("unknown block {block}")))?
                .dim;
            match m {
                ConstraintMatrix::Dense(a) => {
                    if a.shape() != (dim, dim) {
                        return Err(Error::Contract(format!(
                            "coefficient of shape {:?} for block of dimension {dim}",
                            a.shape()
                        )));
                    }
                    crate::numerics::check_hermitian(a)
                }
                ConstraintMatrix::Diagonal(i) if *i < dim => Ok(()),
                ConstraintMatrix::Diagonal(i) => Err(Error::Contract(format!(
                    "diagonal index {i} out of range for dimension {dim}"
                ))),
            }
        };
        for (b, c) in &self.objective {
            check(*b, &ConstraintMatrix::Dense(c.clone()))?;
        }
        for con in &self.constraints {
            if !con.rhs.is_finite() {
                return Err(Error::Contract("non-finite constraint right-hand side".into()));
            }
            for (b, m) in &con.terms {
                check(*b, m)?;
            }
        }
        Ok(())
    }

    /// Largest violation of the constraints at `blocks`, relative to `1 + |r|`.
    pub fn max_residual(&self, blocks: &[ComplexMatrix]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let lhs = constraint_value(c, blocks);
                let viol = match c.relation {
                    Relation::Equal => (lhs - c.rhs).abs(),
                    Relation::GreaterEq => (c.rhs - lhs).max(0.0),
                    Relation::LessEq => (lhs - c.rhs).max(0.0),
                };
                viol / (1.0 + c.rhs.abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn objective_value(&self, blocks: &[ComplexMatrix]) -> f64 {
        self.objective.iter().map(|(b, c)| inner(c, &blocks[*b])).sum()
    }
}

fn constraint_value(c: &Constraint, blocks: &[ComplexMatrix]) -> f64 {
    c.terms
        .iter()
        .map(|(b, m)| match m {
            ConstraintMatrix::Dense(a) => inner(a, &blocks[*b]),
            ConstraintMatrix::Diagonal(i) => blocks[*b][(*i, *i)].re,
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl SdpStatus {
    pub fn has_point(self) -> bool {
        matches!(self, SdpStatus::Optimal | SdpStatus::Feasible)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub blocks: Vec<ComplexMatrix>,
    /// Primal objective in the problem's own sense.
    pub objective_value: f64,
    pub dual_objective: f64,
    /// `|primal − dual| / (1 + |primal| + |dual|)`.
    pub duality_gap: f64,
    pub iterations: usize,
    /// Largest constraint violation of the returned blocks over the
    /// row-equilibrated constraints, relative to `1 + |b|`.
    pub max_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpSettings {
    /// Relative tolerance on residuals and duality gap.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Residual margin that counts a point as feasible, relative to `1 + |r|`.
    pub feasibility_margin: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            feasibility_margin: 1e-7,
        }
    }
}

/// Solve `problem` to the given relative tolerance.
pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    problem.validate()?;
    let sf = StandardForm::build(problem, false);
    let out = sf.run(settings, None);
    let mut sol = sf.extract(problem, &out);
    if sol.status == SdpStatus::NumericalFailure && !problem.constraints.is_empty() {
        // Distinguish genuine infeasibility from a solver stall.
        let (status, _) = feasibility_point(problem, settings)?;
        if status == SdpStatus::Infeasible {
            sol.status = SdpStatus::Infeasible;
        }
    }
    Ok(sol)
}

/// Decide whether the constraint set admits a point within the feasibility
/// margin.
pub fn check_feasible(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpStatus> {
    Ok(feasibility_point(problem, settings)?.0)
}

/// Phase-I solve. Returns `Feasible` together with a point satisfying every
/// constraint within the margin, `Infeasible` with no point, or
/// `NumericalFailure`.
pub fn feasibility_point(
    problem: &SdpProblem,
    settings: &SdpSettings,
) -> Result<(SdpStatus, Option<Vec<ComplexMatrix>>)> {
    problem.validate()?;
    if problem.constraints.is_empty() {
        let zeros = problem
            .blocks
            .iter()
            .map(|b| ComplexMatrix::zeros(b.dim, b.dim))
            .collect();
        return Ok((SdpStatus::Feasible, Some(zeros)));
    }
    let sf = StandardForm::build(problem, true);
    let out = sf.run(settings, sf.tau_index);
    let blocks = sf.unpack_blocks(&out.x);
    let residual = sf.scaled_residual(&out.x);
    let status = match out.status {
        RunStatus::Phase1Feasible => SdpStatus::Feasible,
        RunStatus::Phase1Infeasible | RunStatus::PrimalInfeasible => SdpStatus::Infeasible,
        RunStatus::Converged | RunStatus::Stalled { .. } => {
            if residual <= settings.feasibility_margin {
                SdpStatus::Feasible
            } else if matches!(out.status, RunStatus::Converged) {
                SdpStatus::Infeasible
            } else {
                SdpStatus::NumericalFailure
            }
        }
        RunStatus::DualInfeasible | RunStatus::Failed => {
            if residual <= settings.feasibility_margin {
                SdpStatus::Feasible
            } else {
                SdpStatus::NumericalFailure
            }
        }
    };
    if status == SdpStatus::Feasible && residual > settings.feasibility_margin {
        return Ok((SdpStatus::NumericalFailure, None));
    }
    let point = (status == SdpStatus::Feasible).then_some(blocks);
    Ok((status, point))
}

// ---------------------------------------------------------------------------
// Standard form and the interior-point iteration.

#[derive(Debug, Clone)]
enum Coef {
    Dense(ComplexMatrix),
    Diag(usize),
}

#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, Coef)>,
    lin: Vec<(usize, f64)>,
    b: f64,
    relation: Relation,
}

#[derive(Debug, Clone)]
struct StandardForm {
    dims: Vec<usize>,
    n_lin: usize,
    c_blocks: Vec<Option<ComplexMatrix>>,
    c_lin: Vec<f64>,
    rows: Vec<Row>,
    /// Per-row scale applied to the user rows (`row_scaled = row / scale`).
    row_scale: Vec<f64>,
    obj_scale: f64,
    obj_sign: f64,
    tau_index: Option<usize>,
}

#[derive(Debug, Clone)]
struct Point {
    x: Vec<ComplexMatrix>,
    xl: Vec<f64>,
    z: Vec<ComplexMatrix>,
    zl: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RunStatus {
    Converged,
    Stalled { feasible: bool },
    PrimalInfeasible,
    DualInfeasible,
    Phase1Feasible,
    Phase1Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
struct RunOutput {
    status: RunStatus,
    x: Vec<ComplexMatrix>,
    pobj: f64,
    dobj: f64,
    gap: f64,
    iterations: usize,
}

impl StandardForm {
    fn build(problem: &SdpProblem, phase1: bool) -> Self {
        let dims: Vec<usize> = problem.blocks.iter().map(|b| b.dim).collect();
        let mut rows = Vec::with_capacity(problem.constraints.len());
        let mut n_lin = 0;
        for con in &problem.constraints {
            let terms = con
                .terms
                .iter()
                .map(|(b, m)| {
                    let c = match m {
                        ConstraintMatrix::Dense(a) => Coef::Dense(hermitian_part(a)),
                        ConstraintMatrix::Diagonal(i) => Coef::Diag(*i),
                    };
                    (*b, c)
                })
                .collect();
            let mut lin = Vec::new();
            match con.relation {
                Relation::Equal => {}
                Relation::LessEq => {
                    lin.push((n_lin, 1.0));
                    n_lin += 1;
                }
                Relation::GreaterEq => {
                    lin.push((n_lin, -1.0));
                    n_lin += 1;
                }
            }
            rows.push(Row {
                terms,
                lin,
                b: con.rhs,
                relation: con.relation,
            });
        }

        let mut c_blocks: Vec<Option<ComplexMatrix>> = vec![None; dims.len()];
        let mut c_lin = vec![0.0; n_lin];
        let mut obj_sign = 1.0;
        let mut tau_index = None;
        if !phase1 {
            obj_sign = if problem.sense == Sense::Maximize { -1.0 } else { 1.0 };
            for (b, c) in &problem.objective {
                let c = hermitian_part(c) * Complex64::from(obj_sign);
                c_blocks[*b] = Some(match c_blocks[*b].take() {
                    Some(prev) => prev + c,
                    None => c,
                });
            }
        }

        // Row equilibration: unit Frobenius norm per row.
        let mut row_scale = Vec::with_capacity(rows.len());
        for row in rows.iter_mut() {
            let mut nrm2 = 0.0;
            for (_, c) in &row.terms {
                nrm2 += match c {
                    Coef::Dense(a) => a.norm_squared(),
                    Coef::Diag(_) => 1.0,
                };
            }
            for (_, d) in &row.lin {
                nrm2 += d * d;
            }
            let s = if nrm2 > 0.0 { nrm2.sqrt() } else { 1.0 };
            for (_, c) in row.terms.iter_mut() {
                if let Coef::Dense(a) = c {
                    *a /= Complex64::from(s);
                }
            }
            if matches!(row.terms.as_slice(), [(_, Coef::Diag(_))]) && row.lin.is_empty() {
                // Keep single-entry rows exact.
                row_scale.push(1.0);
                continue;
            }
            // Diagonal terms cannot be rescaled in place; promote them.
            for (b, c) in row.terms.iter_mut() {
                if let Coef::Diag(i) = c {
                    let mut a = ComplexMatrix::zeros(dims[*b], dims[*b]);
                    a[(*i, *i)] = Complex64::from(1.0 / s);
                    *c = Coef::Dense(a);
                }
            }
            for (_, d) in row.lin.iter_mut() {
                *d /= s;
            }
            row.b /= s;
            row_scale.push(s);
        }

        if phase1 && rows.iter().any(|r| r.relation != Relation::Equal) {
            let t = n_lin;
            n_lin += 1;
            c_lin.push(1.0);
            for row in rows.iter_mut() {
                let w = 1.0 + row.b.abs();
                match row.relation {
                    Relation::Equal => {}
                    Relation::GreaterEq => row.lin.push((t, w)),
                    Relation::LessEq => row.lin.push((t, -w)),
                }
            }
            tau_index = Some(t);
        }

        let c_norm = c_blocks
            .iter()
            .flatten()
            .map(|c| c.norm_squared())
            .sum::<f64>()
            + c_lin.iter().map(|c| c * c).sum::<f64>();
        let obj_scale = if c_norm > 0.0 { c_norm.sqrt().max(1e-300) } else { 1.0 };
        for c in c_blocks.iter_mut().flatten() {
            *c /= Complex64::from(obj_scale);
        }
        for c in c_lin.iter_mut() {
            *c /= obj_scale;
        }

        Self {
            dims,
            n_lin,
            c_blocks,
            c_lin,
            rows,
            row_scale,
            obj_scale,
            obj_sign,
            tau_index,
        }
    }

    fn n_total(&self) -> f64 {
        (self.dims.iter().sum::<usize>() + self.n_lin) as f64
    }

    fn apply_a(&self, x: &[ComplexMatrix], xl: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let mut s = 0.0;
                for (b, c) in &row.terms {
                    s += match c {
                        Coef::Dense(a) => inner(a, &x[*b]),
                        Coef::Diag(i) => x[*b][(*i, *i)].re,
                    };
                }
                for (l, d) in &row.lin {
                    s += d * xl[*l];
                }
                s
            })
            .collect()
    }

    /// `Σ_i y_i A_i` split into blocks and linear part.
    fn apply_at(&self, y: &[f64]) -> (Vec<ComplexMatrix>, Vec<f64>) {
        let mut blocks: Vec<ComplexMatrix> =
            self.dims.iter().map(|&d| ComplexMatrix::zeros(d, d)).collect();
        let mut lin = vec![0.0; self.n_lin];
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (b, c) in &row.terms {
                match c {
                    Coef::Dense(a) => blocks[*b] += a * Complex64::from(yi),
                    Coef::Diag(i) => blocks[*b][(*i, *i)] += Complex64::from(yi),
                }
            }
            for (l, d) in &row.lin {
                lin[*l] += d * yi;
            }
        }
        (blocks, lin)
    }

    fn b(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.b).collect()
    }

    fn c_block(&self, b: usize) -> ComplexMatrix {
        self.c_blocks[b]
            .clone()
            .unwrap_or_else(|| ComplexMatrix::zeros(self.dims[b], self.dims[b]))
    }

    fn primal_objective(&self, x: &[ComplexMatrix], xl: &[f64]) -> f64 {
        let mut s = 0.0;
        for (b, c) in self.c_blocks.iter().enumerate() {
            if let Some(c) = c {
                s += inner(c, &x[b]);
            }
        }
        s + self.c_lin.iter().zip(xl).map(|(c, x)| c * x).sum::<f64>()
    }

    fn initial_point(&self) -> Point {
        let nb = self.rows.len();
        let mut xi = 10f64;
        let mut eta = 10f64;
        for &d in &self.dims {
            xi = xi.max((d as f64).sqrt());
            eta = eta.max((d as f64).sqrt());
        }
        for row in &self.rows {
            xi = xi.max(self.n_total().sqrt() * (1.0 + row.b.abs()));
        }
        let c_max = self
            .c_blocks
            .iter()
            .flatten()
            .map(|c| c.norm())
            .chain(self.c_lin.iter().map(|c| c.abs()))
            .fold(0.0f64, f64::max);
        eta = eta.max(1.0 + c_max);
        Point {
            x: self
                .dims
                .iter()
                .map(|&d| ComplexMatrix::identity(d, d) * Complex64::from(xi))
                .collect(),
            xl: vec![xi; self.n_lin],
            z: self
                .dims
                .iter()
                .map(|&d| ComplexMatrix::identity(d, d) * Complex64::from(eta))
                .collect(),
            zl: vec![eta; self.n_lin],
            y: vec![0.0; nb],
        }
    }

    fn run(&self, settings: &SdpSettings, tau: Option<usize>) -> RunOutput {
        let tol = settings.tolerance;
        let n_tot = self.n_total();
        let bvec = self.b();
        let b_norm = bvec.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c_norm = self
            .c_blocks
            .iter()
            .flatten()
            .map(|c| c.norm_squared())
            .sum::<f64>()
            .sqrt()
            .max(self.c_lin.iter().map(|c| c * c).sum::<f64>().sqrt());
        let mut pt = self.initial_point();
        let mut best_feasible: Option<(Vec<ComplexMatrix>, f64, f64, f64)> = None;
        let mut last = (f64::NAN, f64::NAN, f64::INFINITY);
        let mut small_steps = 0;

        for iter in 0..settings.max_iterations {
            // Residuals.
            let ax = self.apply_a(&pt.x, &pt.xl);
            let rp: Vec<f64> = bvec.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let (aty, aty_l) = self.apply_at(&pt.y);
            let rd: Vec<ComplexMatrix> = (0..self.dims.len())
                .map(|b| self.c_block(b) - &pt.z[b] - &aty[b])
                .collect();
            let rd_l: Vec<f64> = (0..self.n_lin)
                .map(|l| self.c_lin[l] - pt.zl[l] - aty_l[l])
                .collect();
            let xz: f64 = pt.x.iter().zip(&pt.z).map(|(x, z)| inner(x, z)).sum::<f64>()
                + pt.xl.iter().zip(&pt.zl).map(|(x, z)| x * z).sum::<f64>();
            let mu = xz / n_tot;
            let pobj = self.primal_objective(&pt.x, &pt.xl);
            let dobj: f64 = bvec.iter().zip(&pt.y).map(|(b, y)| b * y).sum();
            let pinf = norm(&rp) / (1.0 + b_norm);
            let dinf = (rd.iter().map(|r| r.norm_squared()).sum::<f64>()
                + rd_l.iter().map(|r| r * r).sum::<f64>())
            .sqrt()
                / (1.0 + c_norm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            last = (pobj, dobj, gap);

            if pinf <= tol && dinf <= tol && gap <= tol {
                return self.output(RunStatus::Converged, pt.x, pobj, dobj, gap, iter);
            }
            if pinf <= tol * 10.0 {
                best_feasible = Some((pt.x.clone(), pobj, dobj, gap));
            }

            if let Some(t) = tau {
                let margin = settings.feasibility_margin * 0.5;
                if pt.xl[t] <= margin && pinf <= tol * 10.0 {
                    return self.output(RunStatus::Phase1Feasible, pt.x, pobj, dobj, gap, iter);
                }
                if dinf <= tol && dobj > settings.feasibility_margin * 2.0 {
                    return self.output(RunStatus::Phase1Infeasible, pt.x, pobj, dobj, gap, iter);
                }
            }

            // Farkas-type certificates.
            if dobj > 0.0 {
                let neg = self.cone_violation(&aty, &aty_l, -1.0);
                if dobj > 1e3 && neg / dobj <= 1e-8 {
                    return self.output(RunStatus::PrimalInfeasible, pt.x, pobj, dobj, gap, iter);
                }
            }
            if pobj < -1e8 && pinf * (1.0 + b_norm) / pobj.abs() < 1e-10 {
                return self.output(RunStatus::DualInfeasible, pt.x, pobj, dobj, gap, iter);
            }

            // Newton system.
            let Some(zinv) = pt.z.iter().map(inverse_pd).collect::<Option<Vec<_>>>() else {
                break;
            };
            let Some(schur) = self.schur(&pt, &zinv) else {
                break;
            };

            let dir = |sigma_mu: f64,
                       corr: Option<(&[ComplexMatrix], &[f64])>|
             -> Option<(Vec<ComplexMatrix>, Vec<f64>, Vec<ComplexMatrix>, Vec<f64>, Vec<f64>)> {
                // R_b = σμ Z⁻¹ − X − X Rd Z⁻¹ − corr
                let mut rb = Vec::with_capacity(self.dims.len());
                for b in 0..self.dims.len() {
                    let mut r = &zinv[b] * Complex64::from(sigma_mu) - &pt.x[b] - &pt.x[b] * &rd[b] * &zinv[b];
                    if let Some((cb, _)) = corr {
                        r -= &cb[b];
                    }
                    rb.push(hermitian_part(&r));
                }
                let rl: Vec<f64> = (0..self.n_lin)
                    .map(|l| {
                        let mut v = sigma_mu - pt.xl[l] * pt.zl[l] - pt.xl[l] * rd_l[l];
                        if let Some((_, cl)) = corr {
                            v -= cl[l];
                        }
                        v / pt.zl[l]
                    })
                    .collect();
                let arb = self.apply_a(&rb, &rl);
                let rhs: Vec<f64> = rp.iter().zip(&arb).map(|(r, a)| r - a).collect();
                let dy = schur.solve(&DVector::from_vec(rhs));
                let dy: Vec<f64> = dy.iter().copied().collect();
                if dy.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let (atdy, atdy_l) = self.apply_at(&dy);
                let dz: Vec<ComplexMatrix> = (0..self.dims.len()).map(|b| &rd[b] - &atdy[b]).collect();
                let dzl: Vec<f64> = (0..self.n_lin).map(|l| rd_l[l] - atdy_l[l]).collect();
                let mut dx = Vec::with_capacity(self.dims.len());
                for b in 0..self.dims.len() {
                    let mut r = &zinv[b] * Complex64::from(sigma_mu) - &pt.x[b] - &pt.x[b] * &dz[b] * &zinv[b];
                    if let Some((cb, _)) = corr {
                        r -= &cb[b];
                    }
                    dx.push(hermitian_part(&r));
                }
                let dxl: Vec<f64> = (0..self.n_lin)
                    .map(|l| {
                        let mut v = sigma_mu - pt.xl[l] * pt.zl[l] - pt.xl[l] * dzl[l];
                        if let Some((_, cl)) = corr {
                            v -= cl[l];
                        }
                        v / pt.zl[l]
                    })
                    .collect();
                Some((dx, dxl, dz, dzl, dy))
            };

            // Predictor.
            let Some((dx_a, dxl_a, dz_a, dzl_a, _)) = dir(0.0, None) else {
                break;
            };
            let ap = max_step(&pt.x, &dx_a, &pt.xl, &dxl_a).min(1.0);
            let ad = max_step(&pt.z, &dz_a, &pt.zl, &dzl_a).min(1.0);
            let mut mu_aff = 0.0;
            for b in 0..self.dims.len() {
                let xa = &pt.x[b] + &dx_a[b] * Complex64::from(ap);
                let za = &pt.z[b] + &dz_a[b] * Complex64::from(ad);
                mu_aff += inner(&xa, &za);
            }
            for l in 0..self.n_lin {
                mu_aff += (pt.xl[l] + ap * dxl_a[l]) * (pt.zl[l] + ad * dzl_a[l]);
            }
            mu_aff /= n_tot;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let corr_b: Vec<ComplexMatrix> = (0..self.dims.len())
                .map(|b| &dx_a[b] * &dz_a[b] * &zinv[b])
                .collect();
            let corr_l: Vec<f64> = (0..self.n_lin).map(|l| dxl_a[l] * dzl_a[l]).collect();
            let Some((dx, dxl, dz, dzl, dy)) = dir(sigma * mu, Some((&corr_b, &corr_l))) else {
                break;
            };
            let gamma = if iter < 3 { 0.9 } else { 0.98 };
            let ap = (gamma * max_step(&pt.x, &dx, &pt.xl, &dxl)).min(1.0);
            let ad = (gamma * max_step(&pt.z, &dz, &pt.zl, &dzl)).min(1.0);
            if ap < 1e-10 && ad < 1e-10 {
                small_steps += 1;
                if small_steps > 3 {
                    break;
                }
            }
            for b in 0..self.dims.len() {
                pt.x[b] += &dx[b] * Complex64::from(ap);
                pt.x[b] = hermitian_part(&pt.x[b]);
                pt.z[b] += &dz[b] * Complex64::from(ad);
                pt.z[b] = hermitian_part(&pt.z[b]);
            }
            for l in 0..self.n_lin {
                pt.xl[l] += ap * dxl[l];
                pt.zl[l] += ad * dzl[l];
            }
            for (yi, d) in pt.y.iter_mut().zip(&dy) {
                *yi += ad * d;
            }
        }

        match best_feasible {
            Some((x, pobj, dobj, gap)) => self.output(
                RunStatus::Stalled { feasible: true },
                x,
                pobj,
                dobj,
                gap,
                settings.max_iterations,
            ),
            None => {
                let (pobj, dobj, gap) = last;
                self.output(RunStatus::Failed, pt.x, pobj, dobj, gap, settings.max_iterations)
            }
        }
    }

    /// Largest negative-eigenvalue magnitude of `sign · (blocks, lin)`.
    fn cone_violation(&self, blocks: &[ComplexMatrix], lin: &[f64], sign: f64) -> f64 {
        let mut worst = 0.0f64;
        for b in blocks {
            let m = b * Complex64::from(sign);
            let ev = hermitian_part(&m).symmetric_eigenvalues();
            let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max(-lo);
        }
        for &l in lin {
            worst = worst.max(-(sign * l));
        }
        worst
    }

    fn schur(&self, pt: &Point, zinv: &[ComplexMatrix]) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        let m = self.rows.len();
        let mut s = DMatrix::<f64>::zeros(m, m);
        // G_j = X A_j Z⁻¹ per block, then M_ij = <A_i, G_j>.
        let mut g: Vec<Vec<(usize, ComplexMatrix)>> = Vec::with_capacity(m);
        for row in &self.rows {
            let gj = row
                .terms
                .iter()
                .map(|(b, c)| {
                    let gb = match c {
                        Coef::Dense(a) => &pt.x[*b] * a * &zinv[*b],
                        Coef::Diag(i) => pt.x[*b].column(*i) * zinv[*b].row(*i),
                    };
                    (*b, gb)
                })
                .collect();
            g.push(gj);
        }
        for i in 0..m {
            for j in i..m {
                let mut v = 0.0;
                for (bi, ci) in &self.rows[i].terms {
                    for (bj, gb) in &g[j] {
                        if bi != bj {
                            continue;
                        }
                        v += match ci {
                            Coef::Dense(a) => inner(a, gb),
                            Coef::Diag(p) => gb[(*p, *p)].re,
                        };
                    }
                }
                for (li, di) in &self.rows[i].lin {
                    for (lj, dj) in &self.rows[j].lin {
                        if li == lj {
                            v += di * dj * pt.xl[*li] / pt.zl[*li];
                        }
                    }
                }
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        if let Some(ch) = s.clone().cholesky() {
            return Some(ch);
        }
        let diag_max = (0..m).map(|i| s[(i, i)].abs()).fold(0.0f64, f64::max);
        for k in 0..6 {
            let mut reg = s.clone();
            let eps = diag_max * 1e-14 * 100f64.powi(k);
            for i in 0..m {
                reg[(i, i)] += eps;
            }
            if let Some(ch) = reg.cholesky() {
                return Some(ch);
            }
        }
        None
    }

    fn output(
        &self,
        status: RunStatus,
        x: Vec<ComplexMatrix>,
        pobj: f64,
        dobj: f64,
        gap: f64,
        iterations: usize,
    ) -> RunOutput {
        RunOutput {
            status,
            x,
            pobj,
            dobj,
            gap,
            iterations,
        }
    }

    /// Largest violation over the equilibrated rows, ignoring slacks and
    /// the phase-I budget, relative to `1 + |b|`.
    fn scaled_residual(&self, x: &[ComplexMatrix]) -> f64 {
        self.rows
            .iter()
            .map(|row| {
                let mut s = 0.0;
                for (b, c) in &row.terms {
                    s += match c {
                        Coef::Dense(a) => inner(a, &x[*b]),
                        Coef::Diag(i) => x[*b][(*i, *i)].re,
                    };
                }
                let viol = match row.relation {
                    Relation::Equal => (s - row.b).abs(),
                    Relation::GreaterEq => (row.b - s).max(0.0),
                    Relation::LessEq => (s - row.b).max(0.0),
                };
                viol / (1.0 + row.b.abs())
            })
            .fold(0.0, f64::max)
    }

    fn unpack_blocks(&self, x: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
        x.iter().map(hermitian_part).collect()
    }

    fn extract(&self, problem: &SdpProblem, out: &RunOutput) -> SdpSolution {
        let blocks = self.unpack_blocks(&out.x);
        let max_residual = self.scaled_residual(&out.x);
        let scale = self.obj_scale * self.obj_sign;
        let objective_value = problem.objective_value(&blocks);
        let dual_objective = out.dobj * scale;
        let _ = &self.row_scale;
        let status = match out.status {
            RunStatus::Converged => SdpStatus::Optimal,
            RunStatus::Stalled { feasible: true } if max_residual <= 1e-7 => {
                if out.gap <= 1e-7 {
                    SdpStatus::Optimal
                } else {
                    SdpStatus::Feasible
                }
            }
            RunStatus::PrimalInfeasible | RunStatus::Phase1Infeasible => SdpStatus::Infeasible,
            _ => SdpStatus::NumericalFailure,
        };
        let duality_gap = if out.gap.is_finite() { out.gap } else { f64::INFINITY };
        let _ = out.pobj;
        SdpSolution {
            status,
            blocks,
            objective_value,
            dual_objective,
            duality_gap,
            iterations: out.iterations,
            max_residual,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn inverse_pd(a: &ComplexMatrix) -> Option<ComplexMatrix> {
    let ch = a.clone().cholesky()?;
    Some(hermitian_part(&ch.inverse()))
}

/// Largest `α` with `X + αΔX ⪰ 0` and `x + αΔx ≥ 0` (may be infinite).
fn max_step(x: &[ComplexMatrix], dx: &[ComplexMatrix], xl: &[f64], dxl: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (xb, db) in x.iter().zip(dx) {
        let Some(ch) = xb.clone().cholesky() else {
            return 0.0;
        };
        let l = ch.l();
        // L⁻¹ ΔX L⁻ᴴ
        let Some(t) = l.solve_lower_triangular(db) else {
            return 0.0;
        };
        let Some(m) = l.solve_lower_triangular(&t.adjoint()) else {
            return 0.0;
        };
        let lo = hermitian_part(&m)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if lo < 0.0 {
            alpha = alpha.min(-1.0 / lo);
        }
    }
    for (&v, &d) in xl.iter().zip(dxl) {
        if d < 0.0 {
            alpha = alpha.min(-v / d);
        }
    }
    alpha
}
