//! Sparse SPD solves and the energy-adaptive Sobolev gradient flow.

pub mod sparse;

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::gpe::{certify, DiscreteProblem, GroundState, Mode};
use crate::hho::{HhoSpace, HybridVector};
use crate::{Error, Result};
pub use sparse::CscMatrix;

/// Systems up to this size are factorised at every solve under
/// [`LinearSolver::Auto`].
pub const DIRECT_SOLVER_LIMIT: usize = 2_500_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Direct up to [`DIRECT_SOLVER_LIMIT`] unknowns, PCG above.
    Auto,
    /// Sparse Cholesky of every matrix.
    Direct,
    /// Conjugate gradients preconditioned with the Cholesky factor of an
    /// earlier matrix, refreshed when the iteration count grows.
    Pcg,
}

impl LinearSolver {
    fn resolve(self, n: usize) -> LinearSolver {
        match self {
            LinearSolver::Auto if n <= DIRECT_SOLVER_LIMIT => LinearSolver::Direct,
            LinearSolver::Auto => LinearSolver::Pcg,
            other => other,
        }
    }
}

/// Relative residual reached by the iterative solver.
pub const PCG_TOL: f64 = 1e-10;
const PCG_MAX_ITER: usize = 1000;
/// A fresh factor is computed once PCG needs more iterations than this.
const PCG_REFRESH_ITER: usize = 12;

/// Reusable SPD solver for a sequence of matrices sharing one pattern.
pub struct SpdSolver {
    kind: LinearSolver,
    symbolic: Option<SymbolicLlt<usize>>,
    factor: Option<Llt<usize, f64>>,
    refresh: bool,
    /// Iterations used by the last PCG solve.
    pub last_iterations: usize,
    /// Number of numeric factorisations so far.
    pub factorizations: usize,
}

impl SpdSolver {
    pub fn new(kind: LinearSolver, n: usize) -> Self {
        SpdSolver {
            kind: kind.resolve(n),
            symbolic: None,
            factor: None,
            refresh: true,
            last_iterations: 0,
            factorizations: 0,
        }
    }

    pub fn kind(&self) -> LinearSolver {
        self.kind
    }

    fn factorize(&mut self, a: &CscMatrix) -> Result<()> {
        if self.symbolic.is_none() {
            let sym = SymbolicLlt::try_new(a.as_faer().symbolic(), Side::Lower)
                .map_err(|e| Error::Solver(format!("symbolic Cholesky failed: {e:?}")))?;
            self.symbolic = Some(sym);
        }
        let sym = self.symbolic.clone().expect("symbolic factor present");
        let llt = Llt::try_new_with_symbolic(sym, a.as_faer(), Side::Lower)
            .map_err(|e| Error::Solver(format!("Cholesky factorisation failed, matrix not positive definite: {e:?}")))?;
        self.factor = Some(llt);
        self.factorizations += 1;
        self.refresh = false;
        Ok(())
    }

    fn apply_factor(&self, b: &[f64]) -> Vec<f64> {
        let llt = self.factor.as_ref().expect("factor present");
        let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        llt.solve_in_place(rhs.as_mut());
        (0..b.len()).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves `A x = b`.
    pub fn solve(&mut self, a: &CscMatrix, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != a.n {
            return Err(Error::Solver(format!("right-hand side has length {}, matrix order {}", b.len(), a.n)));
        }
        match self.kind {
            LinearSolver::Pcg => {
                if self.factor.is_none() || self.refresh {
                    self.factorize(a)?;
                }
                match self.pcg(a, b) {
                    Ok(x) => Ok(x),
                    Err(_) => {
                        self.factorize(a)?;
                        self.pcg(a, b)
                    }
                }
            }
            _ => {
                self.factorize(a)?;
                Ok(self.apply_factor(b))
            }
        }
    }

    fn pcg(&mut self, a: &CscMatrix, b: &[f64]) -> Result<Vec<f64>> {
        let x0 = self.apply_factor(b);
        let (x, iters) = pcg(a, b, x0, |r| self.apply_factor(r), PCG_TOL, PCG_MAX_ITER)?;
        self.last_iterations = iters;
        if iters > PCG_REFRESH_ITER {
            self.refresh = true;
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients from `x`, stopping at
/// `||b - A x|| <= tol ||b||`. Returns the solution and the iteration count.
pub fn pcg<P: FnMut(&[f64]) -> Vec<f64>>(
    a: &CscMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    mut precond: P,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut ax = vec![0.0; n];
    a.mul_vec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    if norm(&r) <= tol * bnorm {
        return Ok((x, 0));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !(rz > 0.0) {
            return Err(Error::Solver(format!(
                "conjugate gradient breakdown at iteration {it}: p^T A p = {pap:e}, r^T z = {rz:e} (matrix or preconditioner not SPD)"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bnorm {
            // guard against drift of the recursive residual
            a.mul_vec(&x, &mut ax);
            let true_res: f64 = b.iter().zip(&ax).map(|(b, a)| (b - a) * (b - a)).sum::<f64>().sqrt();
            if true_res <= tol * bnorm {
                return Ok((x, it));
            }
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!("conjugate gradients did not reach {tol:e} in {max_iter} iterations")))
}

/// One-shot SPD solve.
pub fn solve_spd(a: &CscMatrix, b: &[f64], kind: LinearSolver) -> Result<Vec<f64>> {
    SpdSolver::new(kind, a.n).solve(a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowOptions {
    /// Threshold for both the relative residual and the relative energy
    /// change.
    pub tol: f64,
    pub max_iter: usize,
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Relative residual accepted when the energy can no longer be
    /// decreased in floating point.
    pub floor_tol: f64,
    pub linear_solver: LinearSolver,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-12,
            max_iter: 1000,
            tau0: 1.0,
            tau_min: 2f64.powi(-30),
            tau_max: 4.0,
            floor_tol: 1e-6,
            linear_solver: LinearSolver::Auto,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if !(self.floor_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("floor_tol must be positive, got {}", self.floor_tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.tau_min > 0.0 && self.tau_min < self.tau0 && self.tau0 <= self.tau_max) {
            return Err(Error::InvalidParameter(format!(
                "step bounds must satisfy 0 < tau_min < tau0 <= tau_max, got {} {} {}",
                self.tau_min, self.tau0, self.tau_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iter: usize,
    pub energy: f64,
    pub lambda: f64,
    pub residual: f64,
    /// Step that produced this iterate (0 for the initial state).
    pub tau: f64,
    pub rejections: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,energy,lambda,residual,tau,rejections\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.iter, r.energy, r.lambda, r.residual, r.tau, r.rejections
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// The constant function 1 on every cell and interior face, normalised in
/// the bulk `L2` norm.
pub fn initial_iterate(space: &HhoSpace) -> HybridVector {
    let mut v = space.zero_vector();
    for c in 0..space.num_cells() {
        v.values[space.cell_offset(c)] = space.frames[c].area.sqrt();
    }
    for f in 0..space.mesh.num_faces() {
        if let Some(o) = space.face_offset(f) {
            v.values[o] = space.geometry.face_length[f].sqrt();
        }
    }
    v.normalized()
}

/// Flips the sign of `u` iff `pairing`, the bulk `L2` pairing with the
/// reference, is negative.
pub fn sign_align_with(mut u: HybridVector, pairing: f64) -> HybridVector {
    if pairing < 0.0 {
        u.scale(-1.0);
    }
    u
}

/// Aligns `u` with a reference on the same space.
pub fn sign_align(u: HybridVector, reference: &HybridVector) -> HybridVector {
    let p = u.bulk_inner(reference);
    sign_align_with(u, p)
}

/// Aligns `u` so that its bulk component has non-negative integral.
pub fn sign_align_positive(u: HybridVector, space: &HhoSpace) -> HybridVector {
    let p: f64 = (0..space.num_cells()).map(|c| u.values[space.cell_offset(c)] * space.frames[c].area.sqrt()).sum();
    sign_align_with(u, p)
}

fn relative_residual(dp: &DiscreteProblem, u: &HybridVector, lambda: f64) -> Result<f64> {
    let r = dp.eigenvalue_residual(u, lambda)?;
    Ok(norm(&r) / (lambda.abs() * u.bulk_norm()))
}

/// Minimises the discrete energy of `dp` over bulk-normalised states by the
/// energy-adaptive Sobolev gradient flow, starting from `start` or from
/// [`initial_iterate`].
pub fn gradient_flow(
    dp: &DiscreteProblem,
    options: &FlowOptions,
    start: Option<HybridVector>,
) -> Result<(GroundState, FlowTrace)> {
    options.validate()?;
    let space = &dp.space;
    let mut u = match start {
        Some(s) => {
            if s.len() != space.num_dofs {
                return Err(Error::InvalidState(format!("start vector has {} entries, expected {}", s.len(), space.num_dofs)));
            }
            s.normalized()
        }
        None => initial_iterate(space),
    };
    let mut solver = SpdSolver::new(options.linear_solver, space.num_dofs);
    let mut metric = dp.metric_workspace();
    let mut trace = FlowTrace::default();
    let mut energy = dp.energy(&u);
    let mut energy_change = f64::INFINITY;
    let (mut tau, mut last_tau, mut last_rejections) = (options.tau0, 0.0, 0);
    let mut iterations = 0;
    loop {
        let lambda = dp.rayleigh_quotient(&u);
        let residual = relative_residual(dp, &u, lambda)?;
        trace.records.push(FlowRecord { iter: iterations, energy, lambda, residual, tau: last_tau, rejections: last_rejections });
        if residual < options.tol && energy_change < options.tol {
            break;
        }
        if iterations >= options.max_iter {
            break;
        }

        dp.metric_into(&u, &mut metric);
        let mut rhs = vec![0.0; u.len()];
        rhs[..u.num_cell_dofs].copy_from_slice(u.cell_block());
        let g = solver.solve(&metric, &rhs)?;
        let g = HybridVector { values: g, num_cell_dofs: u.num_cell_dofs };
        let ug = u.bulk_inner(&g);
        if !(ug > 0.0) {
            return Err(Error::Solver(format!("metric solve produced a non-positive pairing (u, g) = {ug:e}")));
        }

        // Walk down the ladder 2 tau, tau, tau/2, ... and keep the lowest
        // energy among non-increasing candidates, stopping once the energy
        // rises again after an acceptance.
        let mut trial = (2.0 * tau).min(options.tau_max);
        let mut rejections = 0;
        let mut accepted: Option<(f64, HybridVector, f64)> = None;
        while trial >= options.tau_min {
            let mut cand = u.scaled(1.0 - trial);
            for (c, gi) in cand.values.iter_mut().zip(&g.values) {
                *c += trial * gi / ug;
            }
            let cand = cand.normalized();
            let e = dp.energy(&cand);
            match &accepted {
                Some((_, _, best)) if e >= *best => break,
                _ if e <= energy => accepted = Some((trial, cand, e)),
                Some(_) => break,
                None => rejections += 1,
            }
            trial *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((step, cand, e)) => {
                let stalled = e >= energy;
                energy_change = (energy - e).abs() / e.abs().max(f64::MIN_POSITIVE);
                u = cand;
                energy = e;
                tau = step;
                last_tau = step;
                last_rejections = rejections;
                if stalled && residual < options.floor_tol {
                    let lambda = dp.rayleigh_quotient(&u);
                    let residual = relative_residual(dp, &u, lambda)?;
                    trace.records.push(FlowRecord { iter: iterations, energy, lambda, residual, tau: step, rejections });
                    break;
                }
            }
            None if residual < options.tol.max(options.floor_tol) => {
                // energy differences have reached rounding level
                break;
            }
            None => return Err(Error::Stagnation { iterations, trace }),
        }
    }
    let last = *trace.records.last().expect("trace has the initial record");
    let u = sign_align_positive(u, space);
    let certificate =
        (dp.mode() == Mode::Modified).then(|| certify(dp.certificate_h(), dp.problem.sigma, energy, 2));
    let state = GroundState {
        state: u,
        energy,
        lambda: last.lambda,
        iterations: last.iter,
        residual: last.residual,
        energy_change,
        certificate,
    };
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_to_csc(d: &DMatrix<f64>) -> CscMatrix {
        let n = d.nrows();
        let elements = vec![(0..n).collect::<Vec<_>>()];
        let mut a = CscMatrix::from_element_pattern(n, &elements);
        let dofs: Vec<Option<usize>> = (0..n).map(Some).collect();
        a.add_element(&dofs, d);
        a
    }

    #[test]
    fn identity_and_two_by_two() {
        let a = CscMatrix::identity(4);
        for kind in [LinearSolver::Direct, LinearSolver::Pcg] {
            assert_eq!(solve_spd(&a, &[1.0, 2.0, 3.0, 4.0], kind).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
            let b = dense_to_csc(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
            let x = solve_spd(&b, &[1.0, 1.0], kind).unwrap();
            assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = b.transpose() * &b + DMatrix::identity(n, n);
        let csc = dense_to_csc(&a);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for kind in [LinearSolver::Direct, LinearSolver::Pcg] {
            let x = solve_spd(&csc, &rhs, kind).unwrap();
            let mut ax = vec![0.0; n];
            csc.mul_vec(&x, &mut ax);
            let res = norm(&ax.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(res <= 1e-11 * norm(&rhs), "{kind:?}: {res}");
        }
        // lagged factor of a nearby matrix as preconditioner
        let mut solver = SpdSolver::new(LinearSolver::Pcg, n);
        solver.solve(&csc, &rhs).unwrap();
        let shifted = dense_to_csc(&(&a + DMatrix::identity(n, n) * 0.5));
        let x = solver.solve(&shifted, &rhs).unwrap();
        let mut ax = vec![0.0; n];
        shifted.mul_vec(&x, &mut ax);
        let res = norm(&ax.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(res <= PCG_TOL * norm(&rhs) * 1.01);
        assert_eq!(solver.factorizations, 1);
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = dense_to_csc(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(solve_spd(&a, &[1.0, 0.0], LinearSolver::Direct), Err(Error::Solver(_))));
        let x0 = vec![0.0, 0.0];
        assert!(matches!(pcg(&a, &[1.0, -1.0], x0, |r| r.to_vec(), 1e-13, 10), Err(Error::Solver(_))));
    }

    #[test]
    fn options_validation() {
        assert!(FlowOptions::default().validate().is_ok());
        let bad = FlowOptions { tol: 0.0, ..FlowOptions::default() };
        assert!(bad.validate().is_err());
        let bad = FlowOptions { tau0: 8.0, ..FlowOptions::default() };
        assert!(bad.validate().is_err());
        let bad = FlowOptions { max_iter: 0, ..FlowOptions::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sign_alignment() {
        let u = HybridVector { values: vec![1.0, -2.0, 3.0], num_cell_dofs: 2 };
        assert_eq!(sign_align_with(u.clone(), 0.5), u);
        assert_eq!(sign_align_with(u.clone(), 0.0), u);
        assert_eq!(sign_align_with(u.clone(), -0.5).values, vec![-1.0, 2.0, -3.0]);
        let r = HybridVector { values: vec![0.0, 1.0, 0.0], num_cell_dofs: 2 };
        assert_eq!(sign_align(u.clone(), &r).values, vec![-1.0, 2.0, -3.0]);
    }

    #[test]
    fn trace_csv_header() {
        let t = FlowTrace {
            records: vec![FlowRecord { iter: 0, energy: 1.5, lambda: 3.0, residual: 0.1, tau: 0.0, rejections: 0 }],
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("iter,energy,lambda,residual,tau,rejections\n0,1.5"));
    }
}
