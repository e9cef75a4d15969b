//! Hybrid high-order discretisation: cell unknowns of degree `k + 1`, face
//! unknowns of degree `k`, homogeneous Dirichlet conditions imposed by
//! dropping boundary faces from the dof map.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::fespace::{
    cell_dim, face_dim, make_quadrature, project_cell_with, project_face_with, projection_degree, CellBasis, CellFrame,
    CellTabulation, FaceBasis, PiecewisePolynomial, QuadratureRule, Shape,
};
use crate::mesh::{compute_geometry, GeometryCache, TriMesh};
use crate::solver::sparse::CscMatrix;
use crate::{Error, Result};

/// Largest face degree supported by the discretisation (cell degree `k + 1`).
pub const MAX_K: usize = 3;

/// Discrete space `P^{k+1}(T_h) x P^k(F_h)` restricted to zero boundary
/// traces.
///
/// Global layout: all cell blocks first (cell `c` at `c * cell_dim`), then
/// one block per interior face.
#[derive(Clone, Debug)]
pub struct HhoSpace {
    pub mesh: TriMesh,
    pub geometry: GeometryCache,
    pub k: usize,
    pub frames: Vec<CellFrame>,
    face_offsets: Vec<Option<usize>>,
    pub num_cell_dofs: usize,
    pub num_dofs: usize,
    tabulation: Arc<CellTabulation>,
}

impl HhoSpace {
    pub fn new(mesh: TriMesh, k: usize) -> Result<Self> {
        if k > MAX_K {
            return Err(Error::InvalidParameter(format!("face degree k = {k} exceeds {MAX_K}")));
        }
        let geometry = compute_geometry(&mesh);
        let frames = (0..mesh.num_cells()).map(|c| CellFrame::of_cell(&mesh, c)).collect();
        let nc = cell_dim(k + 1);
        let nf = face_dim(k);
        let num_cell_dofs = mesh.num_cells() * nc;
        let mut next = num_cell_dofs;
        let face_offsets = mesh
            .boundary_face
            .iter()
            .map(|&b| {
                if b {
                    None
                } else {
                    next += nf;
                    Some(next - nf)
                }
            })
            .collect();
        let rule = make_quadrature(Shape::Triangle, 2 * k + 2)?;
        Ok(HhoSpace {
            mesh,
            geometry,
            k,
            frames,
            face_offsets,
            num_cell_dofs,
            num_dofs: next,
            tabulation: Arc::new(CellTabulation::new(k + 1, rule)),
        })
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_cells()
    }

    /// Dimension of `P^{k+1}(T)`.
    pub fn cell_dim(&self) -> usize {
        cell_dim(self.k + 1)
    }

    /// Dimension of `P^k(F)`.
    pub fn face_dim(&self) -> usize {
        face_dim(self.k)
    }

    pub fn local_dim(&self) -> usize {
        self.cell_dim() + 3 * self.face_dim()
    }

    pub fn cell_offset(&self, c: usize) -> usize {
        c * self.cell_dim()
    }

    pub fn face_offset(&self, f: usize) -> Option<usize> {
        self.face_offsets[f]
    }

    pub fn cell_basis(&self, c: usize) -> CellBasis {
        CellBasis::new(self.k + 1, self.frames[c])
    }

    /// Global index of each local dof of cell `c`; `None` on boundary faces.
    pub fn local_dofs(&self, c: usize) -> Vec<Option<usize>> {
        let (nc, nf) = (self.cell_dim(), self.face_dim());
        let mut dofs = Vec::with_capacity(self.local_dim());
        dofs.extend((0..nc).map(|i| Some(self.cell_offset(c) + i)));
        for &f in &self.mesh.cell_faces[c] {
            match self.face_offsets[f] {
                Some(o) => dofs.extend((0..nf).map(|j| Some(o + j))),
                None => dofs.extend(std::iter::repeat_n(None, nf)),
            }
        }
        dofs
    }

    pub fn gather(&self, v: &HybridVector, c: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.local_dim(),
            self.local_dofs(c).into_iter().map(|d| d.map_or(0.0, |d| v.values[d])),
        )
    }

    pub fn zero_vector(&self) -> HybridVector {
        HybridVector { values: vec![0.0; self.num_dofs], num_cell_dofs: self.num_cell_dofs }
    }

    /// Cell-mean of the bulk component on every cell.
    pub fn cell_means(&self, v: &HybridVector) -> Vec<f64> {
        let nc = self.cell_dim();
        (0..self.num_cells()).map(|c| v.values[c * nc] / self.frames[c].area.sqrt()).collect()
    }

    fn shape_key(&self, c: usize) -> [u64; 6] {
        let j = self.frames[c].jac;
        let s = self.mesh.cell_face_signs[c];
        let sign_bits = s.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i));
        [
            j[0][0].to_bits(),
            j[0][1].to_bits(),
            j[1][0].to_bits(),
            j[1][1].to_bits(),
            sign_bits,
            self.k as u64,
        ]
    }
}

/// Coefficients of a member of the hybrid space: the cell block followed by
/// the interior-face block.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridVector {
    pub values: Vec<f64>,
    pub num_cell_dofs: usize,
}

impl HybridVector {
    pub fn cell_block(&self) -> &[f64] {
        &self.values[..self.num_cell_dofs]
    }

    pub fn face_block(&self) -> &[f64] {
        &self.values[self.num_cell_dofs..]
    }

    /// L2 norm of the bulk component, `||v_T||_{L2}`.
    pub fn bulk_norm(&self) -> f64 {
        self.cell_block().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(v_T, w_T)_{L2}`.
    pub fn bulk_inner(&self, other: &HybridVector) -> f64 {
        self.cell_block().iter().zip(other.cell_block()).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut v = self.clone();
        v.scale(s);
        v
    }

    /// Rescales to unit bulk norm.
    pub fn normalized(&self) -> Self {
        self.scaled(1.0 / self.bulk_norm())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-cell matrices of the discretisation, in the local layout
/// `[cell block, face 0, face 1, face 2]`.
#[derive(Clone, Debug)]
pub struct LocalOperators {
    /// `R_T`: local hybrid coefficients to `P^{k+1}(T)` coefficients.
    pub reconstruction: DMatrix<f64>,
    /// `(grad phi_i, grad phi_j)_T` on `P^{k+1}(T)`.
    pub gradient_stiffness: DMatrix<f64>,
    /// `R_T^T G_T R_T`.
    pub stiffness: DMatrix<f64>,
    /// Stabilisation for `sigma = 1`.
    pub unit_stabilization: DMatrix<f64>,
    /// `L2(F)`-projection onto `P^k(F)` of traces of the cell basis.
    pub face_traces: [DMatrix<f64>; 3],
}

impl LocalOperators {
    pub fn new(space: &HhoSpace, c: usize) -> Result<Self> {
        let k = space.k;
        let (nc, nf, nl) = (space.cell_dim(), space.face_dim(), space.local_dim());
        let frame = &space.frames[c];
        let tab = &*space.tabulation;

        let mut gram = DMatrix::<f64>::zeros(nc, nc);
        let mut rhs = DMatrix::<f64>::zeros(nc, nl);
        let mut grads = vec![[0.0; 2]; nc];
        let mut laps = vec![0.0; nc];
        for q in 0..tab.len() {
            let w = tab.weight(q, frame);
            for i in 0..nc {
                grads[i] = frame.push_gradient(tab.gradients[q * nc + i]);
                laps[i] = frame.push_laplacian(tab.hessians[q * nc + i]);
            }
            let vals = tab.values_at(q);
            for i in 0..nc {
                for j in 0..nc {
                    gram[(i, j)] += w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                    // -(v_T, lap phi_i)
                    rhs[(i, j)] -= w * laps[i] * frame.scale * vals[j];
                }
            }
        }

        let basis = space.cell_basis(c);
        let face_basis = FaceBasis::new(k);
        let seg = make_quadrature(Shape::Segment, 2 * k + 2)?;
        let mut face_traces: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(nf, nc));
        let mut mu = vec![0.0; nf];
        let mut vals = vec![0.0; nc];
        for (i, trace) in face_traces.iter_mut().enumerate() {
            let f = space.mesh.cell_faces[c][i];
            let [a, b] = space.mesh.faces[f];
            let (pa, pb) = (space.mesh.vertices[a], space.mesh.vertices[b]);
            let len = space.geometry.face_length[f];
            let n = space.geometry.outward_normal(&space.mesh, c, i);
            for q in 0..seg.len() {
                let s = seg.reference_point(q)[0];
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let w = len * seg.weights[q];
                face_basis.values(s, len, &mut mu);
                basis.gradients_at(x, &mut grads);
                basis.values_at(x, &mut vals);
                for r in 0..nc {
                    let dn = grads[r][0] * n[0] + grads[r][1] * n[1];
                    for m in 0..nf {
                        // (v_F, d_n phi_r)_F
                        rhs[(r, nc + i * nf + m)] += w * mu[m] * dn;
                        trace[(m, r)] += w * mu[m] * vals[r];
                    }
                }
            }
        }

        let mut reconstruction = DMatrix::<f64>::zeros(nc, nl);
        reconstruction[(0, 0)] = 1.0;
        let reduced = gram.view((1, 1), (nc - 1, nc - 1)).clone_owned();
        let chol = reduced
            .cholesky()
            .ok_or_else(|| Error::Assembly(format!("singular reconstruction system on cell {c}")))?;
        let solved = chol.solve(&rhs.rows(1, nc - 1).clone_owned());
        reconstruction.rows_mut(1, nc - 1).copy_from(&solved);

        let stiffness = reconstruction.transpose() * &gram * &reconstruction;

        let h = space.geometry.cell_diameter[c];
        let mut cell_dev = -reconstruction.clone();
        for i in 0..nc {
            cell_dev[(i, i)] += 1.0;
        }
        let mut unit_stabilization = cell_dev.transpose() * &cell_dev / (h * h);
        for (i, trace) in face_traces.iter().enumerate() {
            let mut face_dev = -(trace * &reconstruction);
            for m in 0..nf {
                face_dev[(m, nc + i * nf + m)] += 1.0;
            }
            unit_stabilization += face_dev.transpose() * &face_dev / space.geometry.ell[c][i];
        }

        Ok(LocalOperators { reconstruction, gradient_stiffness: gram, stiffness, unit_stabilization, face_traces })
    }

    /// `S_T` for stabilisation parameter `sigma > 0`.
    pub fn stabilization(&self, sigma: f64) -> Result<DMatrix<f64>> {
        check_sigma(sigma)?;
        Ok(&self.unit_stabilization * sigma)
    }

    /// `K_T + S_T`, the local matrix of `a_h`.
    pub fn local_matrix(&self, sigma: f64) -> Result<DMatrix<f64>> {
        Ok(&self.stiffness + self.stabilization(sigma)?)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("stabilisation parameter must be positive, got {sigma}")));
    }
    Ok(())
}

/// Local operators shared between congruent, equally oriented cells.
pub struct LocalOperatorCache<'a> {
    space: &'a HhoSpace,
    cache: HashMap<[u64; 6], Arc<LocalOperators>>,
}

impl<'a> LocalOperatorCache<'a> {
    pub fn new(space: &'a HhoSpace) -> Self {
        Self { space, cache: HashMap::new() }
    }

    pub fn get(&mut self, c: usize) -> Result<Arc<LocalOperators>> {
        let key = self.space.shape_key(c);
        if let Some(op) = self.cache.get(&key) {
            return Ok(op.clone());
        }
        let op = Arc::new(LocalOperators::new(self.space, c)?);
        self.cache.insert(key, op.clone());
        Ok(op)
    }
}

pub fn local_reconstruction(space: &HhoSpace, c: usize) -> Result<DMatrix<f64>> {
    Ok(LocalOperators::new(space, c)?.reconstruction)
}

pub fn local_stabilization(space: &HhoSpace, c: usize, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    LocalOperators::new(space, c)?.stabilization(sigma)
}

/// Sparse pattern with one element per cell.
pub fn system_pattern(space: &HhoSpace) -> CscMatrix {
    let elements: Vec<Vec<usize>> =
        (0..space.num_cells()).map(|c| space.local_dofs(c).into_iter().flatten().collect()).collect();
    CscMatrix::from_element_pattern(space.num_dofs, &elements)
}

/// Assembled global operators.
#[derive(Clone, Debug)]
pub struct GlobalSystem {
    pub sigma: f64,
    /// Matrix of `a_h` on the dof space.
    pub a: CscMatrix,
    /// Matrix of `s_h`.
    pub s: CscMatrix,
    /// Bulk mass: identity on cell dofs, zero on face dofs.
    pub m: CscMatrix,
}

/// Matrix of `a_h` only.
pub fn assemble_operator(space: &HhoSpace, sigma: f64) -> Result<CscMatrix> {
    check_sigma(sigma)?;
    let mut a = system_pattern(space);
    let mut cache = LocalOperatorCache::new(space);
    for c in 0..space.num_cells() {
        let ops = cache.get(c)?;
        a.add_element(&space.local_dofs(c), &ops.local_matrix(sigma)?);
    }
    Ok(a)
}

pub fn assemble_global(space: &HhoSpace, sigma: f64) -> Result<GlobalSystem> {
    check_sigma(sigma)?;
    let mut a = system_pattern(space);
    let mut s = a.zeroed_like();
    let mut cache = LocalOperatorCache::new(space);
    for c in 0..space.num_cells() {
        let ops = cache.get(c)?;
        let dofs = space.local_dofs(c);
        let stab = ops.stabilization(sigma)?;
        a.add_element(&dofs, &(&ops.stiffness + &stab));
        s.add_element(&dofs, &stab);
    }
    let mut m = CscMatrix::identity(space.num_dofs);
    for v in &mut m.values[space.num_cell_dofs..] {
        *v = 0.0;
    }
    Ok(GlobalSystem { sigma, a, s, m })
}

/// `I_h f = (Pi^{k+1} f, Pi^k f)`; boundary faces are dropped.
pub fn interpolate<F: Fn([f64; 2]) -> f64>(space: &HhoSpace, f: F) -> HybridVector {
    let deg = projection_degree(space.k + 1);
    interpolate_with(space, f, deg).expect("projection degree is capped")
}

/// [`interpolate`] with cell and face rules of degree `quad_degree`.
pub fn interpolate_with<F: Fn([f64; 2]) -> f64>(space: &HhoSpace, f: F, quad_degree: usize) -> Result<HybridVector> {
    let mut v = space.zero_vector();
    let nc = space.cell_dim();
    for c in 0..space.num_cells() {
        let coeffs = project_cell_with(&f, space.k + 1, &space.frames[c], quad_degree)?;
        let o = space.cell_offset(c);
        v.values[o..o + nc].copy_from_slice(&coeffs);
    }
    for (fi, &[a, b]) in space.mesh.faces.iter().enumerate() {
        if let Some(o) = space.face_offset(fi) {
            let coeffs = project_face_with(&f, space.k, space.mesh.vertices[a], space.mesh.vertices[b], quad_degree)?;
            v.values[o..o + coeffs.len()].copy_from_slice(&coeffs);
        }
    }
    Ok(v)
}

/// `R_h v` as a broken polynomial of degree `k + 1`.
pub fn reconstruct(space: &HhoSpace, v: &HybridVector) -> Result<PiecewisePolynomial> {
    let mut out = PiecewisePolynomial::zeros(space.k + 1, space.num_cells());
    let mut cache = LocalOperatorCache::new(space);
    for c in 0..space.num_cells() {
        let ops = cache.get(c)?;
        let r = &ops.reconstruction * space.gather(v, c);
        out.cell_mut(c).copy_from_slice(r.as_slice());
    }
    Ok(out)
}

/// Elliptic projection `G_h f`: per cell, gradients match those of `f` in
/// `P^{k+1}(T)` and the cell mean is preserved.
pub fn elliptic_projection<F, G>(space: &HhoSpace, f: F, grad: G) -> Result<PiecewisePolynomial>
where
    F: Fn([f64; 2]) -> f64,
    G: Fn([f64; 2]) -> [f64; 2],
{
    elliptic_projection_with(space, f, grad, projection_degree(space.k + 1))
}

/// [`elliptic_projection`] with a cell rule of degree `quad_degree`.
pub fn elliptic_projection_with<F, G>(space: &HhoSpace, f: F, grad: G, quad_degree: usize) -> Result<PiecewisePolynomial>
where
    F: Fn([f64; 2]) -> f64,
    G: Fn([f64; 2]) -> [f64; 2],
{
    let l = space.k + 1;
    let nc = space.cell_dim();
    let rule: &QuadratureRule = make_quadrature(Shape::Triangle, quad_degree)?;
    let mut out = PiecewisePolynomial::zeros(l, space.num_cells());
    let mut grads = vec![[0.0; 2]; nc];
    let mut cache = LocalOperatorCache::new(space);
    for c in 0..space.num_cells() {
        let frame = &space.frames[c];
        let basis = space.cell_basis(c);
        let mut rhs = DVector::<f64>::zeros(nc);
        let mut mean = 0.0;
        for q in 0..rule.len() {
            let x = frame.to_physical(rule.reference_point(q));
            let w = 2.0 * frame.area * rule.weights[q];
            let g = grad(x);
            basis.gradients_at(x, &mut grads);
            for i in 1..nc {
                rhs[i] += w * (g[0] * grads[i][0] + g[1] * grads[i][1]);
            }
            mean += w * f(x);
        }
        let gram = &cache.get(c)?.gradient_stiffness;
        let reduced = gram.view((1, 1), (nc - 1, nc - 1)).clone_owned();
        let chol = reduced
            .cholesky()
            .ok_or_else(|| Error::Assembly(format!("singular elliptic projection on cell {c}")))?;
        let sol = chol.solve(&rhs.rows(1, nc - 1).clone_owned());
        let cell = out.cell_mut(c);
        cell[0] = mean / frame.area.sqrt();
        cell[1..].copy_from_slice(sol.as_slice());
    }
    Ok(out)
}
