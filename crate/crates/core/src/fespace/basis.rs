//! L2-orthonormal modal bases.
//!
//! Cell bases are orthonormalised once on the reference triangle (centred
//! monomials followed by two Cholesky passes) and pushed forward by the
//! affine map of each cell, scaled by `1/sqrt(2|T|)`. The push-forward of an
//! orthonormal set under an affine map is again orthonormal, so every cell
//! mass matrix is the identity and the first function is `|T|^{-1/2}`.
//! Because the monomials are ordered by total degree the bases are
//! hierarchical: the first `dim(P^l)` functions of a higher-degree basis span
//! `P^l(T)`.

use std::sync::OnceLock;

use super::quadrature::{make_quadrature, QuadratureRule, Shape};
use crate::mesh::{signed_area, TriMesh};

pub const MAX_CELL_DEGREE: usize = 6;

pub fn cell_dim(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

pub fn face_dim(degree: usize) -> usize {
    degree + 1
}

const CENTER: f64 = 1.0 / 3.0;

/// Orthonormal basis of `P^l` on the reference triangle.
#[derive(Clone, Debug)]
pub struct ReferenceBasis {
    pub degree: usize,
    exponents: Vec<(usize, usize)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: Vec<f64>,
}

impl ReferenceBasis {
    /// Cached basis of degree `degree <= MAX_CELL_DEGREE`.
    pub fn get(degree: usize) -> &'static ReferenceBasis {
        static CACHE: OnceLock<Vec<ReferenceBasis>> = OnceLock::new();
        let all = CACHE.get_or_init(|| (0..=MAX_CELL_DEGREE).map(ReferenceBasis::build).collect());
        assert!(degree <= MAX_CELL_DEGREE, "cell degree {degree} exceeds {MAX_CELL_DEGREE}");
        &all[degree]
    }

    fn build(degree: usize) -> Self {
        let mut exponents = Vec::with_capacity(cell_dim(degree));
        for d in 0..=degree {
            for i in 0..=d {
                exponents.push((d - i, i));
            }
        }
        let n = exponents.len();
        let mut basis = ReferenceBasis { degree, exponents, coeffs: identity(n) };
        let rule = make_quadrature(Shape::Triangle, 2 * degree).expect("degree within range");
        // second pass removes the rounding left by the first
        for _ in 0..2 {
            let gram = basis.gram(rule);
            let l = cholesky(&gram, n);
            let linv = lower_inverse(&l, n);
            basis.coeffs = matmul(&linv, &basis.coeffs, n);
        }
        basis
    }

    fn gram(&self, rule: &QuadratureRule) -> Vec<f64> {
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        let mut v = vec![0.0; n];
        for q in 0..rule.len() {
            self.values(rule.reference_point(q), &mut v);
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] += rule.weights[q] * v[i] * v[j];
                }
            }
        }
        g
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    fn monomials(&self, xi: [f64; 2], out: &mut [f64]) {
        let (s, t) = (xi[0] - CENTER, xi[1] - CENTER);
        for (m, &(a, b)) in out.iter_mut().zip(&self.exponents) {
            *m = s.powi(a as i32) * t.powi(b as i32);
        }
    }

    pub fn values(&self, xi: [f64; 2], out: &mut [f64]) {
        let n = self.dim();
        let mut m = vec![0.0; n];
        self.monomials(xi, &mut m);
        for i in 0..n {
            out[i] = (0..=i).map(|j| self.coeffs[i * n + j] * m[j]).sum();
        }
    }

    pub fn gradients(&self, xi: [f64; 2], out: &mut [[f64; 2]]) {
        let n = self.dim();
        let (s, t) = (xi[0] - CENTER, xi[1] - CENTER);
        let dm: Vec<[f64; 2]> = self
            .exponents
            .iter()
            .map(|&(a, b)| [dpow(s, a, 1) * t.powi(b as i32), s.powi(a as i32) * dpow(t, b, 1)])
            .collect();
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..=i {
                let c = self.coeffs[i * n + j];
                g[0] += c * dm[j][0];
                g[1] += c * dm[j][1];
            }
            out[i] = g;
        }
    }

    /// Second derivatives `(d_ss, d_st, d_tt)`.
    pub fn hessians(&self, xi: [f64; 2], out: &mut [[f64; 3]]) {
        let n = self.dim();
        let (s, t) = (xi[0] - CENTER, xi[1] - CENTER);
        let hm: Vec<[f64; 3]> = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                [
                    dpow(s, a, 2) * t.powi(b as i32),
                    dpow(s, a, 1) * dpow(t, b, 1),
                    s.powi(a as i32) * dpow(t, b, 2),
                ]
            })
            .collect();
        for i in 0..n {
            let mut h = [0.0; 3];
            for j in 0..=i {
                let c = self.coeffs[i * n + j];
                for r in 0..3 {
                    h[r] += c * hm[j][r];
                }
            }
            out[i] = h;
        }
    }
}

/// `d^order/dx^order x^p`.
fn dpow(x: f64, p: usize, order: usize) -> f64 {
    if order > p {
        return 0.0;
    }
    let factor: usize = (p - order + 1..=p).product();
    factor as f64 * x.powi((p - order) as i32)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i * n + j] += aik * b[k * n + j];
                }
            }
        }
    }
    c
}

fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = a[j * n + j] - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        assert!(d > 0.0, "reference Gram matrix is not positive definite");
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let s = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            l[i * n + j] = s / djj;
        }
    }
    l
}

fn lower_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        for i in col..n {
            let rhs = if i == col { 1.0 } else { 0.0 };
            let s: f64 = (col..i).map(|k| l[i * n + k] * inv[k * n + col]).sum();
            inv[i * n + col] = (rhs - s) / l[i * n + i];
        }
    }
    inv
}

/// Affine map `x = origin + J xi` from the reference triangle onto a cell.
#[derive(Clone, Copy, Debug)]
pub struct CellFrame {
    pub origin: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub jac_inv: [[f64; 2]; 2],
    pub area: f64,
    /// `1 / sqrt(2 |T|)`, the factor turning reference-orthonormal functions
    /// into cell-orthonormal ones.
    pub scale: f64,
}

impl CellFrame {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let jac = [[p[1][0] - p[0][0], p[2][0] - p[0][0]], [p[1][1] - p[0][1], p[2][1] - p[0][1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let jac_inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        let area = signed_area(p[0], p[1], p[2]);
        CellFrame { origin: p[0], jac, jac_inv, area, scale: 1.0 / (2.0 * area).sqrt() }
    }

    pub fn of_cell(mesh: &TriMesh, c: usize) -> Self {
        Self::new(mesh.cell_vertices(c))
    }

    pub fn to_physical(&self, xi: [f64; 2]) -> [f64; 2] {
        let j = &self.jac;
        [
            self.origin[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.origin[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (x[0] - self.origin[0], x[1] - self.origin[1]);
        let k = &self.jac_inv;
        [k[0][0] * dx + k[0][1] * dy, k[1][0] * dx + k[1][1] * dy]
    }

    /// Physical gradient from a reference gradient (including the
    /// orthonormalisation scale).
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let k = &self.jac_inv;
        [self.scale * (k[0][0] * g[0] + k[1][0] * g[1]), self.scale * (k[0][1] * g[0] + k[1][1] * g[1])]
    }

    /// Physical Laplacian from reference second derivatives.
    pub fn push_laplacian(&self, h: [f64; 3]) -> f64 {
        let k = &self.jac_inv;
        let mut lap = 0.0;
        for d in 0..2 {
            let (a, b) = (k[0][d], k[1][d]);
            lap += a * a * h[0] + 2.0 * a * b * h[1] + b * b * h[2];
        }
        self.scale * lap
    }
}

/// Orthonormal basis of `P^l(T)` on one cell.
#[derive(Clone, Copy, Debug)]
pub struct CellBasis {
    pub reference: &'static ReferenceBasis,
    pub frame: CellFrame,
}

impl CellBasis {
    pub fn new(degree: usize, frame: CellFrame) -> Self {
        Self { reference: ReferenceBasis::get(degree), frame }
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn values_at(&self, x: [f64; 2], out: &mut [f64]) {
        self.reference.values(self.frame.to_reference(x), out);
        out.iter_mut().for_each(|v| *v *= self.frame.scale);
    }

    pub fn gradients_at(&self, x: [f64; 2], out: &mut [[f64; 2]]) {
        self.reference.gradients(self.frame.to_reference(x), out);
        out.iter_mut().for_each(|g| *g = self.frame.push_gradient(*g));
    }

    pub fn laplacians_at(&self, x: [f64; 2], out: &mut [f64]) {
        let n = self.dim();
        let mut h = vec![[0.0; 3]; n];
        self.reference.hessians(self.frame.to_reference(x), &mut h);
        for i in 0..n {
            out[i] = self.frame.push_laplacian(h[i]);
        }
    }

    /// Evaluates `sum_i coeffs[i] phi_i(x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: [f64; 2]) -> f64 {
        let mut v = vec![0.0; self.dim()];
        self.values_at(x, &mut v);
        coeffs.iter().zip(&v).map(|(c, v)| c * v).sum()
    }
}

/// Reference-basis values, gradients and second derivatives at the nodes of
/// a triangle rule; shared by every cell.
#[derive(Clone, Debug)]
pub struct CellTabulation {
    pub rule: &'static QuadratureRule,
    pub dim: usize,
    /// `values[q * dim + i]`, without the per-cell scale.
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
    pub hessians: Vec<[f64; 3]>,
}

impl CellTabulation {
    pub fn new(degree: usize, rule: &'static QuadratureRule) -> Self {
        let basis = ReferenceBasis::get(degree);
        let dim = basis.dim();
        let nq = rule.len();
        let mut values = vec![0.0; nq * dim];
        let mut gradients = vec![[0.0; 2]; nq * dim];
        let mut hessians = vec![[0.0; 3]; nq * dim];
        for q in 0..nq {
            let xi = rule.reference_point(q);
            basis.values(xi, &mut values[q * dim..(q + 1) * dim]);
            basis.gradients(xi, &mut gradients[q * dim..(q + 1) * dim]);
            basis.hessians(xi, &mut hessians[q * dim..(q + 1) * dim]);
        }
        CellTabulation { rule, dim, values, gradients, hessians }
    }

    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    /// Reference values at node `q`.
    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.dim..(q + 1) * self.dim]
    }

    /// Physical quadrature weight of node `q` on a cell with `frame`.
    pub fn weight(&self, q: usize, frame: &CellFrame) -> f64 {
        2.0 * frame.area * self.rule.weights[q]
    }

    /// Value of `sum_i coeffs[i] phi_i` at node `q` of the cell with `frame`.
    pub fn evaluate(&self, coeffs: &[f64], q: usize, frame: &CellFrame) -> f64 {
        let v = self.values_at(q);
        frame.scale * coeffs.iter().zip(v).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Orthonormal Legendre basis of `P^k(F)` in the arc-length parameter of the
/// face, oriented from the face's first to its second vertex.
#[derive(Clone, Copy, Debug)]
pub struct FaceBasis {
    pub degree: usize,
}

impl FaceBasis {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    pub fn dim(&self) -> usize {
        face_dim(self.degree)
    }

    /// Values at the normalised parameter `s in [0, 1]` on a face of length
    /// `len`.
    pub fn values(&self, s: f64, len: f64, out: &mut [f64]) {
        let z = 2.0 * s - 1.0;
        let scale = 1.0 / len.sqrt();
        let (mut p0, mut p1) = (1.0, z);
        for j in 0..=self.degree {
            let p = match j {
                0 => 1.0,
                1 => z,
                _ => {
                    let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            out[j] = scale * ((2 * j + 1) as f64).sqrt() * p;
        }
    }

    pub fn evaluate(&self, coeffs: &[f64], s: f64, len: f64) -> f64 {
        let mut v = vec![0.0; self.dim()];
        self.values(s, len, &mut v);
        coeffs.iter().zip(&v).map(|(c, v)| c * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_triangle(seed: u64) -> [[f64; 2]; 3] {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let p: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let a = signed_area(p[0], p[1], p[2]);
            if a > 0.3 {
                return p;
            }
        }
    }

    #[test]
    fn cell_mass_is_identity() {
        for degree in 0..=5 {
            for seed in 0..5 {
                let frame = CellFrame::new(random_triangle(seed));
                let basis = CellBasis::new(degree, frame);
                let rule = make_quadrature(Shape::Triangle, 2 * degree).unwrap();
                let n = basis.dim();
                let mut m = vec![0.0; n * n];
                let mut v = vec![0.0; n];
                for q in 0..rule.len() {
                    let x = frame.to_physical(rule.reference_point(q));
                    basis.values_at(x, &mut v);
                    let w = 2.0 * frame.area * rule.weights[q];
                    for i in 0..n {
                        for j in 0..n {
                            m[i * n + j] += w * v[i] * v[j];
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((m[i * n + j] - e).abs() < 1e-12, "degree {degree} ({i},{j}) = {}", m[i * n + j]);
                    }
                }
                let mut v0 = vec![0.0; n];
                basis.values_at(frame.to_physical([0.2, 0.3]), &mut v0);
                assert!((v0[0] - 1.0 / frame.area.sqrt()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hierarchical_bases_agree() {
        let frame = CellFrame::new(random_triangle(7));
        let lo = CellBasis::new(2, frame);
        let hi = CellBasis::new(4, frame);
        let x = frame.to_physical([0.1, 0.6]);
        let mut a = vec![0.0; lo.dim()];
        let mut b = vec![0.0; hi.dim()];
        lo.values_at(x, &mut a);
        hi.values_at(x, &mut b);
        for i in 0..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let frame = CellFrame::new(random_triangle(3));
        let basis = CellBasis::new(3, frame);
        let n = basis.dim();
        let x = frame.to_physical([0.25, 0.35]);
        let eps = 1e-5;
        let mut g = vec![[0.0; 2]; n];
        let mut lap = vec![0.0; n];
        basis.gradients_at(x, &mut g);
        basis.laplacians_at(x, &mut lap);
        let eval = |p: [f64; 2]| {
            let mut v = vec![0.0; n];
            basis.values_at(p, &mut v);
            v
        };
        let c = eval(x);
        let (xp, xm) = (eval([x[0] + eps, x[1]]), eval([x[0] - eps, x[1]]));
        let (yp, ym) = (eval([x[0], x[1] + eps]), eval([x[0], x[1] - eps]));
        for i in 0..n {
            let gx = (xp[i] - xm[i]) / (2.0 * eps);
            let gy = (yp[i] - ym[i]) / (2.0 * eps);
            let l = (xp[i] + xm[i] + yp[i] + ym[i] - 4.0 * c[i]) / (eps * eps);
            let scale = 1.0 + g[i][0].abs() + g[i][1].abs();
            assert!((gx - g[i][0]).abs() < 1e-6 * scale);
            assert!((gy - g[i][1]).abs() < 1e-6 * scale);
            assert!((l - lap[i]).abs() < 1e-3 * (1.0 + lap[i].abs()));
        }
    }

    #[test]
    fn face_mass_is_identity() {
        let len = 1.7;
        for k in 0..=4 {
            let fb = FaceBasis::new(k);
            let rule = make_quadrature(Shape::Segment, 2 * k).unwrap();
            let n = fb.dim();
            let mut m = vec![0.0; n * n];
            let mut v = vec![0.0; n];
            for q in 0..rule.len() {
                fb.values(rule.reference_point(q)[0], len, &mut v);
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] += len * rule.weights[q] * v[i] * v[j];
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((m[i * n + j] - e).abs() < 1e-12);
                }
            }
        }
    }
}
