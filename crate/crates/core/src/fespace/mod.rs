//! Polynomial spaces on cells and faces, quadrature and L2 projections.

pub mod basis;
pub mod quadrature;

pub use basis::{cell_dim, face_dim, CellBasis, CellFrame, CellTabulation, FaceBasis, ReferenceBasis};
pub use quadrature::{gauss_legendre, make_quadrature, QuadratureRule, Shape, MAX_QUADRATURE_DEGREE};

use crate::mesh::TriMesh;
use crate::Result;

/// Quadrature degree used when projecting a general field onto degree `l`.
pub fn projection_degree(l: usize) -> usize {
    (2 * l + 6).min(MAX_QUADRATURE_DEGREE)
}

/// Coefficients of `Pi_T^l f` in the orthonormal cell basis, using a rule of
/// degree `quad_degree`.
pub fn project_cell_with<F: Fn([f64; 2]) -> f64>(
    f: F,
    l: usize,
    frame: &CellFrame,
    quad_degree: usize,
) -> Result<Vec<f64>> {
    let rule = make_quadrature(Shape::Triangle, quad_degree)?;
    let basis = CellBasis::new(l, *frame);
    let n = basis.dim();
    let mut out = vec![0.0; n];
    let mut v = vec![0.0; n];
    for q in 0..rule.len() {
        let x = frame.to_physical(rule.reference_point(q));
        let w = 2.0 * frame.area * rule.weights[q] * f(x);
        basis.values_at(x, &mut v);
        for i in 0..n {
            out[i] += w * v[i];
        }
    }
    Ok(out)
}

/// `Pi_T^l f` with the default projection rule.
pub fn project_cell<F: Fn([f64; 2]) -> f64>(f: F, l: usize, frame: &CellFrame) -> Vec<f64> {
    project_cell_with(f, l, frame, projection_degree(l)).expect("projection degree is capped")
}

/// Coefficients of `Pi_F^k f` on the segment `a -> b` in the orthonormal face
/// basis.
pub fn project_face_with<F: Fn([f64; 2]) -> f64>(
    f: F,
    k: usize,
    a: [f64; 2],
    b: [f64; 2],
    quad_degree: usize,
) -> Result<Vec<f64>> {
    let rule = make_quadrature(Shape::Segment, quad_degree)?;
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let basis = FaceBasis::new(k);
    let mut out = vec![0.0; basis.dim()];
    let mut v = vec![0.0; basis.dim()];
    for q in 0..rule.len() {
        let s = rule.reference_point(q)[0];
        let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        basis.values(s, len, &mut v);
        let w = len * rule.weights[q] * f(x);
        for (o, vi) in out.iter_mut().zip(&v) {
            *o += w * vi;
        }
    }
    Ok(out)
}

pub fn project_face<F: Fn([f64; 2]) -> f64>(f: F, k: usize, a: [f64; 2], b: [f64; 2]) -> Vec<f64> {
    project_face_with(f, k, a, b, projection_degree(k)).expect("projection degree is capped")
}

/// Cell mean `Pi^0 v` of a polynomial given in the orthonormal cell basis.
pub fn cell_mean(coeffs: &[f64], area: f64) -> f64 {
    coeffs[0] / area.sqrt()
}

/// Broken polynomial field of degree `degree` on a mesh, stored cell by cell
/// in the orthonormal cell bases.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePolynomial {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn zeros(degree: usize, num_cells: usize) -> Self {
        Self { degree, coeffs: vec![0.0; num_cells * cell_dim(degree)] }
    }

    pub fn dim(&self) -> usize {
        cell_dim(self.degree)
    }

    pub fn num_cells(&self) -> usize {
        self.coeffs.len() / self.dim()
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let n = self.dim();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.dim();
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    /// Cellwise L2 projection of `f`.
    pub fn project<F: Fn([f64; 2]) -> f64>(mesh: &TriMesh, degree: usize, f: F) -> Self {
        let mut p = Self::zeros(degree, mesh.num_cells());
        for c in 0..mesh.num_cells() {
            let frame = CellFrame::of_cell(mesh, c);
            p.cell_mut(c).copy_from_slice(&project_cell(&f, degree, &frame));
        }
        p
    }

    /// Value on cell `c` at the physical point `x`.
    pub fn evaluate(&self, mesh: &TriMesh, c: usize, x: [f64; 2]) -> f64 {
        CellBasis::new(self.degree, CellFrame::of_cell(mesh, c)).evaluate(self.cell(c), x)
    }

    /// L2 norm; exact because the bases are orthonormal.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// `||f||_{L2(T)}^2` by quadrature of degree `quad_degree`.
pub fn cell_l2_norm_squared<F: Fn([f64; 2]) -> f64>(f: F, frame: &CellFrame, quad_degree: usize) -> Result<f64> {
    let rule = make_quadrature(Shape::Triangle, quad_degree)?;
    Ok((0..rule.len())
        .map(|q| {
            let v = f(frame.to_physical(rule.reference_point(q)));
            2.0 * frame.area * rule.weights[q] * v * v
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{refined_mesh, Rect};

    fn unit_right_triangle() -> CellFrame {
        CellFrame::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    }

    fn skew_triangle() -> CellFrame {
        CellFrame::new([[0.3, -0.2], [1.4, 0.1], [0.5, 0.9]])
    }

    #[test]
    fn mean_of_x_on_unit_triangle() {
        let frame = unit_right_triangle();
        let c = project_cell(|x| x[0], 0, &frame);
        assert!((cell_mean(&c, frame.area) - 1.0 / 3.0).abs() < 1e-14);
        let c1 = project_cell(|x| x[0], 1, &frame);
        assert!((cell_mean(&c1, frame.area) - 1.0 / 3.0).abs() < 1e-14);
        assert!(c1[1..].iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn cell_mean_of_constant_and_zero_mean_modes() {
        let frame = skew_triangle();
        let c = project_cell(|_| 2.5, 2, &frame);
        assert!((cell_mean(&c, frame.area) - 2.5).abs() < 1e-13);
        let mut mode = vec![0.0; cell_dim(2)];
        mode[4] = 1.0;
        assert_eq!(cell_mean(&mode, frame.area), 0.0);
    }

    #[test]
    fn projection_reproduces_polynomials() {
        let frame = skew_triangle();
        for l in 0..=4 {
            let p = |x: [f64; 2]| {
                let mut v = 0.3;
                for d in 1..=l {
                    v += (d as f64) * 0.1 * x[0].powi(d as i32) - 0.2 * x[0].powi(d as i32 - 1) * x[1];
                }
                v
            };
            let coeffs = project_cell(p, l, &frame);
            let basis = CellBasis::new(l, frame);
            for xi in [[0.1, 0.1], [0.5, 0.2], [0.2, 0.7]] {
                let x = frame.to_physical(xi);
                assert!((basis.evaluate(&coeffs, x) - p(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_error_decreases_with_degree() {
        let frame = skew_triangle();
        let f = |x: [f64; 2]| (3.0 * x[0]).sin();
        let mut prev = f64::INFINITY;
        for l in 0..=5 {
            let coeffs = project_cell(f, l, &frame);
            let basis = CellBasis::new(l, frame);
            let err = cell_l2_norm_squared(|x| f(x) - basis.evaluate(&coeffs, x), &frame, 20).unwrap().sqrt();
            assert!(err < prev, "l = {l}: {err} !< {prev}");
            prev = err;
        }
    }

    #[test]
    fn face_projection() {
        let (a, b) = ([0.0, 0.0], [1.0, 0.0]);
        let c = project_face(|x| x[0], 0, a, b);
        assert!((c[0] - 0.5).abs() < 1e-15);
        let f = |x: [f64; 2]| 1.0 - 2.0 * x[0] + 3.0 * x[0] * x[0];
        let c = project_face(f, 2, a, b);
        let fb = FaceBasis::new(2);
        for s in [0.1, 0.5, 0.8] {
            assert!((fb.evaluate(&c, s, 1.0) - f([s, 0.0])).abs() < 1e-13);
        }
    }

    #[test]
    fn face_projection_pythagoras() {
        let (a, b) = ([0.2, -0.4], [1.1, 0.6]);
        let len = (0.9f64).hypot(1.0);
        let f = |x: [f64; 2]| (2.0 * x[0] - x[1]).exp() * (x[1] * 3.0).cos();
        let rule = make_quadrature(Shape::Segment, 20).unwrap();
        for k in 0..=3 {
            let c = project_face_with(f, k, a, b, 20).unwrap();
            let fb = FaceBasis::new(k);
            let (mut full, mut resid) = (0.0, 0.0);
            for q in 0..rule.len() {
                let s = rule.reference_point(q)[0];
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let w = len * rule.weights[q];
                full += w * f(x) * f(x);
                let r = f(x) - fb.evaluate(&c, s, len);
                resid += w * r * r;
            }
            let proj: f64 = c.iter().map(|v| v * v).sum();
            assert!((full - proj - resid).abs() < 1e-12 * full);
        }
    }

    #[test]
    fn piecewise_projection_on_mesh() {
        let mesh = refined_mesh(Rect::new(0.0, 1.0, 0.0, 1.0), 2).unwrap();
        let p = PiecewisePolynomial::project(&mesh, 1, |x| 2.0 * x[0] - x[1] + 0.5);
        for c in 0..mesh.num_cells() {
            let x = crate::mesh::compute_geometry(&mesh).cell_barycenter[c];
            assert!((p.evaluate(&mesh, c, x) - (2.0 * x[0] - x[1] + 0.5)).abs() < 1e-13);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn field(a: f64, b: f64, c: f64) -> impl Fn([f64; 2]) -> f64 {
            move |x: [f64; 2]| (a * x[0] + b * x[1]).sin() + c * x[0] * x[1] * x[1]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn projection_is_idempotent_and_contractive(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -2.0..2.0f64, l in 0usize..4) {
                let frame = skew_triangle();
                let f = field(a, b, c);
                let once = project_cell(&f, l, &frame);
                let basis = CellBasis::new(l, frame);
                let twice = project_cell(|x| basis.evaluate(&once, x), l, &frame);
                for (u, v) in once.iter().zip(&twice) {
                    prop_assert!((u - v).abs() < 1e-13);
                }
                let norm_f = cell_l2_norm_squared(&f, &frame, 20).unwrap().sqrt();
                let norm_p = once.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(norm_p <= norm_f + 1e-12);
            }

            #[test]
            fn low_order_projection_commutes(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -2.0..2.0f64, k in 0usize..4) {
                let frame = skew_triangle();
                let f = field(a, b, c);
                let high = project_cell_with(&f, k + 1, &frame, 20).unwrap();
                let direct = project_cell_with(&f, 0, &frame, 20).unwrap();
                prop_assert!((high[0] - direct[0]).abs() < 1e-13);
            }
        }
    }
}
