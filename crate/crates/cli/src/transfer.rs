//! Transfer of broken polynomials from a coarse mesh to a nested fine mesh
//! and error norms against a fine reference.

use gpehho_core::fespace::{make_quadrature, CellBasis, CellFrame, PiecewisePolynomial, Shape};
use gpehho_core::mesh::{ancestor, TriMesh};

use crate::error::{CliError, Result};

/// Coarse ancestor of every cell of `hierarchy[fine]` in `hierarchy[coarse]`.
pub fn ancestor_map(hierarchy: &[TriMesh], coarse: usize, fine: usize) -> Result<Vec<usize>> {
    if coarse > fine || fine >= hierarchy.len() {
        return Err(CliError::Config(format!("cannot map level {fine} onto level {coarse}")));
    }
    let chain = &hierarchy[..=fine];
    (0..chain[fine].num_cells()).map(|c| Ok(ancestor(chain, c, fine - coarse)?)).collect()
}

/// A broken polynomial living on one mesh of a nested hierarchy.
#[derive(Clone, Copy)]
pub struct Field<'a> {
    pub mesh: &'a TriMesh,
    pub poly: &'a PiecewisePolynomial,
}

/// Squared `L2` norms of the difference and of its broken gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DifferenceNorms {
    pub l2: f64,
    pub h1: f64,
}

/// `||u - w||` and `||grad_h (u - w)||` where `u` lives on a coarse mesh and
/// `w` on the fine mesh; `map` is the fine-to-coarse [`ancestor_map`].
/// Integration runs over fine cells with a rule exact for the squared
/// difference, so the result carries only rounding error.
pub fn difference_norms(coarse: Field, fine: Field, map: &[usize]) -> Result<DifferenceNorms> {
    if map.len() != fine.mesh.num_cells() {
        return Err(CliError::Config("ancestor map does not match the fine mesh".into()));
    }
    let degree = coarse.poly.degree.max(fine.poly.degree);
    let rule = make_quadrature(Shape::Triangle, 2 * degree)?;
    let (nc, nf) = (coarse.poly.dim(), fine.poly.dim());
    let (mut vc, mut vf) = (vec![0.0; nc], vec![0.0; nf]);
    let (mut gc, mut gf) = (vec![[0.0; 2]; nc], vec![[0.0; 2]; nf]);
    let mut out = DifferenceNorms::default();
    for (f, &c) in map.iter().enumerate() {
        let bf = CellBasis::new(fine.poly.degree, CellFrame::of_cell(fine.mesh, f));
        let bc = CellBasis::new(coarse.poly.degree, CellFrame::of_cell(coarse.mesh, c));
        let (uc, uf) = (coarse.poly.cell(c), fine.poly.cell(f));
        for q in 0..rule.len() {
            let x = bf.frame.to_physical(rule.reference_point(q));
            let w = 2.0 * bf.frame.area * rule.weights[q];
            bc.values_at(x, &mut vc);
            bf.values_at(x, &mut vf);
            bc.gradients_at(x, &mut gc);
            bf.gradients_at(x, &mut gf);
            let d = dot(uc, &vc) - dot(uf, &vf);
            let mut g = [0.0; 2];
            for (a, gi) in uc.iter().zip(&gc) {
                g[0] += a * gi[0];
                g[1] += a * gi[1];
            }
            for (a, gi) in uf.iter().zip(&gf) {
                g[0] -= a * gi[0];
                g[1] -= a * gi[1];
            }
            out.l2 += w * d * d;
            out.h1 += w * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    out.l2 = out.l2.sqrt();
    out.h1 = out.h1.sqrt();
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::hierarchy;
    use gpehho_core::mesh::Rect;

    fn smooth(x: [f64; 2]) -> f64 {
        (x[0] * 1.3).sin() * (0.7 * x[1]).cos() + x[0] * x[1]
    }

    #[test]
    fn transfer_preserves_the_l2_norm() {
        let h = hierarchy(Rect::new(-1.0, 2.0, 0.0, 1.5), 3).unwrap();
        let coarse = PiecewisePolynomial::project(&h[1], 3, smooth);
        let zero = PiecewisePolynomial::zeros(0, h[3].num_cells());
        let map = ancestor_map(&h, 1, 3).unwrap();
        let n = difference_norms(Field { mesh: &h[1], poly: &coarse }, Field { mesh: &h[3], poly: &zero }, &map).unwrap();
        let exact = coarse.l2_norm();
        assert!((n.l2 - exact).abs() <= 1e-12 * exact, "{} vs {}", n.l2, exact);
    }

    #[test]
    fn self_comparison_is_zero() {
        let h = hierarchy(Rect::centered_square(1.0), 2).unwrap();
        let p = PiecewisePolynomial::project(&h[2], 2, smooth);
        let map = ancestor_map(&h, 2, 2).unwrap();
        let f = Field { mesh: &h[2], poly: &p };
        let n = difference_norms(f, f, &map).unwrap();
        // the two sides reach the quadrature points through different maps
        assert!(n.l2 < 1e-14 && n.h1 < 1e-14, "{n:?}");
    }

    #[test]
    fn coarse_polynomial_matches_its_fine_projection() {
        let h = hierarchy(Rect::centered_square(1.0), 2).unwrap();
        let coarse = PiecewisePolynomial::project(&h[0], 2, |x| x[0] * x[0] - 3.0 * x[1] + 1.0);
        let fine = PiecewisePolynomial::project(&h[2], 2, |x| x[0] * x[0] - 3.0 * x[1] + 1.0);
        let map = ancestor_map(&h, 0, 2).unwrap();
        let n = difference_norms(Field { mesh: &h[0], poly: &coarse }, Field { mesh: &h[2], poly: &fine }, &map).unwrap();
        assert!(n.l2 < 1e-12 && n.h1 < 1e-11, "{n:?}");
    }

    #[test]
    fn ancestor_map_rejects_upward_requests() {
        let h = hierarchy(Rect::centered_square(1.0), 1).unwrap();
        assert!(ancestor_map(&h, 1, 0).is_err());
        assert_eq!(ancestor_map(&h, 0, 1).unwrap().len(), 8);
    }
}
