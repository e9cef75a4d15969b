//! Gauss-Legendre rules on segments and collapsed (Duffy) product rules on
//! triangles, exact up to a requested total degree.

use std::sync::OnceLock;

use crate::{Error, Result};

pub const MAX_QUADRATURE_DEGREE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Triangle,
    Segment,
}

/// Quadrature rule on the reference triangle `{(0,0), (1,0), (0,1)}` (weights
/// sum to 1/2) or the reference segment `[0, 1]` (weights sum to 1).
///
/// Nodes are barycentric coordinates; segment nodes use the first two
/// entries and leave the third at zero.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub shape: Shape,
    pub degree: usize,
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates `(xi, eta)` of node `q` (triangle) or the
    /// segment parameter in the first slot.
    pub fn reference_point(&self, q: usize) -> [f64; 2] {
        let b = self.nodes[q];
        match self.shape {
            Shape::Triangle => [b[1], b[2]],
            Shape::Segment => [b[1], 0.0],
        }
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton on P_n from the Chebyshev-like initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * weight;
        w[n - 1 - i] = 0.5 * weight;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

fn build(shape: Shape, degree: usize) -> QuadratureRule {
    match shape {
        Shape::Segment => {
            let (x, w) = gauss_legendre(degree / 2 + 1);
            QuadratureRule {
                shape,
                degree,
                nodes: x.iter().map(|&s| [1.0 - s, s, 0.0]).collect(),
                weights: w,
            }
        }
        Shape::Triangle => {
            // (u, v) -> (xi, eta) = (u, (1 - u) v), Jacobian 1 - u
            let (xu, wu) = gauss_legendre((degree + 2).div_ceil(2));
            let (xv, wv) = gauss_legendre((degree + 1).div_ceil(2).max(1));
            let mut nodes = Vec::with_capacity(xu.len() * xv.len());
            let mut weights = Vec::with_capacity(xu.len() * xv.len());
            for (&u, &a) in xu.iter().zip(&wu) {
                for (&v, &b) in xv.iter().zip(&wv) {
                    let xi = u;
                    let eta = (1.0 - u) * v;
                    nodes.push([1.0 - xi - eta, xi, eta]);
                    weights.push(a * b * (1.0 - u));
                }
            }
            QuadratureRule { shape, degree, nodes, weights }
        }
    }
}

/// Rule on `shape` integrating every polynomial of total degree `<= degree`
/// exactly (up to rounding).
pub fn make_quadrature(shape: Shape, degree: usize) -> Result<&'static QuadratureRule> {
    static TRIANGLE: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    static SEGMENT: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    if degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::UnsupportedDegree { degree, max: MAX_QUADRATURE_DEGREE });
    }
    let table = match shape {
        Shape::Triangle => &TRIANGLE,
        Shape::Segment => &SEGMENT,
    };
    let rules = table.get_or_init(|| (0..=MAX_QUADRATURE_DEGREE).map(|d| build(shape, d)).collect());
    Ok(&rules[degree])
}
