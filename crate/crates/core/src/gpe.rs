//! Gross-Pitaevskii forms on the HHO space: potentials, the standard and
//! cell-mean modified energies, residuals of the discrete eigenvalue
//! problems and the lower-bound certificate.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fespace::{gauss_legendre, make_quadrature, CellTabulation, Shape, MAX_QUADRATURE_DEGREE};
use crate::hho::{assemble_operator, HhoSpace, HybridVector};
use crate::mesh::{square_side_h, Rect, TriMesh};
use crate::solver::sparse::CscMatrix;
use crate::{Error, Result};

/// Extra quadrature degree used for the non-polynomial lattice term.
pub const DEFAULT_OVERSAMPLING: usize = 4;
/// Samples per direction when minimising a potential over a grid cell.
pub const DEFAULT_MIN_SAMPLES: usize = 32;
/// Tolerance on the bulk norm accepted as "normalised".
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Piecewise constant potential on a uniform Cartesian grid. `values` is
/// row-major with `values[iy * nx + ix]` on
/// `[x0 + ix h, x0 + (ix + 1) h] x [y0 + iy h, y0 + (iy + 1) h]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub grid_origin: [f64; 2],
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl PotentialTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidGrid(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidGrid("grid has no cells".into()));
        }
        if self.values.len() != self.nx * self.ny {
            return Err(Error::InvalidGrid(format!(
                "expected {} values for a {}x{} grid, got {}",
                self.nx * self.ny,
                self.nx,
                self.ny,
                self.values.len()
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidGrid(format!("potential values must be finite and non-negative, found {v}")));
        }
        Ok(())
    }

    pub fn extent(&self) -> Rect {
        let [x0, y0] = self.grid_origin;
        Rect::new(x0, x0 + self.nx as f64 * self.cell_size, y0, y0 + self.ny as f64 * self.cell_size)
    }

    /// Whether the grid cells exactly tile `domain`.
    pub fn tiles(&self, domain: &Rect) -> bool {
        let e = self.extent();
        let tol = 1e-12 * domain.width().max(domain.height());
        (e.x0 - domain.x0).abs() <= tol
            && (e.x1 - domain.x1).abs() <= tol
            && (e.y0 - domain.y0).abs() <= tol
            && (e.y1 - domain.y1).abs() <= tol
    }

    fn index_of(&self, t: f64, origin: f64, n: usize) -> usize {
        let i = ((t - origin) / self.cell_size).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }

    /// Value at `x`; points outside the grid take the nearest cell.
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let ix = self.index_of(x[0], self.grid_origin[0], self.nx);
        let iy = self.index_of(x[1], self.grid_origin[1], self.ny);
        self.values[iy * self.nx + ix]
    }

    /// Smallest value over the grid cells that meet the interior of the
    /// triangle `p`.
    pub fn min_over_triangle(&self, p: [[f64; 2]; 3]) -> f64 {
        let lo = [p[0][0].min(p[1][0]).min(p[2][0]), p[0][1].min(p[1][1]).min(p[2][1])];
        let hi = [p[0][0].max(p[1][0]).max(p[2][0]), p[0][1].max(p[1][1]).max(p[2][1])];
        let (ix0, ix1) = (self.index_of(lo[0], self.grid_origin[0], self.nx), self.index_of(hi[0], self.grid_origin[0], self.nx));
        let (iy0, iy1) = (self.index_of(lo[1], self.grid_origin[1], self.ny), self.index_of(hi[1], self.grid_origin[1], self.ny));
        let mut best = f64::INFINITY;
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let bx = [
                    self.grid_origin[0] + ix as f64 * self.cell_size,
                    self.grid_origin[0] + (ix + 1) as f64 * self.cell_size,
                ];
                let by = [
                    self.grid_origin[1] + iy as f64 * self.cell_size,
                    self.grid_origin[1] + (iy + 1) as f64 * self.cell_size,
                ];
                if triangle_meets_box(p, bx, by) {
                    best = best.min(self.values[iy * self.nx + ix]);
                }
            }
        }
        if best.is_finite() {
            best
        } else {
            // triangle outside the grid: fall back to the nearest cell
            let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            self.value(c)
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let t: PotentialTable = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Separating-axis test for a positive-area overlap of a triangle and a box.
fn triangle_meets_box(p: [[f64; 2]; 3], bx: [f64; 2], by: [f64; 2]) -> bool {
    let scale = (bx[1] - bx[0]).max(by[1] - by[0]);
    let eps = 1e-12 * scale;
    let corners = [[bx[0], by[0]], [bx[1], by[0]], [bx[1], by[1]], [bx[0], by[1]]];
    let mut axes = vec![[1.0, 0.0], [0.0, 1.0]];
    for i in 0..3 {
        let (a, b) = (p[i], p[(i + 1) % 3]);
        axes.push([b[1] - a[1], a[0] - b[0]]);
    }
    axes.iter().all(|n| {
        let proj = |q: &[f64; 2]| n[0] * q[0] + n[1] * q[1];
        let len = n[0].hypot(n[1]);
        let (tl, th) = p.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (bl, bh) = corners.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        tl.max(bl) < th.min(bh) - eps * len
    })
}

/// Trapping potential `V >= 0`.
#[derive(Clone)]
pub enum Potential {
    Zero,
    /// `|x|^2 / 2`.
    Harmonic,
    /// `|x|^2 / 2 + 15 (1 + sin(pi x1 / 2) sin(pi x2 / 2))`.
    Lattice { oversampling: usize },
    /// Random `{10, 50}` values on a Cartesian grid.
    Disorder { table: PotentialTable, seed: u64 },
    Table(PotentialTable),
    /// User supplied field; `degree` is the extra quadrature degree used for
    /// `(V v, w)`.
    Custom { name: String, f: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>, degree: usize },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Harmonic => write!(f, "Harmonic"),
            Potential::Lattice { oversampling } => write!(f, "Lattice {{ oversampling: {oversampling} }}"),
            Potential::Disorder { table, seed } => {
                write!(f, "Disorder {{ seed: {seed}, grid: {}x{} }}", table.nx, table.ny)
            }
            Potential::Table(t) => write!(f, "Table {{ grid: {}x{}, cell_size: {} }}", t.nx, t.ny, t.cell_size),
            Potential::Custom { name, degree, .. } => write!(f, "Custom {{ name: {name:?}, degree: {degree} }}"),
        }
    }
}

fn lattice(x: [f64; 2]) -> f64 {
    0.5 * (x[0] * x[0] + x[1] * x[1]) + 15.0 * (1.0 + (PI * x[0] / 2.0).sin() * (PI * x[1] / 2.0).sin())
}

impl Potential {
    pub fn lattice() -> Self {
        Potential::Lattice { oversampling: DEFAULT_OVERSAMPLING }
    }

    /// Coin-toss potential on the grid of `domain` with the given cell size.
    /// Cells are visited in lexicographic `(ix, iy)` order and take 10 when
    /// the top bit of the next 64-bit draw is 0, else 50.
    pub fn disorder(domain: Rect, cell_size: f64, seed: u64) -> Result<Self> {
        let (nx, ny) = grid_shape(&domain, cell_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; nx * ny];
        for ix in 0..nx {
            for iy in 0..ny {
                values[iy * nx + ix] = if rng.next_u64() >> 63 == 0 { 10.0 } else { 50.0 };
            }
        }
        let table = PotentialTable { grid_origin: [domain.x0, domain.y0], cell_size, nx, ny, values };
        Ok(Potential::Disorder { table, seed })
    }

    pub fn custom<F: Fn([f64; 2]) -> f64 + Send + Sync + 'static>(name: &str, f: F, degree: usize) -> Self {
        Potential::Custom { name: name.to_string(), f: Arc::new(f), degree }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Potential::Zero => "zero",
            Potential::Harmonic => "harmonic",
            Potential::Lattice { .. } => "lattice",
            Potential::Disorder { .. } => "disorder",
            Potential::Table(_) => "table",
            Potential::Custom { .. } => "custom",
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic => 0.5 * (x[0] * x[0] + x[1] * x[1]),
            Potential::Lattice { .. } => lattice(x),
            Potential::Disorder { table, .. } | Potential::Table(table) => table.value(x),
            Potential::Custom { f, .. } => f(x),
        }
    }

    pub fn table(&self) -> Option<&PotentialTable> {
        match self {
            Potential::Disorder { table, .. } | Potential::Table(table) => Some(table),
            _ => None,
        }
    }

    /// Polynomial degree added to `2(k+1)` when integrating `(V v, w)`.
    pub fn quadrature_extra(&self) -> usize {
        match self {
            Potential::Zero | Potential::Disorder { .. } | Potential::Table(_) => 0,
            Potential::Harmonic => 2,
            Potential::Lattice { oversampling } => 2 + oversampling,
            Potential::Custom { degree, .. } => *degree,
        }
    }

    /// Minimum over the box; analytic for the harmonic potential, exact for
    /// grid potentials and sampled on `samples x samples` points otherwise.
    pub fn box_minimum(&self, b: Rect, samples: usize) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic => {
                let px = 0.0f64.clamp(b.x0, b.x1);
                let py = 0.0f64.clamp(b.y0, b.y1);
                0.5 * (px * px + py * py)
            }
            Potential::Disorder { table, .. } | Potential::Table(table) => {
                let t1 = [[b.x0, b.y0], [b.x1, b.y0], [b.x1, b.y1]];
                let t2 = [[b.x0, b.y0], [b.x1, b.y1], [b.x0, b.y1]];
                table.min_over_triangle(t1).min(table.min_over_triangle(t2))
            }
            _ => {
                let n = samples.max(2);
                let mut best = f64::INFINITY;
                for i in 0..n {
                    for j in 0..n {
                        let x = b.x0 + (b.x1 - b.x0) * i as f64 / (n - 1) as f64;
                        let y = b.y0 + (b.y1 - b.y0) * j as f64 / (n - 1) as f64;
                        best = best.min(self.value([x, y]));
                    }
                }
                best
            }
        }
    }

    /// Mean over the box; tensor Gauss rule for smooth kinds, midpoint
    /// sub-sampling for grid potentials.
    pub fn box_mean(&self, b: Rect, samples: usize) -> f64 {
        match self {
            Potential::Disorder { .. } | Potential::Table(_) => {
                let n = samples.max(1);
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let x = b.x0 + (b.x1 - b.x0) * (i as f64 + 0.5) / n as f64;
                        let y = b.y0 + (b.y1 - b.y0) * (j as f64 + 0.5) / n as f64;
                        s += self.value([x, y]);
                    }
                }
                s / (n * n) as f64
            }
            _ => {
                let (nodes, weights) = gauss_legendre(10);
                let mut s = 0.0;
                for (xi, wi) in nodes.iter().zip(&weights) {
                    for (yj, wj) in nodes.iter().zip(&weights) {
                        s += wi * wj * self.value([b.x0 + xi * (b.x1 - b.x0), b.y0 + yj * (b.y1 - b.y0)]);
                    }
                }
                s
            }
        }
    }
}

fn grid_shape(domain: &Rect, cell_size: f64) -> Result<(usize, usize)> {
    domain.validate()?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidGrid(format!("cell size must be positive, got {cell_size}")));
    }
    let fx = domain.width() / cell_size;
    let fy = domain.height() / cell_size;
    let (nx, ny) = (fx.round(), fy.round());
    if nx < 1.0 || ny < 1.0 || (fx - nx).abs() > 1e-9 * fx || (fy - ny).abs() > 1e-9 * fy {
        return Err(Error::InvalidGrid(format!(
            "cell size {cell_size} does not tile the {}x{} domain",
            domain.width(),
            domain.height()
        )));
    }
    Ok((nx as usize, ny as usize))
}

/// How a potential is reduced to one value per grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    Mean,
    Min,
}

/// Piecewise constant approximation of `v` on the grid of `domain` with the
/// given cell size.
pub fn project_potential_p0(
    v: &Potential,
    domain: Rect,
    cell_size: f64,
    mode: ProjectionMode,
    samples: usize,
) -> Result<Potential> {
    let (nx, ny) = grid_shape(&domain, cell_size)?;
    let mut values = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x0 = domain.x0 + ix as f64 * cell_size;
            let y0 = domain.y0 + iy as f64 * cell_size;
            let b = Rect::new(x0, x0 + cell_size, y0, y0 + cell_size);
            values[iy * nx + ix] = match mode {
                ProjectionMode::Mean => v.box_mean(b, samples),
                ProjectionMode::Min => v.box_minimum(b, samples),
            };
        }
    }
    let table = PotentialTable { grid_origin: [domain.x0, domain.y0], cell_size, nx, ny, values };
    table.validate()?;
    Ok(Potential::Table(table))
}

/// Which discrete energy is minimised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    /// Lowest order, quartic term evaluated with cell means.
    Modified,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::Modified => "modified",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "modified" => Ok(Mode::Modified),
            other => Err(Error::InvalidMode(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GPProblem {
    pub domain: Rect,
    pub kappa: f64,
    pub potential: Potential,
    pub mode: Mode,
    pub k: usize,
    pub sigma: f64,
}

impl GPProblem {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.mode == Mode::Modified && self.k != 0 {
            return Err(Error::InvalidMode(format!("the modified scheme requires k = 0, got k = {}", self.k)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if let Some(t) = self.potential.table() {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum PotentialBlocks {
    None,
    /// One value per cell; the block is `V_T I`.
    Constant(Vec<f64>),
    /// Dense `nc x nc` block per cell, column-major.
    Full(Vec<f64>),
}

/// Split of the discrete energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParts {
    /// `a_h(v, v) / 2`.
    pub kinetic: f64,
    /// `(V v_T, v_T) / 2`.
    pub potential: f64,
    /// `kappa Q(v) / 4` with the mode's quartic `Q`.
    pub interaction: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential + self.interaction
    }
}

/// A Gross-Pitaevskii problem discretised on one mesh.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub problem: GPProblem,
    pub space: HhoSpace,
    /// Matrix of `a_h(v, w) + (V v_T, w_T)`.
    pub base: CscMatrix,
    potential: PotentialBlocks,
    quartic_tab: CellTabulation,
}

impl DiscreteProblem {
    pub fn new(problem: GPProblem, mesh: TriMesh) -> Result<Self> {
        problem.validate()?;
        let space = HhoSpace::new(mesh, problem.k)?;
        Self::from_space(problem, space)
    }

    pub fn from_space(problem: GPProblem, space: HhoSpace) -> Result<Self> {
        problem.validate()?;
        if space.k != problem.k {
            return Err(Error::InvalidParameter(format!("space degree {} differs from problem degree {}", space.k, problem.k)));
        }
        let k = problem.k;
        let nc = space.cell_dim();
        let potential = match &problem.potential {
            Potential::Zero => PotentialBlocks::None,
            Potential::Disorder { table, .. } | Potential::Table(table) => PotentialBlocks::Constant(
                (0..space.num_cells()).map(|c| table.min_over_triangle(space.mesh.cell_vertices(c))).collect(),
            ),
            v => {
                let degree = (2 * (k + 1) + v.quadrature_extra()).min(MAX_QUADRATURE_DEGREE);
                let tab = CellTabulation::new(k + 1, make_quadrature(Shape::Triangle, degree)?);
                let mut blocks = vec![0.0; space.num_cells() * nc * nc];
                for (c, block) in blocks.chunks_mut(nc * nc).enumerate() {
                    let frame = &space.frames[c];
                    for q in 0..tab.len() {
                        let x = frame.to_physical(tab.rule.reference_point(q));
                        let w = tab.weight(q, frame) * v.value(x) * frame.scale * frame.scale;
                        let phi = tab.values_at(q);
                        for j in 0..nc {
                            for i in 0..nc {
                                block[j * nc + i] += w * phi[i] * phi[j];
                            }
                        }
                    }
                }
                PotentialBlocks::Full(blocks)
            }
        };
        let mut base = assemble_operator(&space, problem.sigma)?;
        for c in 0..space.num_cells() {
            for j in 0..nc {
                let col = space.cell_offset(c) + j;
                let start = base.col_ptr[col];
                debug_assert_eq!(base.row_idx[start], space.cell_offset(c));
                match &potential {
                    PotentialBlocks::None => {}
                    PotentialBlocks::Constant(v) => base.values[start + j] += v[c],
                    PotentialBlocks::Full(b) => {
                        for i in 0..nc {
                            base.values[start + i] += b[c * nc * nc + j * nc + i];
                        }
                    }
                }
            }
        }
        let quartic_tab = CellTabulation::new(k + 1, make_quadrature(Shape::Triangle, 4 * (k + 1))?);
        Ok(DiscreteProblem { problem, space, base, potential, quartic_tab })
    }

    pub fn num_dofs(&self) -> usize {
        self.space.num_dofs
    }

    pub fn mode(&self) -> Mode {
        self.problem.mode
    }

    /// Largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        self.space.geometry.max_diameter()
    }

    /// Mesh size entering the certificate: the square side of a
    /// Friedrichs-Keller mesh, or the largest diameter for other meshes.
    pub fn certificate_h(&self) -> f64 {
        square_side_h(&self.space.mesh).unwrap_or_else(|_| self.mesh_size())
    }

    /// Per-cell potential values when the potential is piecewise constant.
    pub fn cell_potential(&self) -> Option<&[f64]> {
        match &self.potential {
            PotentialBlocks::Constant(v) => Some(v),
            _ => None,
        }
    }

    fn cell_coeffs<'a>(&self, v: &'a HybridVector, c: usize) -> &'a [f64] {
        let nc = self.space.cell_dim();
        &v.values[c * nc..(c + 1) * nc]
    }

    fn nodal_values(&self, coeffs: &[f64], c: usize, out: &mut [f64]) {
        let frame = &self.space.frames[c];
        for (q, o) in out.iter_mut().enumerate() {
            *o = self.quartic_tab.evaluate(coeffs, q, frame);
        }
    }

    /// `(V v_T, w_T)`.
    pub fn potential_inner(&self, v: &HybridVector, w: &HybridVector) -> f64 {
        let nc = self.space.cell_dim();
        match &self.potential {
            PotentialBlocks::None => 0.0,
            PotentialBlocks::Constant(vals) => (0..self.space.num_cells())
                .map(|c| {
                    let (a, b) = (self.cell_coeffs(v, c), self.cell_coeffs(w, c));
                    vals[c] * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
                })
                .sum(),
            PotentialBlocks::Full(blocks) => (0..self.space.num_cells())
                .map(|c| {
                    let (a, b) = (self.cell_coeffs(v, c), self.cell_coeffs(w, c));
                    let blk = &blocks[c * nc * nc..(c + 1) * nc * nc];
                    let mut s = 0.0;
                    for j in 0..nc {
                        for i in 0..nc {
                            s += a[i] * blk[j * nc + i] * b[j];
                        }
                    }
                    s
                })
                .sum(),
        }
    }

    /// `a_h(v, v)`.
    pub fn stiffness_energy(&self, v: &HybridVector) -> f64 {
        self.base.inner(&v.values, &v.values) - self.potential_inner(v, v)
    }

    /// `int_T v^4` on every cell.
    pub fn cell_quartic_standard(&self, v: &HybridVector) -> Vec<f64> {
        let mut vals = vec![0.0; self.quartic_tab.len()];
        (0..self.space.num_cells())
            .map(|c| {
                self.nodal_values(self.cell_coeffs(v, c), c, &mut vals);
                let frame = &self.space.frames[c];
                vals.iter().enumerate().map(|(q, u)| self.quartic_tab.weight(q, frame) * u.powi(4)).sum()
            })
            .collect()
    }

    /// `(Pi^0 v)^2 int_T v^2` on every cell.
    pub fn cell_quartic_modified(&self, v: &HybridVector) -> Vec<f64> {
        (0..self.space.num_cells())
            .map(|c| {
                let a = self.cell_coeffs(v, c);
                let mean = a[0] / self.space.frames[c].area.sqrt();
                mean * mean * a.iter().map(|x| x * x).sum::<f64>()
            })
            .collect()
    }

    /// Quartic term `Q(v)` of the active mode.
    pub fn quartic(&self, v: &HybridVector) -> f64 {
        match self.mode() {
            Mode::Standard => self.cell_quartic_standard(v).iter().sum(),
            Mode::Modified => self.cell_quartic_modified(v).iter().sum(),
        }
    }

    pub fn energy_parts(&self, v: &HybridVector) -> EnergyParts {
        let potential = 0.5 * self.potential_inner(v, v);
        let kinetic = 0.5 * self.base.inner(&v.values, &v.values) - potential;
        let interaction = if self.problem.kappa == 0.0 { 0.0 } else { 0.25 * self.problem.kappa * self.quartic(v) };
        EnergyParts { kinetic, potential, interaction }
    }

    /// `E_h(v)` or, in modified mode, `E_h^0(v)`.
    pub fn energy(&self, v: &HybridVector) -> f64 {
        self.energy_parts(v).total()
    }

    /// `N(v, phi)` for every basis function: `(v^3, phi)` in standard mode,
    /// `n_h(v, phi)` in modified mode. Face entries are zero.
    pub fn nonlinear_term(&self, v: &HybridVector) -> Vec<f64> {
        let nc = self.space.cell_dim();
        let mut out = vec![0.0; v.len()];
        let mut vals = vec![0.0; self.quartic_tab.len()];
        for c in 0..self.space.num_cells() {
            let a = self.cell_coeffs(v, c);
            let frame = &self.space.frames[c];
            let o = &mut out[c * nc..(c + 1) * nc];
            match self.mode() {
                Mode::Standard => {
                    self.nodal_values(a, c, &mut vals);
                    for (q, u) in vals.iter().enumerate() {
                        let w = self.quartic_tab.weight(q, frame) * u * u * u * frame.scale;
                        for (oi, phi) in o.iter_mut().zip(self.quartic_tab.values_at(q)) {
                            *oi += w * phi;
                        }
                    }
                }
                Mode::Modified => {
                    let mean = a[0] / frame.area.sqrt();
                    let mass: f64 = a.iter().map(|x| x * x).sum();
                    for (oi, ai) in o.iter_mut().zip(a) {
                        *oi = 0.5 * mean * mean * ai;
                    }
                    o[0] += 0.5 * mass * mean / frame.area.sqrt();
                }
            }
        }
        out
    }

    /// Gradient of the energy: `A v + V v + kappa N(v)`.
    pub fn energy_gradient(&self, v: &HybridVector) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        self.base.mul_vec(&v.values, &mut g);
        if self.problem.kappa != 0.0 {
            for (gi, ni) in g.iter_mut().zip(self.nonlinear_term(v)) {
                *gi += self.problem.kappa * ni;
            }
        }
        g
    }

    /// `a_h(v,v) + (V v, v) + kappa N(v, v)` divided by `||v_T||^2`.
    pub fn rayleigh_quotient(&self, v: &HybridVector) -> f64 {
        let g = self.energy_gradient(v);
        g.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>() / v.bulk_inner(v)
    }

    /// `r = A v + V v + kappa N(v) - lambda M v` over all basis functions.
    pub fn eigenvalue_residual(&self, v: &HybridVector, lambda: f64) -> Result<Vec<f64>> {
        let norm = v.bulk_norm();
        if (norm - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidState(format!("state is not normalised: ||v_T|| = {norm}")));
        }
        let mut r = self.energy_gradient(v);
        for (ri, vi) in r[..v.num_cell_dofs].iter_mut().zip(v.cell_block()) {
            *ri -= lambda * vi;
        }
        Ok(r)
    }

    /// `lambda = 2 E + kappa Q / 2` with the mode's quartic `Q`.
    pub fn lambda_from_state(&self, v: &HybridVector) -> f64 {
        let parts = self.energy_parts(v);
        2.0 * parts.total() + 2.0 * parts.interaction
    }

    /// Zero matrix with the pattern of the metric.
    pub fn metric_workspace(&self) -> CscMatrix {
        self.base.zeroed_like()
    }

    /// Adaptive metric `B_u = A + V + kappa W_u` written into `out`, which
    /// must come from [`Self::metric_workspace`]. In standard mode
    /// `W_u(v, w) = (u^2 v, w)`; in modified mode
    /// `W_u(v, w) = ((Pi^0 u)^2 v, w) / 2 + sum_T (int_T u^2) Pi^0 v Pi^0 w / 2`,
    /// so that `B_u u` is the energy gradient in both modes.
    pub fn metric_into(&self, u: &HybridVector, out: &mut CscMatrix) {
        out.values.copy_from_slice(&self.base.values);
        let kappa = self.problem.kappa;
        if kappa == 0.0 {
            return;
        }
        let nc = self.space.cell_dim();
        let mut vals = vec![0.0; self.quartic_tab.len()];
        let mut block = DMatrix::<f64>::zeros(nc, nc);
        for c in 0..self.space.num_cells() {
            let a = self.cell_coeffs(u, c);
            let frame = &self.space.frames[c];
            block.fill(0.0);
            match self.mode() {
                Mode::Standard => {
                    self.nodal_values(a, c, &mut vals);
                    for (q, uq) in vals.iter().enumerate() {
                        let w = self.quartic_tab.weight(q, frame) * uq * uq * frame.scale * frame.scale;
                        let phi = self.quartic_tab.values_at(q);
                        for j in 0..nc {
                            let wj = w * phi[j];
                            for i in 0..nc {
                                block[(i, j)] += wj * phi[i];
                            }
                        }
                    }
                }
                Mode::Modified => {
                    let mean = a[0] / frame.area.sqrt();
                    for i in 0..nc {
                        block[(i, i)] = 0.5 * mean * mean;
                    }
                    block[(0, 0)] += 0.5 * a.iter().map(|x| x * x).sum::<f64>() / frame.area;
                }
            }
            for j in 0..nc {
                let start = out.col_ptr[self.space.cell_offset(c) + j];
                for i in 0..nc {
                    out.values[start + i] += kappa * block[(i, j)];
                }
            }
        }
    }

    pub fn metric(&self, u: &HybridVector) -> CscMatrix {
        let mut m = self.metric_workspace();
        self.metric_into(u, &mut m);
        m
    }
}

/// `C_tr = 1/pi^2 + 2/(d pi)`.
pub fn trace_constant(d: usize) -> f64 {
    1.0 / (PI * PI) + 2.0 / (d as f64 * PI)
}

/// Checkable hypothesis `1 - sigma (1/pi^2 + C_tr) - 4 h^2 E_h^0 / pi^2 >= 0`
/// under which `E_h^0` is a guaranteed lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCertificate {
    pub h: f64,
    pub sigma: f64,
    pub energy: f64,
    pub d: usize,
    pub c_tr: f64,
    pub slack: f64,
    pub valid: bool,
}

pub fn certify(h: f64, sigma: f64, energy: f64, d: usize) -> LowerBoundCertificate {
    let c_tr = trace_constant(d);
    let slack = 1.0 - sigma * (1.0 / (PI * PI) + c_tr) - 4.0 * h * h * energy / (PI * PI);
    LowerBoundCertificate { h, sigma, energy, d, c_tr, slack, valid: slack >= 0.0 }
}

/// Largest admissible `sigma` scaled by `safety`, given an upper bound on
/// `E_h^0`.
pub fn auto_sigma(h: f64, e_upper: f64, d: usize, safety: f64) -> Result<f64> {
    let ratio = 4.0 * h * h * e_upper / (PI * PI);
    if ratio >= 1.0 {
        return Err(Error::NoAdmissibleSigma { ratio });
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("safety factor must lie in (0, 1], got {safety}")));
    }
    Ok(safety * (1.0 - ratio) / (1.0 / (PI * PI) + trace_constant(d)))
}

/// Converged discrete ground state.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: HybridVector,
    /// `E_h` or `E_h^0` depending on the mode.
    pub energy: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    pub energy_change: f64,
    pub certificate: Option<LowerBoundCertificate>,
}
