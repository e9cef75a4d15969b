//! Structured triangulations of axis-aligned rectangles.
//!
//! Meshes are built from a two-cell Friedrichs-Keller split of the rectangle
//! and refined uniformly by red refinement. Every refined mesh records the
//! parent of each cell so that piecewise polynomials can be transferred from
//! coarse to fine levels exactly.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    /// The square `(-a, a)^2`.
    pub fn centered_square(a: f64) -> Self {
        Self::new(-a, a, -a, a)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::InvalidDomain(format!(
                "rectangle [{}, {}] x [{}, {}] must have positive width and height",
                self.x0, self.x1, self.y0, self.y1
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }
}

/// Two-dimensional conforming triangulation.
///
/// Local face `i` of a cell is the edge opposite its local vertex `i`,
/// traversed counter-clockwise. Faces carry a global orientation (from the
/// lower to the higher vertex index); `cell_face_signs` records whether that
/// orientation's right-hand normal points out of the cell.
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 3]>,
    pub faces: Vec<[usize; 2]>,
    pub cell_faces: Vec<[usize; 3]>,
    pub cell_face_signs: Vec<[f64; 3]>,
    /// Adjacent cells of each face; the second entry is `None` on the boundary.
    pub face_cells: Vec<(usize, Option<usize>)>,
    pub boundary_face: Vec<bool>,
    pub parent: Vec<Option<usize>>,
    pub level: usize,
    /// Set only for meshes produced by [`friedrichs_keller`] and [`red_refine`].
    domain: Option<Rect>,
}

impl TriMesh {
    /// Builds a mesh from raw vertex and cell arrays. Cells are reoriented to
    /// be counter-clockwise. The result carries no refinement provenance.
    pub fn from_cells(vertices: Vec<[f64; 2]>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let mut cells = cells;
        for c in cells.iter_mut() {
            if c.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidDomain(format!("cell {c:?} references a missing vertex")));
            }
            let a = signed_area(vertices[c[0]], vertices[c[1]], vertices[c[2]]);
            if a == 0.0 {
                return Err(Error::InvalidDomain(format!("cell {c:?} is degenerate")));
            }
            if a < 0.0 {
                c.swap(1, 2);
            }
        }
        let n = cells.len();
        Ok(build_topology(vertices, cells, vec![None; n], 0, None))
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_boundary_faces(&self) -> usize {
        self.boundary_face.iter().filter(|&&b| b).count()
    }

    /// Rectangle this mesh was generated from, if it came from the
    /// Friedrichs-Keller constructor chain.
    pub fn domain(&self) -> Option<Rect> {
        self.domain
    }

    pub fn cell_vertices(&self, c: usize) -> [[f64; 2]; 3] {
        let [a, b, d] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[d]]
    }

    pub fn signed_area(&self, c: usize) -> f64 {
        let [a, b, d] = self.cell_vertices(c);
        signed_area(a, b, d)
    }

    /// Vertices of local face `i` of cell `c` in counter-clockwise order.
    pub fn local_face_vertices(&self, c: usize, i: usize) -> [[f64; 2]; 2] {
        let cell = self.cells[c];
        [self.vertices[cell[(i + 1) % 3]], self.vertices[cell[(i + 2) % 3]]]
    }

    /// Checks the structural invariants of the triangulation.
    pub fn check(&self) -> Result<()> {
        let mut incidence = vec![0usize; self.faces.len()];
        for (c, faces) in self.cell_faces.iter().enumerate() {
            if self.signed_area(c) <= 0.0 {
                return Err(Error::UnsupportedMesh(format!("cell {c} is not positively oriented")));
            }
            for &f in faces {
                incidence[f] += 1;
            }
        }
        for (f, &count) in incidence.iter().enumerate() {
            let expected = if self.boundary_face[f] { 1 } else { 2 };
            if count != expected {
                return Err(Error::UnsupportedMesh(format!(
                    "face {f} is shared by {count} cells, expected {expected}"
                )));
            }
        }
        if 2 * self.faces.len() != 3 * self.cells.len() + self.num_boundary_faces() {
            return Err(Error::UnsupportedMesh("face-count identity violated".into()));
        }
        Ok(())
    }

    /// Writes one vertex per line as `x y`.
    pub fn write_nodes<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "{:.17e} {:.17e}", v[0], v[1])?;
        }
        Ok(())
    }

    /// Writes one cell per line as 0-based `i j k`.
    pub fn write_elements<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.cells {
            writeln!(w, "{} {} {}", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn build_topology(
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    parent: Vec<Option<usize>>,
    level: usize,
    domain: Option<Rect>,
) -> TriMesh {
    let mut index: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 2);
    let mut faces = Vec::with_capacity(cells.len() * 3 / 2 + 4);
    let mut face_cells: Vec<(usize, Option<usize>)> = Vec::with_capacity(faces.capacity());
    let mut cell_faces = Vec::with_capacity(cells.len());
    let mut cell_face_signs = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let mut fs = [0usize; 3];
        let mut signs = [0.0; 3];
        for i in 0..3 {
            let a = cell[(i + 1) % 3];
            let b = cell[(i + 2) % 3];
            let key = (a.min(b), a.max(b));
            let f = *index.entry(key).or_insert_with(|| {
                faces.push([key.0, key.1]);
                face_cells.push((c, None));
                faces.len() - 1
            });
            if face_cells[f].0 != c {
                face_cells[f].1 = Some(c);
            }
            fs[i] = f;
            signs[i] = if a < b { 1.0 } else { -1.0 };
        }
        cell_faces.push(fs);
        cell_face_signs.push(signs);
    }
    let boundary_face = face_cells.iter().map(|(_, other)| other.is_none()).collect();
    TriMesh {
        vertices,
        cells,
        faces,
        cell_faces,
        cell_face_signs,
        face_cells,
        boundary_face,
        parent,
        level,
        domain,
    }
}

/// Splits `rect` into two triangles along the diagonal from the lower-left
/// to the upper-right corner.
pub fn friedrichs_keller(rect: Rect) -> Result<TriMesh> {
    rect.validate()?;
    let vertices = vec![
        [rect.x0, rect.y0],
        [rect.x1, rect.y0],
        [rect.x1, rect.y1],
        [rect.x0, rect.y1],
    ];
    let cells = vec![[0, 1, 2], [0, 2, 3]];
    Ok(build_topology(vertices, cells, vec![None, None], 0, Some(rect)))
}

/// Uniform red refinement: every cell is split into four congruent children
/// through its edge midpoints. Child `4c + j` has parent `c`; coarse vertices
/// keep their indices and coordinates, the midpoint of coarse face `f` gets
/// index `num_vertices + f`.
pub fn red_refine(mesh: &TriMesh) -> TriMesh {
    let nv = mesh.vertices.len();
    let mut vertices = Vec::with_capacity(nv + mesh.faces.len());
    vertices.extend_from_slice(&mesh.vertices);
    for &[a, b] in &mesh.faces {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
    }
    let mut cells = Vec::with_capacity(4 * mesh.cells.len());
    let mut parent = Vec::with_capacity(4 * mesh.cells.len());
    for (c, &[a, b, d]) in mesh.cells.iter().enumerate() {
        // local face i is opposite vertex i
        let [fa, fb, fd] = mesh.cell_faces[c];
        let (m_bd, m_da, m_ab) = (nv + fa, nv + fb, nv + fd);
        cells.push([a, m_ab, m_da]);
        cells.push([m_ab, b, m_bd]);
        cells.push([m_da, m_bd, d]);
        cells.push([m_bd, m_da, m_ab]);
        parent.extend([Some(c); 4]);
    }
    build_topology(vertices, cells, parent, mesh.level + 1, mesh.domain)
}

/// Root mesh of `rect` refined `levels` times.
pub fn refined_mesh(rect: Rect, levels: usize) -> Result<TriMesh> {
    let mut mesh = friedrichs_keller(rect)?;
    for _ in 0..levels {
        mesh = red_refine(&mesh);
    }
    Ok(mesh)
}

/// Side length of the squares formed by pairs of opposing triangles,
/// `width / 2^level`.
pub fn square_side_h(mesh: &TriMesh) -> Result<f64> {
    let rect = mesh.domain.ok_or_else(|| {
        Error::UnsupportedMesh("mesh was not produced by friedrichs_keller + red_refine".into())
    })?;
    Ok(rect.width() / (1u64 << mesh.level) as f64)
}

/// Geometric quantities consumed by the HHO operators.
#[derive(Clone, Debug)]
pub struct GeometryCache {
    pub cell_diameter: Vec<f64>,
    pub cell_area: Vec<f64>,
    pub cell_barycenter: Vec<[f64; 2]>,
    pub face_length: Vec<f64>,
    /// Unit normal in the global face orientation.
    pub face_normal: Vec<[f64; 2]>,
    /// `|T_F|` for each local face, `T_F = conv{x_T, F}`.
    pub sub_area: Vec<[f64; 3]>,
    /// `l_{T,F} = |F| h_T^2 / |T_F|` for each local face.
    pub ell: Vec<[f64; 3]>,
}

impl GeometryCache {
    pub fn max_diameter(&self) -> f64 {
        self.cell_diameter.iter().copied().fold(0.0, f64::max)
    }

    /// Outward unit normal of local face `i` of cell `c`.
    pub fn outward_normal(&self, mesh: &TriMesh, c: usize, i: usize) -> [f64; 2] {
        let n = self.face_normal[mesh.cell_faces[c][i]];
        let s = mesh.cell_face_signs[c][i];
        [s * n[0], s * n[1]]
    }
}

pub fn compute_geometry(mesh: &TriMesh) -> GeometryCache {
    let nc = mesh.num_cells();
    let mut g = GeometryCache {
        cell_diameter: Vec::with_capacity(nc),
        cell_area: Vec::with_capacity(nc),
        cell_barycenter: Vec::with_capacity(nc),
        face_length: Vec::with_capacity(mesh.num_faces()),
        face_normal: Vec::with_capacity(mesh.num_faces()),
        sub_area: Vec::with_capacity(nc),
        ell: Vec::with_capacity(nc),
    };
    for &[a, b] in &mesh.faces {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = dx.hypot(dy);
        g.face_length.push(len);
        g.face_normal.push([dy / len, -dx / len]);
    }
    for c in 0..nc {
        let p = mesh.cell_vertices(c);
        let area = signed_area(p[0], p[1], p[2]);
        let bary = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let mut diam: f64 = 0.0;
        for i in 0..3 {
            let (u, v) = (p[i], p[(i + 1) % 3]);
            diam = diam.max((v[0] - u[0]).hypot(v[1] - u[1]));
        }
        let mut sub = [0.0; 3];
        let mut ell = [0.0; 3];
        for i in 0..3 {
            let [u, v] = mesh.local_face_vertices(c, i);
            sub[i] = signed_area(bary, u, v);
            ell[i] = g.face_length[mesh.cell_faces[c][i]] * diam * diam / sub[i];
        }
        g.cell_diameter.push(diam);
        g.cell_area.push(area);
        g.cell_barycenter.push(bary);
        g.sub_area.push(sub);
        g.ell.push(ell);
    }
    g
}

/// Index of the ancestor of fine cell `c` that lives `levels_up` levels above
/// the mesh at the end of `hierarchy` (`hierarchy[i + 1]` refines
/// `hierarchy[i]`).
pub fn ancestor(hierarchy: &[TriMesh], mut c: usize, levels_up: usize) -> Result<usize> {
    let n = hierarchy.len();
    if levels_up >= n {
        return Err(Error::UnsupportedMesh(format!(
            "hierarchy has {n} levels, cannot go up {levels_up}"
        )));
    }
    for mesh in hierarchy[n - levels_up..].iter().rev() {
        c = mesh.parent[c].ok_or_else(|| Error::UnsupportedMesh("cell without parent link".into()))?;
    }
    Ok(c)
}
