//! Compressed sparse column storage for the symmetric systems of the HHO
//! discretisation. Both triangles are stored.

use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Pattern of a finite element matrix: column `j` holds every dof that
    /// shares an element with `j`. `elements` lists global dofs per element.
    pub fn from_element_pattern(n: usize, elements: &[Vec<usize>]) -> Self {
        let mut count = vec![0usize; n + 1];
        for dofs in elements {
            for &d in dofs {
                count[d + 1] += 1;
            }
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut fill = count.clone();
        let mut dof_elements = vec![0usize; count[n]];
        for (e, dofs) in elements.iter().enumerate() {
            for &d in dofs {
                dof_elements[fill[d]] = e;
                fill[d] += 1;
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut scratch = Vec::new();
        for j in 0..n {
            scratch.clear();
            for &e in &dof_elements[count[j]..count[j + 1]] {
                scratch.extend_from_slice(&elements[e]);
            }
            scratch.sort_unstable();
            scratch.dedup();
            row_idx.extend_from_slice(&scratch);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        CscMatrix { n, col_ptr, row_idx, values: vec![0.0; nnz] }
    }

    pub fn identity(n: usize) -> Self {
        CscMatrix { n, col_ptr: (0..=n).collect(), row_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn zeroed_like(&self) -> Self {
        CscMatrix { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    /// Position of entry `(row, col)` in `values`.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (s, e) = (self.col_ptr[col], self.col_ptr[col + 1]);
        self.row_idx[s..e].binary_search(&row).ok().map(|p| s + p)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    /// Adds a dense element matrix; `dofs[a] = None` drops row/column `a`.
    pub fn add_element(&mut self, dofs: &[Option<usize>], local: &DMatrix<f64>) {
        for (b, gb) in dofs.iter().enumerate() {
            let Some(gb) = *gb else { continue };
            for (a, ga) in dofs.iter().enumerate() {
                let Some(ga) = *ga else { continue };
                let p = self.position(ga, gb).expect("entry outside assembled pattern");
                self.values[p] += local[(a, b)];
            }
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n {
            let mut col = 0.0;
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                col += self.values[p] * x[self.row_idx[p]];
            }
            s += col * y[j];
        }
        s
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, j)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                worst = worst.max((self.values[p] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        let symbolic = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx);
        SparseColMatRef::new(symbolic, &self.values)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                d[(self.row_idx[p], j)] = self.values[p];
            }
        }
        d
    }
}
