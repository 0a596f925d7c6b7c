//! Assembly of mass and stiffness matrices and time-dependent load vectors.
//!
//! Matrices are stored in CSR with sorted column indices. Element
//! contributions are computed in parallel but scattered in element order, so
//! the assembled values do not depend on the rayon schedule.

use crate::fespace::{edge_quadrature, quadrature, FunctionSpace, QuadratureRule, MAX_LOCAL_DOFS};
use crate::mesh::BoundaryTag;
use rayon::prelude::*;
use std::io::Write;

/// Sparse symmetric positive (semi-)definite matrix in CSR form.
#[derive(Debug, Clone)]
pub struct SparseSpdMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSpdMatrix {
    /// Build directly from CSR arrays. Column indices must be sorted within
    /// each row.
    pub fn from_raw(
        dim: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(row_ptr.len(), dim + 1);
        assert_eq!(col_idx.len(), values.len());
        debug_assert!((0..dim).all(|i| col_idx[row_ptr[i]..row_ptr[i + 1]].windows(2).all(|w| w[0] < w[1])));
        Self {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// CSR pattern `(row_ptr, col_idx)`.
    pub fn pattern(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.col_idx)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`. Row-parallel for large matrices; each row is accumulated
    /// sequentially so the result is schedule independent.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let row = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            s
        };
        if self.dim >= 20_000 {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec(x, &mut y);
        y
    }

    /// Quadratic/bilinear form `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.dim {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * y[self.col_idx[k]];
            }
            total += x[i] * s;
        }
        total
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                defect = defect.max((v - self.get(j, i)).abs());
                scale = scale.max(v.abs());
            }
        }
        if scale > 0.0 {
            defect / scale
        } else {
            0.0
        }
    }

    /// Same-pattern linear combination `a*A + b*B`.
    pub fn linear_combination(a: f64, ma: &Self, b: f64, mb: &Self) -> Self {
        assert_eq!(ma.row_ptr, mb.row_ptr, "sparsity patterns must match");
        assert_eq!(ma.col_idx, mb.col_idx, "sparsity patterns must match");
        Self {
            dim: ma.dim,
            row_ptr: ma.row_ptr.clone(),
            col_idx: ma.col_idx.clone(),
            values: ma
                .values
                .iter()
                .zip(&mb.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.dim]; self.dim];
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i][j] = v;
            }
        }
        dense
    }

    /// Write the matrix in MatrixMarket coordinate format (general,
    /// one-based indices) for external verification.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// CSR builder with a fixed symbolic pattern; values accumulate in place.
struct CsrAccumulator {
    matrix: SparseSpdMatrix,
}

impl CsrAccumulator {
    /// Symbolic pattern from the element dof lists.
    fn from_space(space: &FunctionSpace) -> Self {
        let dim = space.num_dofs();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for t in 0..space.mesh().triangles.len() {
            let dofs = space.elem_dofs(t);
            for &i in dofs {
                cols[i].extend_from_slice(dofs);
            }
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut cols {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self {
            matrix: SparseSpdMatrix {
                dim,
                row_ptr,
                col_idx,
                values,
            },
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let m = &mut self.matrix;
        let r = m.row_ptr[i]..m.row_ptr[i + 1];
        let k = m.col_idx[r.clone()].binary_search(&j).expect("entry in pattern");
        m.values[r.start + k] += v;
    }
}

type LocalMatrix = [[f64; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];

/// Element mass matrix `int_K rho N_i N_j` for triangle `t`.
pub fn element_mass_matrix(
    space: &FunctionSpace,
    t: usize,
    rho: f64,
    rule: &QuadratureRule,
) -> LocalMatrix {
    let local = space.element().local_dofs();
    let jac_scale = 2.0 * space.mesh().triangles[t].area;
    let mut m = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
    for k in 0..rule.len() {
        let (xi, eta) = rule.xy(k);
        let n = space.element().shape(xi, eta);
        let w = rule.weights[k] * jac_scale * rho;
        for i in 0..local {
            for j in 0..local {
                m[i][j] += w * n[i] * n[j];
            }
        }
    }
    m
}

/// Element stiffness matrix `int_K D grad N_i . grad N_j` for triangle `t`.
pub fn element_stiffness_matrix(
    space: &FunctionSpace,
    t: usize,
    modulus: f64,
    rule: &QuadratureRule,
) -> LocalMatrix {
    let local = space.element().local_dofs();
    let jac_scale = 2.0 * space.mesh().triangles[t].area;
    let mut a = [[0.0; MAX_LOCAL_DOFS]; MAX_LOCAL_DOFS];
    for k in 0..rule.len() {
        let (xi, eta) = rule.xy(k);
        let g = space.physical_gradients(t, xi, eta);
        let w = rule.weights[k] * jac_scale * modulus;
        for i in 0..local {
            for j in 0..local {
                a[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    a
}

fn assemble_elementwise<F>(space: &FunctionSpace, local: F) -> SparseSpdMatrix
where
    F: Fn(usize) -> LocalMatrix + Sync,
{
    let n_tri = space.mesh().triangles.len();
    let locals: Vec<LocalMatrix> = (0..n_tri).into_par_iter().map(&local).collect();
    let mut acc = CsrAccumulator::from_space(space);
    let nd = space.element().local_dofs();
    for (t, m) in locals.iter().enumerate() {
        let dofs = space.elem_dofs(t);
        for i in 0..nd {
            for j in 0..nd {
                acc.add(dofs[i], dofs[j], m[i][j]);
            }
        }
    }
    acc.matrix
}

/// Assemble the mass matrix `(rho u, v)` over all dofs.
pub fn assemble_mass(space: &FunctionSpace, rho: f64) -> SparseSpdMatrix {
    assert!(rho > 0.0, "mass density must be positive");
    let rule = quadrature(2 * space.degree()).expect("assembly rule");
    assemble_elementwise(space, |t| element_mass_matrix(space, t, rho, &rule))
}

/// Assemble the stiffness matrix `a(u, v) = (D grad u, grad v)` over all
/// dofs. Singular before Dirichlet reduction (constants in the kernel).
pub fn assemble_stiffness(space: &FunctionSpace, modulus: f64) -> SparseSpdMatrix {
    assert!(modulus > 0.0, "modulus must be positive");
    let rule = quadrature(2 * space.degree()).expect("assembly rule");
    assemble_elementwise(space, |t| element_stiffness_matrix(space, t, modulus, &rule))
}

/// Quadrature exactness used for data and error integrals: `2 s1 + 3`.
pub fn data_exactness(degree: usize) -> usize {
    2 * degree + 3
}

/// Assemble the volume load `b_i = int f(., t) phi_i` over all dofs.
pub fn assemble_source<F>(space: &FunctionSpace, f: F, t: f64) -> Vec<f64>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    assemble_source_with_exactness(space, f, t, data_exactness(space.degree()))
}

pub fn assemble_source_with_exactness<F>(
    space: &FunctionSpace,
    f: F,
    t: f64,
    exactness: usize,
) -> Vec<f64>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let rule = quadrature(exactness).expect("data rule");
    let n_tri = space.mesh().triangles.len();
    let nd = space.element().local_dofs();
    let locals: Vec<[f64; MAX_LOCAL_DOFS]> = (0..n_tri)
        .into_par_iter()
        .map(|tri| {
            let jac_scale = 2.0 * space.mesh().triangles[tri].area;
            let mut b = [0.0; MAX_LOCAL_DOFS];
            for k in 0..rule.len() {
                let (xi, eta) = rule.xy(k);
                let p = space.map_to_physical(tri, xi, eta);
                let n = space.element().shape(xi, eta);
                let w = rule.weights[k] * jac_scale * f(p[0], p[1], t);
                for (bi, ni) in b.iter_mut().zip(n.iter()).take(nd) {
                    *bi += w * ni;
                }
            }
            b
        })
        .collect();
    let mut out = vec![0.0; space.num_dofs()];
    for (tri, b) in locals.iter().enumerate() {
        for (l, &g) in space.elem_dofs(tri).iter().enumerate() {
            out[g] += b[l];
        }
    }
    out
}

/// Assemble the energy-pairing load `b_i = int D grad(u) . grad(phi_i)` for
/// a function given by its gradient. Drives the elliptic projection of the
/// initial displacement.
pub fn assemble_gradient_load<G>(space: &FunctionSpace, grad: G, modulus: f64) -> Vec<f64>
where
    G: Fn(f64, f64) -> [f64; 2] + Sync,
{
    let rule = quadrature(data_exactness(space.degree())).expect("data rule");
    let n_tri = space.mesh().triangles.len();
    let nd = space.element().local_dofs();
    let locals: Vec<[f64; MAX_LOCAL_DOFS]> = (0..n_tri)
        .into_par_iter()
        .map(|tri| {
            let jac_scale = 2.0 * space.mesh().triangles[tri].area;
            let mut b = [0.0; MAX_LOCAL_DOFS];
            for k in 0..rule.len() {
                let (xi, eta) = rule.xy(k);
                let p = space.map_to_physical(tri, xi, eta);
                let gu = grad(p[0], p[1]);
                let gphi = space.physical_gradients(tri, xi, eta);
                let w = rule.weights[k] * jac_scale * modulus;
                for (l, bl) in b.iter_mut().enumerate().take(nd) {
                    *bl += w * (gu[0] * gphi[l][0] + gu[1] * gphi[l][1]);
                }
            }
            b
        })
        .collect();
    let mut out = vec![0.0; space.num_dofs()];
    for (tri, b) in locals.iter().enumerate() {
        for (l, &g) in space.elem_dofs(tri).iter().enumerate() {
            out[g] += b[l];
        }
    }
    out
}

/// Assemble the Neumann load `b_i = int_{Gamma_N} g(., t) phi_i` with the
/// 3-point edge rule. Zero away from the Neumann boundary.
pub fn assemble_neumann<F>(space: &FunctionSpace, g: F, t: f64) -> Vec<f64>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let (pts, wts) = edge_quadrature();
    let mut out = vec![0.0; space.num_dofs()];
    for edge in &space.mesh().boundary_edges {
        if edge.tag != BoundaryTag::Neumann {
            continue;
        }
        let dofs = space.boundary_edge_dofs(edge);
        let (a, b) = (
            space.mesh().nodes[edge.nodes[0]],
            space.mesh().nodes[edge.nodes[1]],
        );
        let len = space.mesh().edge_length(edge);
        for (&s, &w) in pts.iter().zip(&wts) {
            let x = a.x + s * (b.x - a.x);
            let y = a.y + s * (b.y - a.y);
            let shape = space.element().edge_shape(s);
            let scale = w * len * g(x, y, t);
            for (l, &dof) in dofs.iter().enumerate() {
                out[dof] += scale * shape[l];
            }
        }
    }
    out
}

/// Symmetric elimination of the Dirichlet dofs: keep the free rows and
/// columns. Homogeneous data only, so no right-hand-side lifting appears.
pub fn reduce_matrix(space: &FunctionSpace, full: &SparseSpdMatrix) -> SparseSpdMatrix {
    assert_eq!(full.dim(), space.num_dofs());
    let free = space.free_to_global();
    let dim = free.len();
    let mut global_to_free = vec![usize::MAX; full.dim()];
    for (k, &g) in free.iter().enumerate() {
        global_to_free[g] = k;
    }
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for &g in free {
        let (cols, vals) = full.row(g);
        for (&j, &v) in cols.iter().zip(vals) {
            let fj = global_to_free[j];
            if fj != usize::MAX {
                col_idx.push(fj);
                values.push(v);
            }
        }
        row_ptr.push(col_idx.len());
    }
    SparseSpdMatrix {
        dim,
        row_ptr,
        col_idx,
        values,
    }
}
