//! Solvers for the sparse SPD systems arising at each time step.
//!
//! The system matrix is constant over a run, so the context is prepared once
//! (factorization or preconditioner) and reused for every right-hand side.
//! Small systems use a band Cholesky factorization after reverse
//! Cuthill-McKee reordering; large ones use Jacobi-preconditioned conjugate
//! gradients.

use crate::assembly::SparseSpdMatrix;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    /// A non-positive pivot during Cholesky means the input was not SPD,
    /// i.e. an upstream assembly or constraint bug.
    #[error("Cholesky breakdown at pivot {pivot}: matrix is not positive definite")]
    NotPositiveDefinite { pivot: usize },
    #[error("CG did not reach tolerance {tol:e} in {iterations} iterations (achieved {achieved:e})")]
    MaxIterationsExceeded {
        iterations: usize,
        tol: f64,
        achieved: f64,
    },
    #[error("right-hand side length {got} does not match system dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("right-hand side contains a non-finite entry")]
    NonFiniteRhs,
}

/// Solution method for an SPD system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Band Cholesky below [`DIRECT_DIM_LIMIT`] unknowns, CG above.
    #[default]
    Auto,
    Cholesky,
    ConjugateGradient,
}

/// Crossover dimension for [`Method::Auto`].
pub const DIRECT_DIM_LIMIT: usize = 20_000;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    pub method: Method,
    /// Relative residual tolerance for CG.
    pub tolerance: f64,
    /// Iteration cap for CG; defaults to five times the dimension.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            tolerance: 1e-12,
            max_iterations: None,
        }
    }
}

enum Backend {
    Cholesky(BandCholesky),
    ConjugateGradient {
        matrix: Arc<SparseSpdMatrix>,
        inv_diag: Vec<f64>,
    },
}

/// Reusable solver context bound to one SPD matrix.
pub struct SpdSolverContext {
    dim: usize,
    tolerance: f64,
    max_iterations: usize,
    backend: Backend,
}

/// Build a solver context. For the direct method the factorization happens
/// here; CG only extracts the Jacobi preconditioner.
pub fn prepare(matrix: Arc<SparseSpdMatrix>, options: &SolverOptions) -> Result<SpdSolverContext, SolveError> {
    assert!(
        options.tolerance > 0.0 && options.tolerance < 1.0,
        "tolerance must lie in (0, 1)"
    );
    let dim = matrix.dim();
    let direct = match options.method {
        Method::Cholesky => true,
        Method::ConjugateGradient => false,
        Method::Auto => dim <= DIRECT_DIM_LIMIT,
    };
    let backend = if direct {
        Backend::Cholesky(BandCholesky::factor(&matrix)?)
    } else {
        let inv_diag = matrix
            .diagonal()
            .into_iter()
            .map(|d| {
                debug_assert!(d > 0.0, "SPD matrix needs a positive diagonal");
                1.0 / d
            })
            .collect();
        Backend::ConjugateGradient { matrix, inv_diag }
    };
    Ok(SpdSolverContext {
        dim,
        tolerance: options.tolerance,
        max_iterations: options.max_iterations.unwrap_or(5 * dim.max(20)),
        backend,
    })
}

impl SpdSolverContext {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `A x = b` to the context tolerance (exactly, for Cholesky).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        if b.len() != self.dim {
            return Err(SolveError::DimensionMismatch {
                got: b.len(),
                expected: self.dim,
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFiniteRhs);
        }
        match &self.backend {
            Backend::Cholesky(factor) => Ok(factor.solve(b)),
            Backend::ConjugateGradient { matrix, inv_diag } => {
                preconditioned_cg(matrix, inv_diag, b, self.tolerance, self.max_iterations)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn preconditioned_cg(
    matrix: &SparseSpdMatrix,
    inv_diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<Vec<f64>, SolveError> {
    let dim = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];
    for _ in 0..max_iterations {
        matrix.matvec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..dim {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt();
        if res <= tol * b_norm {
            return Ok(x);
        }
        for i in 0..dim {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..dim {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::MaxIterationsExceeded {
        iterations: max_iterations,
        tol,
        achieved: dot(&r, &r).sqrt() / b_norm,
    })
}

/// Reverse Cuthill-McKee ordering: BFS from a pseudo-peripheral vertex,
/// neighbors visited in increasing degree, order reversed. Shrinks the
/// bandwidth of the structured-mesh matrices enough for band Cholesky.
pub fn reverse_cuthill_mckee(matrix: &SparseSpdMatrix) -> Vec<usize> {
    let dim = matrix.dim();
    let degree = |i: usize| matrix.row(i).0.len();

    // A couple of BFS sweeps to find a pseudo-peripheral start.
    let bfs_last = |start: usize| -> usize {
        let mut seen = vec![false; dim];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &w in matrix.row(v).0 {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        last
    };
    let mut start = (0..dim).min_by_key(|&i| degree(i)).unwrap_or(0);
    for _ in 0..2 {
        start = bfs_last(start);
    }

    let mut order = Vec::with_capacity(dim);
    let mut seen = vec![false; dim];
    let mut queue = std::collections::VecDeque::new();
    let enqueue = |v: usize, seen: &mut Vec<bool>, queue: &mut std::collections::VecDeque<usize>| {
        seen[v] = true;
        queue.push_back(v);
    };
    enqueue(start, &mut seen, &mut queue);
    loop {
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut neighbors: Vec<usize> =
                matrix.row(v).0.iter().copied().filter(|&w| !seen[w]).collect();
            neighbors.sort_by_key(|&w| degree(w));
            for w in neighbors {
                if !seen[w] {
                    enqueue(w, &mut seen, &mut queue);
                }
            }
        }
        // Disconnected free-dof sets cannot occur for these meshes, but stay
        // total anyway.
        match seen.iter().position(|&s| !s) {
            Some(v) => enqueue(v, &mut seen, &mut queue),
            None => break,
        }
    }
    order.reverse();
    order
}

/// Band Cholesky factorization of an RCM-permuted SPD matrix.
struct BandCholesky {
    dim: usize,
    bandwidth: usize,
    /// Row-major band storage: entry `(i, j)` with `i-bw <= j <= i` lives at
    /// `band[i * (bw + 1) + (j - i + bw)]`.
    band: Vec<f64>,
    /// Permutation: `perm[k]` is the original index of permuted row `k`.
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
}

impl BandCholesky {
    fn factor(matrix: &SparseSpdMatrix) -> Result<Self, SolveError> {
        let dim = matrix.dim();
        let perm = reverse_cuthill_mckee(matrix);
        let mut inv_perm = vec![0usize; dim];
        for (k, &g) in perm.iter().enumerate() {
            inv_perm[g] = k;
        }
        let mut bandwidth = 0usize;
        for i in 0..dim {
            for &j in matrix.row(i).0 {
                let (pi, pj) = (inv_perm[i], inv_perm[j]);
                if pj < pi {
                    bandwidth = bandwidth.max(pi - pj);
                }
            }
        }
        let stride = bandwidth + 1;
        let mut band = vec![0.0; dim * stride];
        for i in 0..dim {
            let (cols, vals) = matrix.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let (pi, pj) = (inv_perm[i], inv_perm[j]);
                if pj <= pi {
                    band[pi * stride + (pj + bandwidth - pi)] = v;
                }
            }
        }
        // In-place banded Cholesky, lower triangle.
        for i in 0..dim {
            let lo = i.saturating_sub(bandwidth);
            for j in lo..=i {
                let mut sum = band[i * stride + (j + bandwidth - i)];
                let start = lo.max(j.saturating_sub(bandwidth));
                for k in start..j {
                    sum -= band[i * stride + (k + bandwidth - i)]
                        * band[j * stride + (k + bandwidth - j)];
                }
                if j == i {
                    if sum <= 0.0 {
                        return Err(SolveError::NotPositiveDefinite { pivot: i });
                    }
                    band[i * stride + bandwidth] = sum.sqrt();
                } else {
                    band[i * stride + (j + bandwidth - i)] = sum / band[j * stride + bandwidth];
                }
            }
        }
        Ok(Self {
            dim,
            bandwidth,
            band,
            perm,
            inv_perm,
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (dim, bw) = (self.dim, self.bandwidth);
        let stride = bw + 1;
        let mut y: Vec<f64> = (0..dim).map(|k| b[self.perm[k]]).collect();
        // Forward substitution L y' = y.
        for i in 0..dim {
            let lo = i.saturating_sub(bw);
            let mut sum = y[i];
            for j in lo..i {
                sum -= self.band[i * stride + (j + bw - i)] * y[j];
            }
            y[i] = sum / self.band[i * stride + bw];
        }
        // Back substitution L^T x' = y'.
        for i in (0..dim).rev() {
            let hi = (i + bw).min(dim - 1);
            let mut sum = y[i];
            for j in (i + 1)..=hi {
                sum -= self.band[j * stride + (i + bw - j)] * y[j];
            }
            y[i] = sum / self.band[i * stride + bw];
        }
        let mut x = vec![0.0; dim];
        for g in 0..dim {
            x[g] = y[self.inv_perm[g]];
        }
        x
    }
}

/// Dense row-major matrix with an LU solve, for the small coupled block
/// systems of the monolithic reference stepper.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }

    /// Solve `A x = b` by LU with partial pivoting; consumes the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let n = self.dim;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        let mut piv: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (best, best_val) = (col..n)
                .map(|r| (r, self.at(r, col).abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if best_val == 0.0 {
                return Err(SolveError::NotPositiveDefinite { pivot: col });
            }
            if best != col {
                for j in 0..n {
                    self.data.swap(col * n + j, best * n + j);
                }
                x.swap(col, best);
                piv.swap(col, best);
            }
            let pivot = self.at(col, col);
            for r in (col + 1)..n {
                let factor = self.at(r, col) / pivot;
                if factor == 0.0 {
                    continue;
                }
                *self.at_mut(r, col) = 0.0;
                for j in (col + 1)..n {
                    let v = self.at(col, j);
                    *self.at_mut(r, j) -= factor * v;
                }
                x[r] -= factor * x[col];
            }
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for j in (i + 1)..n {
                sum -= self.at(i, j) * x[j];
            }
            x[i] = sum / self.at(i, i);
        }
        Ok(x)
    }
}
