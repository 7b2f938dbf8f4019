//! Compressed sparse row matrices and the iterative solvers used by the
//! scheme: preconditioned conjugate gradients with an element-block Jacobi
//! preconditioner.
//!
//! All system matrices here share the DG block structure: degrees of
//! freedom come in element blocks, and a block couples only to itself and
//! to the blocks of face-adjacent elements. The CSR pattern is built once
//! from that adjacency and reused.

use crate::basis::invert_dense;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Matrix with the DG block sparsity pattern: `n_blocks` blocks of
    /// size `block`, where block i couples to itself and to
    /// `neighbors(i)` (sorted, self excluded). Values start at zero.
    pub fn with_block_pattern(
        n_blocks: usize,
        block: usize,
        neighbors: impl Fn(usize) -> Vec<usize>,
    ) -> CsrMatrix {
        let n = n_blocks * block;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for b in 0..n_blocks {
            let mut coupled = neighbors(b);
            coupled.push(b);
            coupled.sort_unstable();
            for _ in 0..block {
                for &c in &coupled {
                    for j in 0..block {
                        col_idx.push(c * block + j);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Same pattern as `self`, all values zero.
    pub fn zero_like(&self) -> CsrMatrix {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    /// Adds `v` to entry (i, j); the position must exist in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos] += v,
            Err(_) => panic!("entry ({i}, {j}) outside the sparsity pattern"),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.nrows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] += alpha * s;
        }
    }

    /// self += alpha * other, where other's pattern is a subset of self's.
    pub fn add_scaled(&mut self, alpha: f64, other: &CsrMatrix) {
        assert_eq!(self.nrows, other.nrows);
        for i in 0..other.nrows {
            for k in other.row_ptr[i]..other.row_ptr[i + 1] {
                self.add(i, other.col_idx[k], alpha * other.values[k]);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// max_ij |A_ij - A_ji| over the stored pattern.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| {
                self.values[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Element-block Jacobi preconditioner: the inverse of each diagonal
/// block, applied block by block.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    block: usize,
    inverses: Vec<f64>,
}

impl BlockJacobi {
    pub fn new(matrix: &CsrMatrix, block: usize) -> BlockJacobi {
        assert_eq!(matrix.nrows % block, 0);
        let n_blocks = matrix.nrows / block;
        let mut inverses = Vec::with_capacity(n_blocks * block * block);
        let mut local = vec![0.0; block * block];
        for b in 0..n_blocks {
            for i in 0..block {
                for j in 0..block {
                    local[i * block + j] = matrix.get(b * block + i, b * block + j);
                }
            }
            inverses.extend_from_slice(&invert_dense(&local, block));
        }
        BlockJacobi { block, inverses }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let block = self.block;
        let n_blocks = r.len() / block;
        for b in 0..n_blocks {
            let inv = &self.inverses[b * block * block..(b + 1) * block * block];
            for i in 0..block {
                let mut s = 0.0;
                for j in 0..block {
                    s += inv[i * block + j] * r[b * block + j];
                }
                z[b * block + i] = s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual |r| / |b|.
    pub residual: f64,
}

/// Preconditioned conjugate gradients for SPD systems. Errors out with
/// `IndefiniteSystem` when a direction of nonpositive curvature shows up,
/// which the callers use to detect a bad shift or a lost convexity regime.
pub fn conjugate_gradient(
    matrix: &dyn Fn(&[f64], &mut [f64]),
    precond: &BlockJacobi,
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = rhs.len();
    let norm_b = norm(rhs);
    if norm_b == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    matrix(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res = norm(&r) / norm_b;
    if res <= rel_tol {
        return Ok(CgOutcome {
            iterations: 0,
            residual: res,
        });
    }
    for it in 1..=max_iter {
        matrix(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::IndefiniteSystem { iteration: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / norm_b;
        if res <= rel_tol {
            return Ok(CgOutcome {
                iterations: it,
                residual: res,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        iterations: max_iter,
        residual: res,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        // Tridiagonal SPD matrix as 1x1 "blocks" with chain adjacency.
        let mut m = CsrMatrix::with_block_pattern(n, 1, |i| {
            let mut v = Vec::new();
            if i > 0 {
                v.push(i - 1);
            }
            if i + 1 < n {
                v.push(i + 1);
            }
            v
        });
        for i in 0..n {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        m
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 64;
        let a = laplacian_1d(n);
        let precond = BlockJacobi::new(&a, 1);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec_alloc(&x_true);
        let mut x = vec![0.0; n];
        let out = conjugate_gradient(
            &|v, y| a.matvec(v, y),
            &precond,
            &b,
            &mut x,
            1e-12,
            10_000,
        )
        .unwrap();
        assert!(out.residual <= 1e-12);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_indefinite_system() {
        let n = 8;
        let mut a = laplacian_1d(n);
        // Push an eigenvalue negative.
        for i in 0..n {
            a.add(i, i, -4.0);
        }
        let precond = BlockJacobi::new(&laplacian_1d(n), 1);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let err = conjugate_gradient(&|v, y| a.matvec(v, y), &precond, &b, &mut x, 1e-12, 100);
        assert!(matches!(err, Err(Error::IndefiniteSystem { .. })));
    }

    #[test]
    fn block_jacobi_inverts_block_diagonal_exactly() {
        let mut a = CsrMatrix::with_block_pattern(3, 2, |_| Vec::new());
        for b in 0..3 {
            let base = 2 * b;
            a.add(base, base, 2.0 + b as f64);
            a.add(base, base + 1, 0.5);
            a.add(base + 1, base, 0.5);
            a.add(base + 1, base + 1, 3.0);
        }
        let pc = BlockJacobi::new(&a, 2);
        let r: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let mut z = vec![0.0; 6];
        pc.apply(&r, &mut z);
        let back = a.matvec_alloc(&z);
        for i in 0..6 {
            assert!((back[i] - r[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetry_detects_nonsymmetric_values() {
        let mut a = laplacian_1d(4);
        assert!(a.max_asymmetry() < 1e-15);
        a.add(0, 1, 0.25);
        assert!((a.max_asymmetry() - 0.25).abs() < 1e-15);
    }
}
