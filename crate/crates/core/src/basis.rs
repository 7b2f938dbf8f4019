//! Modal polynomial basis on the reference triangle.
//!
//! The basis spans P_r and is orthonormalized in L2 over the reference
//! triangle, so element mass matrices are scaled identities (the scaling
//! is the Jacobian determinant of the affine element map). Orthonormal
//! functions are obtained by a Cholesky factorization of the analytic
//! monomial Gram matrix; for r <= 2 this is perfectly conditioned.
//!
//! Interpolation nodes are the vertices for r = 1 and vertices plus edge
//! midpoints for r = 2, ordered to match the mesh convention: node i is
//! vertex i, node 3+i is the midpoint of local edge i (from vertex i to
//! vertex i+1 mod 3).

use crate::quadrature::reference_monomial_integral;

#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub degree: usize,
    pub ndof: usize,
    /// Monomial exponents (a, b) for x^a y^b, graded ordering.
    powers: Vec<(u32, u32)>,
    /// Row i holds the monomial coefficients of basis function i.
    coeffs: Vec<f64>,
    /// Interpolation nodes on the reference triangle.
    pub nodes: Vec<[f64; 2]>,
    /// Inverse of the node Vandermonde V[i][j] = phi_j(node_i).
    node_matrix_inv: Vec<f64>,
}

impl ModalBasis {
    pub fn new(degree: usize) -> Self {
        assert!(
            (1..=2).contains(&degree),
            "polynomial degree must be 1 or 2, got {degree}"
        );
        let mut powers = Vec::new();
        for total in 0..=degree as u32 {
            for a in (0..=total).rev() {
                powers.push((a, total - a));
            }
        }
        let ndof = powers.len();

        // Gram matrix of the monomials over the reference triangle.
        let mut gram = vec![0.0; ndof * ndof];
        for i in 0..ndof {
            for j in 0..ndof {
                let (a, b) = (powers[i].0 + powers[j].0, powers[i].1 + powers[j].1);
                gram[i * ndof + j] = reference_monomial_integral(a, b);
            }
        }
        let lower = cholesky(&gram, ndof);
        // coeffs = L^{-1}: row i solves L x = e_i by forward substitution.
        let mut coeffs = vec![0.0; ndof * ndof];
        for i in 0..ndof {
            for j in 0..=i {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in j..i {
                    s -= lower[i * ndof + k] * coeffs[k * ndof + j];
                }
                coeffs[i * ndof + j] = s / lower[i * ndof + i];
            }
        }

        let nodes: Vec<[f64; 2]> = match degree {
            1 => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            _ => vec![
                [0.0, 0.0],
                [1.0, 0.0],
                [0.0, 1.0],
                [0.5, 0.0],
                [0.5, 0.5],
                [0.0, 0.5],
            ],
        };

        let mut basis = ModalBasis {
            degree,
            ndof,
            powers,
            coeffs,
            nodes,
            node_matrix_inv: Vec::new(),
        };
        let mut vander = vec![0.0; ndof * ndof];
        for (i, node) in basis.nodes.iter().enumerate() {
            for j in 0..ndof {
                vander[i * ndof + j] = basis.value(j, *node);
            }
        }
        basis.node_matrix_inv = invert_dense(&vander, ndof);
        basis
    }

    /// Value of basis function i at a reference point.
    pub fn value(&self, i: usize, p: [f64; 2]) -> f64 {
        let mut s = 0.0;
        for (j, &(a, b)) in self.powers.iter().enumerate() {
            let c = self.coeffs[i * self.ndof + j];
            if c != 0.0 {
                s += c * p[0].powi(a as i32) * p[1].powi(b as i32);
            }
        }
        s
    }

    /// Gradient of basis function i at a reference point.
    pub fn gradient(&self, i: usize, p: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for (j, &(a, b)) in self.powers.iter().enumerate() {
            let c = self.coeffs[i * self.ndof + j];
            if c == 0.0 {
                continue;
            }
            if a > 0 {
                g[0] += c * a as f64 * p[0].powi(a as i32 - 1) * p[1].powi(b as i32);
            }
            if b > 0 {
                g[1] += c * b as f64 * p[0].powi(a as i32) * p[1].powi(b as i32 - 1);
            }
        }
        g
    }

    /// All basis values at a point, written into `out`.
    pub fn values(&self, p: [f64; 2], out: &mut [f64]) {
        for i in 0..self.ndof {
            out[i] = self.value(i, p);
        }
    }

    /// Modal coefficients of the polynomial taking `node_values` at the
    /// interpolation nodes.
    pub fn coefficients_from_node_values(&self, node_values: &[f64], out: &mut [f64]) {
        for i in 0..self.ndof {
            let mut s = 0.0;
            for j in 0..self.ndof {
                s += self.node_matrix_inv[i * self.ndof + j] * node_values[j];
            }
            out[i] = s;
        }
    }

    /// Node values of the polynomial with the given modal coefficients.
    pub fn node_values_from_coefficients(&self, coeffs: &[f64]) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|&p| {
                (0..self.ndof)
                    .map(|j| coeffs[j] * self.value(j, p))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Cholesky factor (lower triangular) of a small SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

/// Gauss-Jordan inverse of a small dense matrix with partial pivoting.
pub fn invert_dense(a: &[f64], n: usize) -> Vec<f64> {
    let mut work = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if work[row * n + col].abs() > work[pivot * n + col].abs() {
                pivot = row;
            }
        }
        assert!(
            work[pivot * n + col].abs() > 1e-14,
            "singular matrix in inversion"
        );
        if pivot != col {
            for j in 0..n {
                work.swap(col * n + j, pivot * n + j);
                inv.swap(col * n + j, pivot * n + j);
            }
        }
        let d = work[col * n + col];
        for j in 0..n {
            work[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = work[row * n + col];
            if f != 0.0 {
                for j in 0..n {
                    work[row * n + j] -= f * work[col * n + j];
                    inv[row * n + j] -= f * inv[col * n + j];
                }
            }
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TriangleRule;

    #[test]
    fn basis_is_orthonormal_on_reference_triangle() {
        for degree in [1usize, 2] {
            let basis = ModalBasis::new(degree);
            let rule = TriangleRule::with_degree(2 * degree + 1);
            for i in 0..basis.ndof {
                for j in 0..basis.ndof {
                    let mut s = 0.0;
                    for (p, &w) in rule.points.iter().zip(&rule.weights) {
                        s += basis.value(i, *p) * basis.value(j, *p) * w;
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (s - expect).abs() < 1e-13,
                        "degree {degree} <phi_{i}, phi_{j}> = {s}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let basis = ModalBasis::new(2);
        let p = [0.31, 0.27];
        let h = 1e-6;
        for i in 0..basis.ndof {
            let g = basis.gradient(i, p);
            let fx = (basis.value(i, [p[0] + h, p[1]]) - basis.value(i, [p[0] - h, p[1]]))
                / (2.0 * h);
            let fy = (basis.value(i, [p[0], p[1] + h]) - basis.value(i, [p[0], p[1] - h]))
                / (2.0 * h);
            assert!((g[0] - fx).abs() < 1e-8);
            assert!((g[1] - fy).abs() < 1e-8);
        }
    }

    #[test]
    fn nodal_interpolation_reproduces_polynomials() {
        for degree in [1usize, 2] {
            let basis = ModalBasis::new(degree);
            // A polynomial of matching degree in physical form.
            let f = |p: [f64; 2]| {
                if degree == 1 {
                    1.5 - 2.0 * p[0] + 0.5 * p[1]
                } else {
                    1.5 - 2.0 * p[0] + 0.5 * p[1] + p[0] * p[1] - 3.0 * p[0] * p[0]
                }
            };
            let node_values: Vec<f64> = basis.nodes.iter().map(|&p| f(p)).collect();
            let mut coeffs = vec![0.0; basis.ndof];
            basis.coefficients_from_node_values(&node_values, &mut coeffs);
            for &p in &[[0.2, 0.3], [0.0, 0.0], [0.5, 0.5], [0.1, 0.85]] {
                let v: f64 = (0..basis.ndof).map(|j| coeffs[j] * basis.value(j, p)).sum();
                assert!((v - f(p)).abs() < 1e-13);
            }
        }
    }
}
