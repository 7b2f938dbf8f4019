//! Broken polynomial spaces V_h and the fields living in them.
//!
//! A `DgSpace` couples a mesh with a per-element modal basis and the
//! quadrature rules used throughout the solver. Element rules are exact
//! for total degree 3r+1 so the quartic double-well term is integrated
//! exactly for linear elements; face rules are exact for degree 2r+1.
//! A `DgField` is one member of V_h: a flat coefficient vector in
//! element-major blocks.
//!
//! Trace conventions on a face e with owner K and neighbor K' (owner has
//! the smaller element index): the jump is [v] = v|_K - v|_{K'} and the
//! average {v} = (v|_K + v|_{K'}) / 2 on interior faces, while on boundary
//! faces both reduce to the single trace.

use std::sync::Arc;

use crate::basis::ModalBasis;
use crate::error::{Error, Result};
use crate::mesh::{FaceKind, Mesh};
use crate::quadrature::{EdgeRule, TriangleRule};

/// Affine map data of one element: x = origin + B r.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub origin: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub b_inv: [[f64; 2]; 2],
    /// det B = 2 |K| (positive for CCW elements).
    pub det: f64,
}

impl ElementGeometry {
    pub fn to_physical(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.b[0][0] * r[0] + self.b[0][1] * r[1],
            self.origin[1] + self.b[1][0] * r[0] + self.b[1][1] * r[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.b_inv[0][0] * d[0] + self.b_inv[0][1] * d[1],
            self.b_inv[1][0] * d[0] + self.b_inv[1][1] * d[1],
        ]
    }

    /// Push a reference gradient forward: grad_x = B^{-T} grad_r.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.b_inv[0][0] * g[0] + self.b_inv[1][0] * g[1],
            self.b_inv[0][1] * g[0] + self.b_inv[1][1] * g[1],
        ]
    }
}

#[derive(Debug)]
pub struct DgSpace {
    pub mesh: Arc<Mesh>,
    pub basis: ModalBasis,
    pub element_rule: TriangleRule,
    pub face_rule: EdgeRule,
    geometry: Vec<ElementGeometry>,
    /// Basis values at element quadrature points, q-major.
    elem_phi: Vec<f64>,
    /// Reference-space basis gradients at element quadrature points.
    elem_grad: Vec<[f64; 2]>,
    /// Basis values on local edge `le` at face quadrature parameter t_q
    /// (forward) and 1 - t_q (reverse, used by the neighbor side).
    edge_phi: [Vec<f64>; 3],
    edge_phi_rev: [Vec<f64>; 3],
    edge_grad: [Vec<[f64; 2]>; 3],
    edge_grad_rev: [Vec<[f64; 2]>; 3],
}

impl DgSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Arc<DgSpace> {
        let basis = ModalBasis::new(degree);
        let element_rule = TriangleRule::with_degree(3 * degree + 1);
        let face_rule = EdgeRule::with_degree(2 * degree + 1);

        let geometry: Vec<ElementGeometry> = (0..mesh.n_elements())
            .map(|e| {
                let [a, b, c] = mesh.element_vertices(e);
                let m = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let inv = [
                    [m[1][1] / det, -m[0][1] / det],
                    [-m[1][0] / det, m[0][0] / det],
                ];
                ElementGeometry {
                    origin: a,
                    b: m,
                    b_inv: inv,
                    det,
                }
            })
            .collect();

        let ndof = basis.ndof;
        let mut elem_phi = vec![0.0; element_rule.len() * ndof];
        let mut elem_grad = vec![[0.0; 2]; element_rule.len() * ndof];
        for (q, &p) in element_rule.points.iter().enumerate() {
            for i in 0..ndof {
                elem_phi[q * ndof + i] = basis.value(i, p);
                elem_grad[q * ndof + i] = basis.gradient(i, p);
            }
        }

        let edge_point = |le: usize, t: f64| -> [f64; 2] {
            match le {
                0 => [t, 0.0],
                1 => [1.0 - t, t],
                _ => [0.0, 1.0 - t],
            }
        };
        let mut edge_phi: [Vec<f64>; 3] = Default::default();
        let mut edge_phi_rev: [Vec<f64>; 3] = Default::default();
        let mut edge_grad: [Vec<[f64; 2]>; 3] = Default::default();
        let mut edge_grad_rev: [Vec<[f64; 2]>; 3] = Default::default();
        for le in 0..3 {
            for &t in &face_rule.points {
                for (table, param) in [(&mut edge_phi, t), (&mut edge_phi_rev, 1.0 - t)] {
                    let p = edge_point(le, param);
                    for i in 0..ndof {
                        table[le].push(basis.value(i, p));
                    }
                }
                for (table, param) in [(&mut edge_grad, t), (&mut edge_grad_rev, 1.0 - t)] {
                    let p = edge_point(le, param);
                    for i in 0..ndof {
                        table[le].push(basis.gradient(i, p));
                    }
                }
            }
        }

        Arc::new(DgSpace {
            mesh,
            basis,
            element_rule,
            face_rule,
            geometry,
            elem_phi,
            elem_grad,
            edge_phi,
            edge_phi_rev,
            edge_grad,
            edge_grad_rev,
        })
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn dofs_per_element(&self) -> usize {
        self.basis.ndof
    }

    pub fn total_dofs(&self) -> usize {
        self.basis.ndof * self.mesh.n_elements()
    }

    pub fn geometry(&self, e: usize) -> &ElementGeometry {
        &self.geometry[e]
    }

    /// Basis values at element quadrature point q.
    pub fn phi_at(&self, q: usize) -> &[f64] {
        let n = self.basis.ndof;
        &self.elem_phi[q * n..(q + 1) * n]
    }

    /// Reference basis gradients at element quadrature point q.
    pub fn grad_ref_at(&self, q: usize) -> &[[f64; 2]] {
        let n = self.basis.ndof;
        &self.elem_grad[q * n..(q + 1) * n]
    }

    /// Basis values on a local edge at face quadrature index q; `reverse`
    /// selects the neighbor-side parametrization.
    pub fn edge_phi_at(&self, le: usize, reverse: bool, q: usize) -> &[f64] {
        let n = self.basis.ndof;
        let table = if reverse {
            &self.edge_phi_rev[le]
        } else {
            &self.edge_phi[le]
        };
        &table[q * n..(q + 1) * n]
    }

    pub fn edge_grad_at(&self, le: usize, reverse: bool, q: usize) -> &[[f64; 2]] {
        let n = self.basis.ndof;
        let table = if reverse {
            &self.edge_grad_rev[le]
        } else {
            &self.edge_grad[le]
        };
        &table[q * n..(q + 1) * n]
    }

    /// Element-local nodal interpolation of a scalar function. Exact for
    /// polynomials of degree <= r.
    pub fn interpolate(
        self: &Arc<Self>,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Result<DgField> {
        let ndof = self.basis.ndof;
        let mut coeffs = vec![0.0; self.total_dofs()];
        let mut node_values = vec![0.0; ndof];
        for e in 0..self.mesh.n_elements() {
            let geom = &self.geometry[e];
            for (i, &node) in self.basis.nodes.iter().enumerate() {
                let v = f(geom.to_physical(node));
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("interpolation node of element {e}"),
                    });
                }
                node_values[i] = v;
            }
            self.basis
                .coefficients_from_node_values(&node_values, &mut coeffs[e * ndof..(e + 1) * ndof]);
        }
        Ok(DgField {
            space: Arc::clone(self),
            coeffs,
        })
    }

    pub fn zero_field(self: &Arc<Self>) -> DgField {
        DgField {
            space: Arc::clone(self),
            coeffs: vec![0.0; self.total_dofs()],
        }
    }

    pub fn constant_field(self: &Arc<Self>, value: f64) -> DgField {
        self.interpolate(|_| value).expect("constant is finite")
    }

    /// Physical coordinates of face quadrature point q on a face.
    pub fn face_quad_point(&self, face: usize, q: usize) -> [f64; 2] {
        let f = &self.mesh.faces[face];
        let a = self.mesh.vertices[f.vertices[0]];
        let b = self.mesh.vertices[f.vertices[1]];
        let t = self.face_rule.points[q];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

#[derive(Debug, Clone)]
pub struct DgField {
    pub space: Arc<DgSpace>,
    pub coeffs: Vec<f64>,
}

impl DgField {
    pub fn from_coefficients(space: Arc<DgSpace>, coeffs: Vec<f64>) -> DgField {
        assert_eq!(
            coeffs.len(),
            space.total_dofs(),
            "coefficient vector length does not match the space"
        );
        DgField { space, coeffs }
    }

    fn block(&self, e: usize) -> &[f64] {
        let n = self.space.basis.ndof;
        &self.coeffs[e * n..(e + 1) * n]
    }

    /// Value at a reference point of an element. Point evaluation touches
    /// only that element's coefficient block.
    pub fn evaluate(&self, element: usize, r: [f64; 2]) -> f64 {
        assert!(
            element < self.space.mesh.n_elements(),
            "element index {element} out of range"
        );
        let block = self.block(element);
        (0..block.len())
            .map(|i| block[i] * self.space.basis.value(i, r))
            .sum()
    }

    /// Gradient (physical coordinates) at a reference point of an element.
    pub fn gradient(&self, element: usize, r: [f64; 2]) -> [f64; 2] {
        let block = self.block(element);
        let mut g = [0.0, 0.0];
        for (i, &c) in block.iter().enumerate() {
            let gr = self.space.basis.gradient(i, r);
            g[0] += c * gr[0];
            g[1] += c * gr[1];
        }
        self.space.geometry(element).push_gradient(g)
    }

    /// Value at a physical point; `None` outside the mesh. An optional
    /// nudge direction disambiguates points lying on element interfaces by
    /// locating the element slightly offset in that direction while still
    /// evaluating at `x` itself.
    pub fn eval_physical(&self, x: [f64; 2], nudge: Option<[f64; 2]>) -> Option<f64> {
        let probe = match nudge {
            Some(d) => {
                let s = 1e-10 * self.space.mesh.mesh_size;
                [x[0] + s * d[0], x[1] + s * d[1]]
            }
            None => x,
        };
        let (e, _) = self.space.mesh.locate(probe)?;
        Some(self.evaluate(e, self.space.geometry(e).to_reference(x)))
    }

    pub fn grad_physical(&self, x: [f64; 2], nudge: Option<[f64; 2]>) -> Option<[f64; 2]> {
        let probe = match nudge {
            Some(d) => {
                let s = 1e-10 * self.space.mesh.mesh_size;
                [x[0] + s * d[0], x[1] + s * d[1]]
            }
            None => x,
        };
        let (e, _) = self.space.mesh.locate(probe)?;
        Some(self.gradient(e, self.space.geometry(e).to_reference(x)))
    }

    /// Jump [v] and average {v} at parameter t in [0,1] along a face.
    pub fn jump_average(&self, face: usize, t: f64) -> (f64, f64) {
        let f = &self.space.mesh.faces[face];
        let edge_point = |le: usize, s: f64| -> [f64; 2] {
            match le {
                0 => [s, 0.0],
                1 => [1.0 - s, s],
                _ => [0.0, 1.0 - s],
            }
        };
        let owner_val = self.evaluate(f.owner, edge_point(f.owner_edge as usize, t));
        match f.kind {
            FaceKind::Boundary => (owner_val, owner_val),
            FaceKind::Interior => {
                let neighbor = f.neighbor.unwrap();
                let le = f.neighbor_edge.unwrap() as usize;
                // The neighbor traverses the shared edge in reverse.
                let neighbor_val = self.evaluate(neighbor, edge_point(le, 1.0 - t));
                (owner_val - neighbor_val, 0.5 * (owner_val + neighbor_val))
            }
        }
    }

    /// L2 norm over the broken mesh, by element quadrature.
    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    pub fn l2_inner(&self, other: &DgField) -> f64 {
        let space = &self.space;
        let ndof = space.basis.ndof;
        let mut total = 0.0;
        for e in 0..space.mesh.n_elements() {
            let det = space.geometry(e).det;
            let a = self.block(e);
            let b = other.block(e);
            for q in 0..space.element_rule.len() {
                let phi = space.phi_at(q);
                let mut va = 0.0;
                let mut vb = 0.0;
                for i in 0..ndof {
                    va += a[i] * phi[i];
                    vb += b[i] * phi[i];
                }
                total += space.element_rule.weights[q] * det * va * vb;
            }
        }
        total
    }

    /// Broken H1 seminorm squared: sum_K |grad v|^2 (no jump terms).
    pub fn broken_h1_seminorm_sq(&self) -> f64 {
        let space = &self.space;
        let ndof = space.basis.ndof;
        let mut total = 0.0;
        for e in 0..space.mesh.n_elements() {
            let geom = space.geometry(e);
            let block = self.block(e);
            for q in 0..space.element_rule.len() {
                let grads = space.grad_ref_at(q);
                let mut g = [0.0, 0.0];
                for i in 0..ndof {
                    g[0] += block[i] * grads[i][0];
                    g[1] += block[i] * grads[i][1];
                }
                let gx = geom.push_gradient(g);
                total += space.element_rule.weights[q] * geom.det * (gx[0] * gx[0] + gx[1] * gx[1]);
            }
        }
        total
    }

    /// In-place linear update self += alpha * other.
    pub fn add_scaled(&mut self, alpha: f64, other: &DgField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    /// Difference self - other as a new field.
    pub fn difference(&self, other: &DgField) -> DgField {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }
}
