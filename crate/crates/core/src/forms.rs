//! IPDG bilinear forms, mass matrices, mesh-dependent energies, and the
//! DG elliptic projection.
//!
//! The primal form on the broken space is
//!
//!   a_h(u, v) = (∇u, ∇v)_T − <{∂_n u}, [v]>_Ei + λ <[u], {∂_n v}>_Ei + j_h(u, v)
//!
//! with the jump penalty j_h(u, v) = Σ_e (σ_e / h_e) <[u], [v]>_e. All face
//! sums run over interior faces only; boundary faces carry no consistency
//! and no penalty terms, which realizes the homogeneous Neumann condition
//! weakly. λ = -1 gives the symmetric variant (the one with the energy
//! structure), λ = 0 the incomplete and λ = +1 the nonsymmetric variant.
//!
//! The mesh-dependent energies are
//!
//!   Φ(v)   = ½ ||∇v||² − <{∂_n v}, [v]>_Ei + ½ j_h(v, v)
//!   J_ε(v) = Φ(v) + ε⁻² ∫ F(v),      F(v)  = ¼ (v² − 1)²
//!   I_ε(v) = Φ(v) + ε⁻² ∫ F_c⁺(v),   F_c⁺(v) = ¼ (v⁴ + 1)
//!
//! and the elliptic projection P v ∈ V_h is defined by
//! a_h(v − P v, w) + (v − P v, w) = 0 for all w ∈ V_h, assembled with λ = -1
//! and solved by preconditioned conjugate gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::space::{DgField, DgSpace};
use crate::sparse::{conjugate_gradient, BlockJacobi, CsrMatrix};

/// Scalar function of position with an available gradient; used for
/// initial data and projection targets.
pub trait ScalarField: Sync {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
}

/// Closure-backed `ScalarField`.
pub struct FnField<V, G>
where
    V: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    pub value: V,
    pub gradient: G,
}

impl<V, G> ScalarField for FnField<V, G>
where
    V: Fn([f64; 2]) -> f64 + Sync,
    G: Fn([f64; 2]) -> [f64; 2] + Sync,
{
    fn value(&self, x: [f64; 2]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        (self.gradient)(x)
    }
}

/// Positive piecewise-constant penalty σ_e on interior faces, stored per
/// face index (boundary slots are unused).
#[derive(Debug, Clone)]
pub struct Penalty {
    values: Vec<f64>,
}

impl Penalty {
    pub fn uniform(mesh: &Mesh, sigma: f64) -> Result<Penalty> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty must be positive, got {sigma}"
            )));
        }
        Ok(Penalty {
            values: vec![sigma; mesh.faces.len()],
        })
    }

    pub fn per_face(mesh: &Mesh, values: Vec<f64>) -> Result<Penalty> {
        if values.len() != mesh.faces.len() {
            return Err(Error::InvalidParameter(
                "penalty vector length does not match the face count".into(),
            ));
        }
        for &f in &mesh.interior_faces {
            if !(values[f] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "penalty on interior face {f} must be positive, got {}",
                    values[f]
                )));
            }
        }
        Ok(Penalty { values })
    }

    pub fn value(&self, face: usize) -> f64 {
        self.values[face]
    }
}

/// Default penalty for degree r elements.
pub fn default_penalty_value(degree: usize) -> f64 {
    10.0 * (degree * degree) as f64
}

/// An assembled bilinear form together with the switches it was built
/// with: v' A u = a_h(u, v) over coefficient vectors.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub matrix: CsrMatrix,
    pub lambda: f64,
    pub penalty: Penalty,
}

/// Zero matrix with the DG coupling pattern (element blocks plus
/// face-neighbor blocks).
pub fn coupled_pattern(space: &DgSpace) -> CsrMatrix {
    let mesh = &space.mesh;
    CsrMatrix::with_block_pattern(mesh.n_elements(), space.dofs_per_element(), |e| {
        mesh.element_faces[e]
            .iter()
            .filter_map(|&f| {
                let face = &mesh.faces[f];
                if face.owner == e {
                    face.neighbor
                } else {
                    Some(face.owner)
                }
            })
            .collect()
    })
}

/// Zero matrix with the element-block-diagonal pattern.
pub fn block_diagonal_pattern(space: &DgSpace) -> CsrMatrix {
    CsrMatrix::with_block_pattern(space.mesh.n_elements(), space.dofs_per_element(), |_| {
        Vec::new()
    })
}

/// Trace data of one side of a face at the quadrature points: basis
/// values and normal derivatives with respect to the face normal n_e.
struct SideTraces {
    element: usize,
    /// values[q * ndof + i]
    values: Vec<f64>,
    normal_derivs: Vec<f64>,
}

fn side_traces(space: &DgSpace, face_idx: usize) -> (SideTraces, Option<SideTraces>) {
    let face = &space.mesh.faces[face_idx];
    let nq = space.face_rule.len();
    let ndof = space.dofs_per_element();
    let make = |element: usize, le: usize, reverse: bool| {
        let geom = space.geometry(element);
        let mut values = vec![0.0; nq * ndof];
        let mut normal_derivs = vec![0.0; nq * ndof];
        for q in 0..nq {
            let phi = space.edge_phi_at(le, reverse, q);
            let grads = space.edge_grad_at(le, reverse, q);
            for i in 0..ndof {
                values[q * ndof + i] = phi[i];
                let g = geom.push_gradient(grads[i]);
                normal_derivs[q * ndof + i] = face.normal[0] * g[0] + face.normal[1] * g[1];
            }
        }
        SideTraces {
            element,
            values,
            normal_derivs,
        }
    };
    let owner = make(face.owner, face.owner_edge as usize, false);
    let neighbor = face
        .neighbor
        .map(|nb| make(nb, face.neighbor_edge.unwrap() as usize, true));
    (owner, neighbor)
}

/// Assembles a_h with the given λ switch and penalty.
pub fn assemble_stiffness(
    space: &Arc<DgSpace>,
    lambda: f64,
    penalty: &Penalty,
) -> Result<AssembledForm> {
    for &f in &space.mesh.interior_faces {
        if !(penalty.value(f) > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty on interior face {f} must be positive"
            )));
        }
    }
    let ndof = space.dofs_per_element();
    let mut matrix = coupled_pattern(space);

    // Volume gradients.
    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        let base = e * ndof;
        for q in 0..space.element_rule.len() {
            let w = space.element_rule.weights[q] * geom.det;
            let grads = space.grad_ref_at(q);
            // Push all gradients once per point.
            let phys: Vec<[f64; 2]> = grads.iter().map(|&g| geom.push_gradient(g)).collect();
            for i in 0..ndof {
                for j in 0..ndof {
                    matrix.add(
                        base + i,
                        base + j,
                        w * (phys[i][0] * phys[j][0] + phys[i][1] * phys[j][1]),
                    );
                }
            }
        }
    }

    // Interior face terms.
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let sigma_over_h = penalty.value(f) / face.length;
        let (owner, neighbor) = side_traces(space, f);
        let neighbor = neighbor.expect("interior face has a neighbor");
        let sides = [(&owner, 1.0), (&neighbor, -1.0)];
        for q in 0..space.face_rule.len() {
            let w = space.face_rule.weights[q] * face.length;
            for (side_i, jump_sign_i) in sides {
                for (side_j, jump_sign_j) in sides {
                    let base_i = side_i.element * ndof;
                    let base_j = side_j.element * ndof;
                    for i in 0..ndof {
                        let jump_v = jump_sign_i * side_i.values[q * ndof + i];
                        let avg_dn_v = 0.5 * side_i.normal_derivs[q * ndof + i];
                        for j in 0..ndof {
                            let jump_u = jump_sign_j * side_j.values[q * ndof + j];
                            let avg_dn_u = 0.5 * side_j.normal_derivs[q * ndof + j];
                            let value = w
                                * (-avg_dn_u * jump_v
                                    + lambda * jump_u * avg_dn_v
                                    + sigma_over_h * jump_u * jump_v);
                            matrix.add(base_i + i, base_j + j, value);
                        }
                    }
                }
            }
        }
    }

    Ok(AssembledForm {
        matrix,
        lambda,
        penalty: penalty.clone(),
    })
}

/// Assembles the broken L2 mass matrix (block diagonal).
pub fn assemble_mass(space: &Arc<DgSpace>) -> CsrMatrix {
    let ndof = space.dofs_per_element();
    let mut matrix = block_diagonal_pattern(space);
    for e in 0..space.mesh.n_elements() {
        let det = space.geometry(e).det;
        let base = e * ndof;
        for q in 0..space.element_rule.len() {
            let w = space.element_rule.weights[q] * det;
            let phi = space.phi_at(q);
            for i in 0..ndof {
                for j in 0..ndof {
                    matrix.add(base + i, base + j, w * phi[i] * phi[j]);
                }
            }
        }
    }
    matrix
}

/// Assembles the weighted mass matrix with entries ∫ w(x) φ_i φ_j, where
/// the weight is sampled at element quadrature points.
pub fn assemble_weighted_mass(
    space: &Arc<DgSpace>,
    mut weight: impl FnMut(usize, usize, [f64; 2]) -> f64,
) -> CsrMatrix {
    let ndof = space.dofs_per_element();
    let mut matrix = block_diagonal_pattern(space);
    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        let base = e * ndof;
        for q in 0..space.element_rule.len() {
            let x = geom.to_physical(space.element_rule.points[q]);
            let w = space.element_rule.weights[q] * geom.det * weight(e, q, x);
            let phi = space.phi_at(q);
            for i in 0..ndof {
                for j in 0..ndof {
                    matrix.add(base + i, base + j, w * phi[i] * phi[j]);
                }
            }
        }
    }
    matrix
}

/// Load vector (g, φ_i) with g sampled at element quadrature points.
pub fn load_vector(
    space: &Arc<DgSpace>,
    mut g: impl FnMut(usize, usize, [f64; 2]) -> f64,
) -> Vec<f64> {
    let ndof = space.dofs_per_element();
    let mut out = vec![0.0; space.total_dofs()];
    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        let base = e * ndof;
        for q in 0..space.element_rule.len() {
            let x = geom.to_physical(space.element_rule.points[q]);
            let w = space.element_rule.weights[q] * geom.det * g(e, q, x);
            let phi = space.phi_at(q);
            for i in 0..ndof {
                out[base + i] += w * phi[i];
            }
        }
    }
    out
}

/// Values of a field at all element quadrature points, element-major.
pub fn values_at_quadrature(space: &DgSpace, coeffs: &[f64]) -> Vec<f64> {
    let ndof = space.dofs_per_element();
    let nq = space.element_rule.len();
    let mut out = vec![0.0; space.mesh.n_elements() * nq];
    for e in 0..space.mesh.n_elements() {
        let block = &coeffs[e * ndof..(e + 1) * ndof];
        for q in 0..nq {
            let phi = space.phi_at(q);
            let mut v = 0.0;
            for i in 0..ndof {
                v += block[i] * phi[i];
            }
            out[e * nq + q] = v;
        }
    }
    out
}

/// Direct quadrature evaluation of a_h(u, v); the independent route used
/// to cross-check the assembled matrix.
pub fn a_h_quadrature(u: &DgField, v: &DgField, lambda: f64, penalty: &Penalty) -> f64 {
    let space = &u.space;
    let ndof = space.dofs_per_element();
    let mut total = 0.0;

    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        let ub = &u.coeffs[e * ndof..(e + 1) * ndof];
        let vb = &v.coeffs[e * ndof..(e + 1) * ndof];
        for q in 0..space.element_rule.len() {
            let grads = space.grad_ref_at(q);
            let mut gu = [0.0, 0.0];
            let mut gv = [0.0, 0.0];
            for i in 0..ndof {
                gu[0] += ub[i] * grads[i][0];
                gu[1] += ub[i] * grads[i][1];
                gv[0] += vb[i] * grads[i][0];
                gv[1] += vb[i] * grads[i][1];
            }
            let gu = geom.push_gradient(gu);
            let gv = geom.push_gradient(gv);
            total += space.element_rule.weights[q] * geom.det * (gu[0] * gv[0] + gu[1] * gv[1]);
        }
    }

    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let sigma_over_h = penalty.value(f) / face.length;
        let (owner, neighbor) = side_traces(space, f);
        let neighbor = neighbor.unwrap();
        for q in 0..space.face_rule.len() {
            let w = space.face_rule.weights[q] * face.length;
            let trace = |side: &SideTraces, coeffs: &[f64]| {
                let block = &coeffs[side.element * ndof..(side.element + 1) * ndof];
                let mut val = 0.0;
                let mut dn = 0.0;
                for i in 0..ndof {
                    val += block[i] * side.values[q * ndof + i];
                    dn += block[i] * side.normal_derivs[q * ndof + i];
                }
                (val, dn)
            };
            let (u_o, dnu_o) = trace(&owner, &u.coeffs);
            let (u_n, dnu_n) = trace(&neighbor, &u.coeffs);
            let (v_o, dnv_o) = trace(&owner, &v.coeffs);
            let (v_n, dnv_n) = trace(&neighbor, &v.coeffs);
            let jump_u = u_o - u_n;
            let jump_v = v_o - v_n;
            let avg_dnu = 0.5 * (dnu_o + dnu_n);
            let avg_dnv = 0.5 * (dnv_o + dnv_n);
            total += w
                * (-avg_dnu * jump_v + lambda * jump_u * avg_dnv + sigma_over_h * jump_u * jump_v);
        }
    }
    total
}

/// Jump penalty j_h(u, u) >= 0.
pub fn jump_penalty(u: &DgField, penalty: &Penalty) -> f64 {
    let space = &u.space;
    let mut total = 0.0;
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let sigma_over_h = penalty.value(f) / face.length;
        for q in 0..space.face_rule.len() {
            let t = space.face_rule.points[q];
            let (jump, _) = u.jump_average(f, t);
            total += space.face_rule.weights[q] * face.length * sigma_over_h * jump * jump;
        }
    }
    total
}

/// DG H1 norm squared: ||∇v||² + j_h(v, v), the norm the coercivity
/// bound and the error tables are stated in.
pub fn h1_dg_norm_sq(u: &DgField, penalty: &Penalty) -> f64 {
    u.broken_h1_seminorm_sq() + jump_penalty(u, penalty)
}

/// The gradient-plus-consistency energy Φ(v), evaluated by quadrature
/// independently of any assembled matrix.
pub fn dirichlet_energy(u: &DgField, penalty: &Penalty) -> f64 {
    let space = &u.space;
    let ndof = space.dofs_per_element();
    let mut total = 0.5 * u.broken_h1_seminorm_sq();
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let sigma_over_h = penalty.value(f) / face.length;
        let (owner, neighbor) = side_traces(space, f);
        let neighbor = neighbor.unwrap();
        for q in 0..space.face_rule.len() {
            let w = space.face_rule.weights[q] * face.length;
            let trace = |side: &SideTraces| {
                let block = &u.coeffs[side.element * ndof..(side.element + 1) * ndof];
                let mut val = 0.0;
                let mut dn = 0.0;
                for i in 0..ndof {
                    val += block[i] * side.values[q * ndof + i];
                    dn += block[i] * side.normal_derivs[q * ndof + i];
                }
                (val, dn)
            };
            let (u_o, dn_o) = trace(&owner);
            let (u_n, dn_n) = trace(&neighbor);
            let jump = u_o - u_n;
            let avg_dn = 0.5 * (dn_o + dn_n);
            total += w * (-avg_dn * jump + 0.5 * sigma_over_h * jump * jump);
        }
    }
    total
}

/// The Ginzburg-Landau double well F(u) = ¼ (u² − 1)².
pub fn double_well(u: f64) -> f64 {
    let s = u * u - 1.0;
    0.25 * s * s
}

/// f = F' = (u² − 1) u.
pub fn double_well_deriv(u: f64) -> f64 {
    (u * u - 1.0) * u
}

/// Convex part F_c⁺(u) = ¼ (u⁴ + 1) of the splitting F = F_c⁺ − F_c⁻.
pub fn convex_plus(u: f64) -> f64 {
    0.25 * (u * u * u * u + 1.0)
}

/// Concave-compensating part F_c⁻(u) = ½ u².
pub fn convex_minus(u: f64) -> f64 {
    0.5 * u * u
}

/// ∫ g(u) over the broken mesh for a pointwise composition g.
pub fn composed_integral(u: &DgField, g: impl Fn(f64) -> f64) -> f64 {
    let space = &u.space;
    let values = values_at_quadrature(space, &u.coeffs);
    let nq = space.element_rule.len();
    let mut total = 0.0;
    for e in 0..space.mesh.n_elements() {
        let det = space.geometry(e).det;
        for q in 0..nq {
            total += space.element_rule.weights[q] * det * g(values[e * nq + q]);
        }
    }
    total
}

/// J_ε(u) = Φ(u) + ε⁻² ∫ F(u).
pub fn ginzburg_landau_energy(u: &DgField, eps: f64, penalty: &Penalty) -> f64 {
    assert!(eps > 0.0, "interface width must be positive, got {eps}");
    dirichlet_energy(u, penalty) + composed_integral(u, double_well) / (eps * eps)
}

/// I_ε(u) = Φ(u) + ε⁻² ∫ F_c⁺(u).
pub fn convex_energy(u: &DgField, eps: f64, penalty: &Penalty) -> f64 {
    assert!(eps > 0.0, "interface width must be positive, got {eps}");
    dirichlet_energy(u, penalty) + composed_integral(u, convex_plus) / (eps * eps)
}

/// Right-hand side a_h(v, φ_i) + (v, φ_i) for a continuous function v
/// with an available gradient ([v] = 0 across faces, so only the
/// consistency term -<∂_n v, [φ_i]> survives on faces).
fn projection_rhs(space: &Arc<DgSpace>, v: &dyn ScalarField) -> Vec<f64> {
    let ndof = space.dofs_per_element();
    let mut rhs = vec![0.0; space.total_dofs()];
    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        let base = e * ndof;
        for q in 0..space.element_rule.len() {
            let x = geom.to_physical(space.element_rule.points[q]);
            let w = space.element_rule.weights[q] * geom.det;
            let val = v.value(x);
            let grad = v.gradient(x);
            let phi = space.phi_at(q);
            let grads = space.grad_ref_at(q);
            for i in 0..ndof {
                let gi = geom.push_gradient(grads[i]);
                rhs[base + i] += w * (grad[0] * gi[0] + grad[1] * gi[1] + val * phi[i]);
            }
        }
    }
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let (owner, neighbor) = side_traces(space, f);
        let neighbor = neighbor.unwrap();
        for q in 0..space.face_rule.len() {
            let x = space.face_quad_point(f, q);
            let w = space.face_rule.weights[q] * face.length;
            let g = v.gradient(x);
            let dn_v = face.normal[0] * g[0] + face.normal[1] * g[1];
            for (side, jump_sign) in [(&owner, 1.0), (&neighbor, -1.0)] {
                let base = side.element * ndof;
                for i in 0..ndof {
                    rhs[base + i] += w * (-dn_v) * jump_sign * side.values[q * ndof + i];
                }
            }
        }
    }
    rhs
}

fn projection_solve(space: &Arc<DgSpace>, penalty: &Penalty, rhs: &[f64]) -> Result<DgField> {
    let stiffness = assemble_stiffness(space, -1.0, penalty)?;
    let mass = assemble_mass(space);
    let mut system = stiffness.matrix;
    system.add_scaled(1.0, &mass);
    let precond = BlockJacobi::new(&system, space.dofs_per_element());
    let mut x = vec![0.0; rhs.len()];
    conjugate_gradient(
        &|v, y| system.matvec(v, y),
        &precond,
        rhs,
        &mut x,
        1e-12,
        20 * rhs.len().max(200),
    )?;
    Ok(DgField::from_coefficients(Arc::clone(space), x))
}

/// DG elliptic projection of a continuous function.
pub fn elliptic_projection_fn(
    space: &Arc<DgSpace>,
    penalty: &Penalty,
    v: &dyn ScalarField,
) -> Result<DgField> {
    let rhs = projection_rhs(space, v);
    projection_solve(space, penalty, &rhs)
}

/// DG elliptic projection of a broken field (the identity on V_h, up to
/// the solver tolerance; useful as a consistency check).
pub fn elliptic_projection_field(
    space: &Arc<DgSpace>,
    penalty: &Penalty,
    v: &DgField,
) -> Result<DgField> {
    let stiffness = assemble_stiffness(space, -1.0, penalty)?;
    let mass = assemble_mass(space);
    let mut rhs = stiffness.matrix.matvec_alloc(&v.coeffs);
    let mv = mass.matvec_alloc(&v.coeffs);
    for (r, m) in rhs.iter_mut().zip(&mv) {
        *r += m;
    }
    projection_solve(space, penalty, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn space(n: usize, degree: usize) -> Arc<DgSpace> {
        let mesh = Arc::new(Mesh::rectangle([-1.0, -1.0], [1.0, 1.0], n).unwrap());
        DgSpace::new(mesh, degree)
    }

    fn sigma(space: &DgSpace) -> Penalty {
        Penalty::uniform(&space.mesh, default_penalty_value(space.degree())).unwrap()
    }

    #[test]
    fn constants_lie_in_the_stiffness_kernel() {
        let s = space(4, 1);
        let form = assemble_stiffness(&s, -1.0, &sigma(&s)).unwrap();
        let ones = s.constant_field(2.5);
        let y = form.matrix.matvec_alloc(&ones.coeffs);
        let worst = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-11 * form.matrix.max_abs(), "kernel defect {worst}");
    }

    #[test]
    fn symmetric_variant_is_symmetric() {
        let s = space(3, 1);
        let penalty = sigma(&s);
        let sym = assemble_stiffness(&s, -1.0, &penalty).unwrap();
        assert!(sym.matrix.max_asymmetry() <= 1e-12 * sym.matrix.max_abs());
    }

    #[test]
    fn nonsymmetric_variant_symmetrizes_to_gradient_plus_penalty() {
        // a⁺(u,v) + a⁺(v,u) = 2 (∇u, ∇v) + 2 j_h(u, v): the consistency
        // terms cancel in the symmetrization.
        let s = space(3, 1);
        let penalty = sigma(&s);
        let nonsym = assemble_stiffness(&s, 1.0, &penalty).unwrap();
        let mut state = 0xdeadbeef_u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..10 {
            let u = DgField::from_coefficients(
                Arc::clone(&s),
                (0..s.total_dofs()).map(|_| next()).collect(),
            );
            let v = DgField::from_coefficients(
                Arc::clone(&s),
                (0..s.total_dofs()).map(|_| next()).collect(),
            );
            let au = nonsym.matrix.matvec_alloc(&u.coeffs);
            let av = nonsym.matrix.matvec_alloc(&v.coeffs);
            let a_uv: f64 = v.coeffs.iter().zip(&au).map(|(a, b)| a * b).sum();
            let a_vu: f64 = u.coeffs.iter().zip(&av).map(|(a, b)| a * b).sum();
            let mut sum_field = u.clone();
            sum_field.add_scaled(1.0, &v);
            // Polarization: b(u,v) = (b(u+v,u+v) - b(u,u) - b(v,v)) / 2.
            let grad_inner = 0.5
                * (sum_field.broken_h1_seminorm_sq()
                    - u.broken_h1_seminorm_sq()
                    - v.broken_h1_seminorm_sq());
            let j_bilinear = 0.5
                * (jump_penalty(&sum_field, &penalty)
                    - jump_penalty(&u, &penalty)
                    - jump_penalty(&v, &penalty));
            let lhs = a_uv + a_vu;
            let rhs = 2.0 * grad_inner + 2.0 * j_bilinear;
            assert!(
                (lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn assembled_form_matches_direct_quadrature() {
        let s = space(3, 2);
        let penalty = sigma(&s);
        let u = s.interpolate(|x| (x[0] * 1.7 - x[1]).sin()).unwrap();
        let v = s.interpolate(|x| x[0] * x[1] + 0.5 * x[1]).unwrap();
        for lambda in [-1.0, 0.0, 1.0] {
            let form = assemble_stiffness(&s, lambda, &penalty).unwrap();
            let au = form.matrix.matvec_alloc(&u.coeffs);
            let matrix_value: f64 = v.coeffs.iter().zip(&au).map(|(a, b)| a * b).sum();
            let quad_value = a_h_quadrature(&u, &v, lambda, &penalty);
            assert!(
                (matrix_value - quad_value).abs() < 1e-10 * (1.0 + quad_value.abs()),
                "lambda {lambda}: {matrix_value} vs {quad_value}"
            );
        }
    }

    #[test]
    fn stiffness_rejects_nonpositive_penalty() {
        let s = space(2, 1);
        assert!(Penalty::uniform(&s.mesh, 0.0).is_err());
        assert!(Penalty::uniform(&s.mesh, -3.0).is_err());
        let mut values = vec![1.0; s.mesh.faces.len()];
        values[s.mesh.interior_faces[0]] = 0.0;
        assert!(Penalty::per_face(&s.mesh, values).is_err());
    }

    /// Analytic Dirichlet energy of the P1 hat function at an interior
    /// vertex, computed from raw triangle geometry.
    fn hat_energy_oracle(mesh: &Mesh, vertex: usize) -> f64 {
        let mut total = 0.0;
        for (e, tri) in mesh.elements.iter().enumerate() {
            let Some(local) = tri.iter().position(|&v| v == vertex) else {
                continue;
            };
            // grad of the barycentric function that is 1 at `local`:
            // perpendicular of the opposite edge over twice the area.
            let a = mesh.vertices[tri[(local + 1) % 3]];
            let b = mesh.vertices[tri[(local + 2) % 3]];
            let area = mesh.element_areas[e];
            let gx = (a[1] - b[1]) / (2.0 * area);
            let gy = (b[0] - a[0]) / (2.0 * area);
            total += area * (gx * gx + gy * gy);
        }
        total
    }

    #[test]
    fn hat_function_energy_matches_analytic_value() {
        let s = space(4, 1);
        let penalty = sigma(&s);
        // Interior vertex: center of the mesh.
        let vertex = s
            .mesh
            .vertices
            .iter()
            .position(|&v| v[0].abs() < 1e-12 && v[1].abs() < 1e-12)
            .unwrap();
        let hat = s
            .interpolate(|x| {
                // Evaluate the continuous hat by barycentric membership.
                let p = s.mesh.vertices[vertex];
                let h = 0.5; // cell size for n = 4 on [-1,1]
                let dx = (x[0] - p[0]) / h;
                let dy = (x[1] - p[1]) / h;
                // PL hat on the diagonal-split mesh.
                (1.0 - dx.abs().max(dy.abs()).max((dx - dy).abs())).max(0.0)
            })
            .unwrap();
        let oracle = hat_energy_oracle(&s.mesh, vertex);

        for lambda in [-1.0, 0.0, 1.0] {
            let form = assemble_stiffness(&s, lambda, &penalty).unwrap();
            let av = form.matrix.matvec_alloc(&hat.coeffs);
            let energy: f64 = hat.coeffs.iter().zip(&av).map(|(a, b)| a * b).sum();
            assert!(
                (energy - oracle).abs() < 1e-11 * oracle,
                "lambda {lambda}: {energy} vs oracle {oracle}"
            );
        }
        let phi = dirichlet_energy(&hat, &penalty);
        assert!((phi - 0.5 * oracle).abs() < 1e-11 * oracle);
    }

    #[test]
    fn mass_matrix_area_and_moment() {
        let s = space(4, 1);
        let mass = assemble_mass(&s);
        let ones = s.constant_field(1.0);
        let m1 = mass.matvec_alloc(&ones.coeffs);
        let area: f64 = ones.coeffs.iter().zip(&m1).map(|(a, b)| a * b).sum();
        assert!((area - 4.0).abs() < 1e-12 * 4.0);

        let x1 = s.interpolate(|x| x[0]).unwrap();
        let mx = mass.matvec_alloc(&x1.coeffs);
        let moment: f64 = x1.coeffs.iter().zip(&mx).map(|(a, b)| a * b).sum();
        assert!((moment - 4.0 / 3.0).abs() < 1e-12 * (4.0 / 3.0));
    }

    #[test]
    fn mass_blocks_are_scaled_identity_for_the_modal_basis() {
        let s = space(3, 2);
        let mass = assemble_mass(&s);
        let ndof = s.dofs_per_element();
        for e in 0..s.mesh.n_elements() {
            let det = s.geometry(e).det;
            for i in 0..ndof {
                for j in 0..ndof {
                    let expect = if i == j { det } else { 0.0 };
                    let got = mass.get(e * ndof + i, e * ndof + j);
                    assert!((got - expect).abs() < 1e-13 * det.max(1.0));
                }
            }
        }
    }

    #[test]
    fn energy_values_for_pure_phases() {
        let s = space(4, 1);
        let penalty = sigma(&s);
        let eps = 0.25;
        let plus = s.constant_field(1.0);
        assert!(ginzburg_landau_energy(&plus, eps, &penalty).abs() < 1e-12);
        let zero = s.zero_field();
        let expect = 1.0 / (eps * eps);
        let j = ginzburg_landau_energy(&zero, eps, &penalty);
        assert!((j - expect).abs() < 1e-12 * expect);
        let phi = dirichlet_energy(&plus, &penalty);
        assert!(phi.abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "interface width must be positive")]
    fn energy_rejects_nonpositive_eps() {
        let s = space(2, 1);
        let penalty = sigma(&s);
        let u = s.constant_field(0.5);
        let _ = ginzburg_landau_energy(&u, 0.0, &penalty);
    }

    #[test]
    fn convex_splitting_is_pointwise_consistent() {
        // F = F_c+ - F_c- as an identity.
        for u in [-2.5, -1.0, -0.3, 0.0, 0.7, 1.0, 1.9] {
            let lhs = double_well(u);
            let rhs = convex_plus(u) - convex_minus(u);
            assert!((lhs - rhs).abs() < 1e-14 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn energy_phi_equals_half_quadratic_form_for_symmetric_variant() {
        let s = space(3, 1);
        let penalty = sigma(&s);
        let form = assemble_stiffness(&s, -1.0, &penalty).unwrap();
        let u = s
            .interpolate(|x| (2.0 * x[0]).cos() * (1.5 * x[1]).sin() + 0.2)
            .unwrap();
        let au = form.matrix.matvec_alloc(&u.coeffs);
        let quad_form: f64 = u.coeffs.iter().zip(&au).map(|(a, b)| a * b).sum();
        let phi = dirichlet_energy(&u, &penalty);
        assert!(
            (phi - 0.5 * quad_form).abs() < 1e-12 * (1.0 + quad_form.abs()),
            "{phi} vs {}",
            0.5 * quad_form
        );
    }

    #[test]
    fn symmetric_form_is_coercive_against_the_dg_norm() {
        // With λ = -1 and the default penalty, a_h(v, v) dominates a fixed
        // multiple of ||v||²_{1,DG}, uniformly over mesh sizes (sampled on
        // random fields; the observed constant is ~0.84 at σ = 10).
        for n in [8usize, 16] {
            let mesh = Arc::new(Mesh::rectangle([-1.0, -1.0], [1.0, 1.0], n).unwrap());
            let s = DgSpace::new(mesh, 1);
            let penalty = Penalty::uniform(&s.mesh, default_penalty_value(1)).unwrap();
            let a = assemble_stiffness(&s, -1.0, &penalty).unwrap();
            let mut state = 99_u64;
            let mut next = move || {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            };
            for _ in 0..20 {
                let v = DgField::from_coefficients(
                    Arc::clone(&s),
                    (0..s.total_dofs()).map(|_| next()).collect(),
                );
                let av = a.matrix.matvec_alloc(&v.coeffs);
                let quad: f64 = v.coeffs.iter().zip(&av).map(|(x, y)| x * y).sum();
                let h1 = h1_dg_norm_sq(&v, &penalty);
                assert!(
                    quad >= 0.5 * h1,
                    "coercivity ratio {} below 0.5 at n={n}",
                    quad / h1
                );
            }
        }
    }

    #[test]
    fn jump_penalty_positivity() {
        let s = space(3, 1);
        let penalty = sigma(&s);
        let continuous = s.interpolate(|x| x[0] + x[1]).unwrap();
        assert!(jump_penalty(&continuous, &penalty).abs() < 1e-20);
        // A genuinely discontinuous field.
        let mut broken = s.zero_field();
        broken.coeffs[0] = 1.0;
        assert!(jump_penalty(&broken, &penalty) > 0.0);
    }

    #[test]
    fn projection_reproduces_members_of_vh() {
        let s = space(3, 1);
        let penalty = sigma(&s);
        let v = s.interpolate(|x| 0.3 * x[0] - x[1] + 0.1).unwrap();
        let p = elliptic_projection_field(&s, &penalty, &v).unwrap();
        let diff = p.difference(&v);
        assert!(diff.l2_norm() < 1e-10);
    }

    #[test]
    fn projection_of_constant_is_constant() {
        let s = space(3, 2);
        let penalty = sigma(&s);
        let c = FnField {
            value: |_| 2.25,
            gradient: |_| [0.0, 0.0],
        };
        let p = elliptic_projection_fn(&s, &penalty, &c).unwrap();
        let target = s.constant_field(2.25);
        assert!(p.difference(&target).l2_norm() < 1e-9);
    }

    #[test]
    fn projection_error_decays_at_second_order() {
        let penalty_value = default_penalty_value(1);
        let f = FnField {
            value: |x: [f64; 2]| (std::f64::consts::PI * x[0]).sin()
                * (std::f64::consts::PI * x[1]).cos(),
            gradient: |x: [f64; 2]| {
                let pi = std::f64::consts::PI;
                [
                    pi * (pi * x[0]).cos() * (pi * x[1]).cos(),
                    -pi * (pi * x[0]).sin() * (pi * x[1]).sin(),
                ]
            },
        };
        let mut errors = Vec::new();
        for n in [10usize, 20] {
            let s = space(n, 1);
            let penalty = Penalty::uniform(&s.mesh, penalty_value).unwrap();
            let p = elliptic_projection_fn(&s, &penalty, &f).unwrap();
            // L2 error by quadrature against the analytic function.
            let mut err_sq = 0.0;
            for e in 0..s.mesh.n_elements() {
                let geom = s.geometry(e);
                for q in 0..s.element_rule.len() {
                    let x = geom.to_physical(s.element_rule.points[q]);
                    let d = p.evaluate(e, s.element_rule.points[q]) - f.value(x);
                    err_sq += s.element_rule.weights[q] * geom.det * d * d;
                }
            }
            errors.push(err_sq.sqrt());
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(
            (1.7..=2.3).contains(&order),
            "projection L2 order {order}, errors {errors:?}"
        );
    }

    #[test]
    fn galerkin_orthogonality_of_projection() {
        let s = space(4, 1);
        let penalty = sigma(&s);
        let f = FnField {
            value: |x: [f64; 2]| (x[0] + 0.3 * x[1]).tanh(),
            gradient: |x: [f64; 2]| {
                let sech2 = 1.0 - (x[0] + 0.3 * x[1]).tanh().powi(2);
                [sech2, 0.3 * sech2]
            },
        };
        let p = elliptic_projection_fn(&s, &penalty, &f).unwrap();
        // a_h(v - Pv, w) + (v - Pv, w) = rhs . w - w' (A + M) p for any w.
        let rhs = projection_rhs(&s, &f);
        let stiffness = assemble_stiffness(&s, -1.0, &penalty).unwrap();
        let mass = assemble_mass(&s);
        let mut lhs = stiffness.matrix.matvec_alloc(&p.coeffs);
        let mv = mass.matvec_alloc(&p.coeffs);
        for (l, m) in lhs.iter_mut().zip(&mv) {
            *l += m;
        }
        let scale = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        // Deterministic pseudo-random test fields.
        let mut state = 0x12345678_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..20 {
            let w: Vec<f64> = (0..s.total_dofs()).map(|_| next()).collect();
            let wnorm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let defect: f64 = w
                .iter()
                .zip(rhs.iter().zip(&lhs))
                .map(|(wi, (r, l))| wi * (r - l))
                .sum();
            assert!(defect.abs() / wnorm <= 1e-10 * scale);
        }
    }
}
