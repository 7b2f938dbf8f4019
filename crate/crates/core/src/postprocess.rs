//! Post-processing of DG solutions: node-averaged conforming
//! reconstruction, piecewise-linear time interpolation, zero-level-set
//! extraction, distances to mean-curvature-flow references, and the error
//! norms of the convergence tables.
//!
//! The raw DG solution is discontinuous, so its zero-level set is not well
//! defined; the conforming reconstruction û averages the shared degrees of
//! freedom (vertex values for r = 1, vertex and edge-midpoint values for
//! r = 2), after which contouring is done by marching triangles on a
//! piecewise-linear refinement (the element itself for r = 1, the four
//! midpoint sub-triangles for r = 2).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::Penalty;
use crate::mesh::Mesh;
use crate::space::{DgField, DgSpace};

/// Continuous piecewise-polynomial reconstruction determined by values at
/// shared nodes: vertices, plus edge midpoints for degree 2.
#[derive(Debug, Clone)]
pub struct ConformingField {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub vertex_values: Vec<f64>,
    /// Midpoint values per face; empty for degree 1.
    pub edge_values: Vec<f64>,
}

/// Averages the DG degrees of freedom at every shared node.
pub fn node_average(u: &DgField) -> ConformingField {
    let space = &u.space;
    let mesh = &space.mesh;
    let degree = space.degree();
    let ndof = space.dofs_per_element();
    let mut vertex_sum = vec![0.0; mesh.n_vertices()];
    let mut vertex_count = vec![0usize; mesh.n_vertices()];
    let mut edge_sum = vec![0.0; mesh.faces.len()];
    let mut edge_count = vec![0usize; mesh.faces.len()];

    for e in 0..mesh.n_elements() {
        let block = &u.coeffs[e * ndof..(e + 1) * ndof];
        let node_values = space.basis.node_values_from_coefficients(block);
        for local in 0..3 {
            let v = mesh.elements[e][local];
            vertex_sum[v] += node_values[local];
            vertex_count[v] += 1;
        }
        if degree == 2 {
            for le in 0..3 {
                let f = mesh.element_faces[e][le];
                edge_sum[f] += node_values[3 + le];
                edge_count[f] += 1;
            }
        }
    }

    let vertex_values = vertex_sum
        .iter()
        .zip(&vertex_count)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect();
    let edge_values = if degree == 2 {
        edge_sum
            .iter()
            .zip(&edge_count)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect()
    } else {
        Vec::new()
    };
    ConformingField {
        mesh: Arc::clone(mesh),
        degree,
        vertex_values,
        edge_values,
    }
}

impl ConformingField {
    /// Evaluation at reference coordinates of an element (barycentric
    /// Lagrange shape functions).
    pub fn evaluate(&self, element: usize, r: [f64; 2]) -> f64 {
        let tri = self.mesh.elements[element];
        let l0 = 1.0 - r[0] - r[1];
        let l1 = r[0];
        let l2 = r[1];
        let v = [
            self.vertex_values[tri[0]],
            self.vertex_values[tri[1]],
            self.vertex_values[tri[2]],
        ];
        if self.degree == 1 {
            return v[0] * l0 + v[1] * l1 + v[2] * l2;
        }
        let faces = self.mesh.element_faces[element];
        let m = [
            self.edge_values[faces[0]],
            self.edge_values[faces[1]],
            self.edge_values[faces[2]],
        ];
        v[0] * l0 * (2.0 * l0 - 1.0)
            + v[1] * l1 * (2.0 * l1 - 1.0)
            + v[2] * l2 * (2.0 * l2 - 1.0)
            + 4.0 * (m[0] * l0 * l1 + m[1] * l1 * l2 + m[2] * l2 * l0)
    }

    /// Linear pieces for contouring: physical corners with their values.
    /// Degree 1 yields the element itself, degree 2 the four midpoint
    /// sub-triangles (whose corner values interpolate the P2 field).
    pub fn linear_pieces(&self) -> Vec<([[f64; 2]; 3], [f64; 3])> {
        let mesh = &self.mesh;
        let mut pieces = Vec::new();
        for e in 0..mesh.n_elements() {
            let tri = mesh.elements[e];
            let p = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            let v = [
                self.vertex_values[tri[0]],
                self.vertex_values[tri[1]],
                self.vertex_values[tri[2]],
            ];
            if self.degree == 1 {
                pieces.push((p, v));
            } else {
                let faces = mesh.element_faces[e];
                let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                let mp = [mid(p[0], p[1]), mid(p[1], p[2]), mid(p[2], p[0])];
                let mv = [
                    self.edge_values[faces[0]],
                    self.edge_values[faces[1]],
                    self.edge_values[faces[2]],
                ];
                pieces.push(([p[0], mp[0], mp[2]], [v[0], mv[0], mv[2]]));
                pieces.push(([p[1], mp[1], mp[0]], [v[1], mv[1], mv[0]]));
                pieces.push(([p[2], mp[2], mp[1]], [v[2], mv[2], mv[1]]));
                pieces.push(([mp[0], mp[1], mp[2]], [mv[0], mv[1], mv[2]]));
            }
        }
        pieces
    }

    pub fn sup_norm(&self) -> f64 {
        let v = self
            .vertex_values
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()));
        self.edge_values.iter().fold(v, |m, x| m.max(x.abs()))
    }
}

/// Convex combination of two nodal snapshots at times t_m <= t <= t_{m+1}.
pub fn time_interpolant(
    left: &ConformingField,
    right: &ConformingField,
    t_left: f64,
    t_right: f64,
    t: f64,
) -> ConformingField {
    assert!(
        t_left < t_right && (t_left..=t_right).contains(&t),
        "time {t} outside the bracket [{t_left}, {t_right}]"
    );
    assert_eq!(left.degree, right.degree);
    assert_eq!(left.vertex_values.len(), right.vertex_values.len());
    let w_right = (t - t_left) / (t_right - t_left);
    let w_left = 1.0 - w_right;
    let vertex_values = left
        .vertex_values
        .iter()
        .zip(&right.vertex_values)
        .map(|(a, b)| w_left * a + w_right * b)
        .collect();
    let edge_values = left
        .edge_values
        .iter()
        .zip(&right.edge_values)
        .map(|(a, b)| w_left * a + w_right * b)
        .collect();
    ConformingField {
        mesh: Arc::clone(&left.mesh),
        degree: left.degree,
        vertex_values,
        edge_values,
    }
}

/// Zero-level-set polyline of a conforming field at one time.
#[derive(Debug, Clone)]
pub struct LevelSetCurve {
    pub time: f64,
    pub segments: Vec<[[f64; 2]; 2]>,
}

impl LevelSetCurve {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| ((s[1][0] - s[0][0]).powi(2) + (s[1][1] - s[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Segment endpoints plus midpoints, the sampling used for distance
    /// measurements.
    pub fn sample_points(&self) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity(3 * self.segments.len());
        for s in &self.segments {
            pts.push(s[0]);
            pts.push(s[1]);
            pts.push([(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0]);
        }
        pts
    }

    /// Mean distance from the origin over sample points; the measured
    /// radius for circular interfaces.
    pub fn mean_radius(&self) -> Option<f64> {
        let pts = self.sample_points();
        if pts.is_empty() {
            return None;
        }
        Some(
            pts.iter()
                .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
                .sum::<f64>()
                / pts.len() as f64,
        )
    }
}

/// Marching triangles on the linear pieces of the reconstruction. Exact
/// zero nodal values are perturbed by +1e-14 * sup|f| so the segment
/// topology is deterministic.
pub fn extract_zero_level_set(f: &ConformingField, time: f64) -> LevelSetCurve {
    let tie_break = 1e-14 * f.sup_norm();
    let mut segments = Vec::new();
    for (corners, raw_values) in f.linear_pieces() {
        let values: Vec<f64> = raw_values
            .iter()
            .map(|&v| if v == 0.0 { tie_break } else { v })
            .collect();
        if tie_break == 0.0 {
            // Identically zero field: every value ties; no curve.
            break;
        }
        let mut crossings: Vec<[f64; 2]> = Vec::with_capacity(2);
        for i in 0..3 {
            let j = (i + 1) % 3;
            if values[i] * values[j] < 0.0 {
                let t = values[i] / (values[i] - values[j]);
                crossings.push([
                    corners[i][0] + t * (corners[j][0] - corners[i][0]),
                    corners[i][1] + t * (corners[j][1] - corners[i][1]),
                ]);
            }
        }
        if crossings.len() == 2 {
            segments.push([crossings[0], crossings[1]]);
        }
    }
    LevelSetCurve { time, segments }
}

/// Reference interface for the distance measurements.
#[derive(Debug, Clone)]
pub enum McfReference {
    /// Circle centered at the origin shrinking by motion by curvature:
    /// r(t) = sqrt(r0² − 2t), extinct at t = r0²/2.
    ShrinkingCircle { radius0: f64 },
    /// Arbitrary sample points of a fixed reference curve.
    PointSet(Vec<[f64; 2]>),
}

impl McfReference {
    pub fn extinction_time(&self) -> Option<f64> {
        match self {
            McfReference::ShrinkingCircle { radius0 } => Some(0.5 * radius0 * radius0),
            McfReference::PointSet(_) => None,
        }
    }

    /// Circle radius at time t (before extinction).
    pub fn radius(&self, t: f64) -> Option<f64> {
        match self {
            McfReference::ShrinkingCircle { radius0 } => {
                let r_sq = radius0 * radius0 - 2.0 * t;
                (r_sq > 0.0).then(|| r_sq.sqrt())
            }
            McfReference::PointSet(_) => None,
        }
    }

    /// Distance from a point to the reference at time t.
    pub fn distance(&self, x: [f64; 2], t: f64) -> f64 {
        match self {
            McfReference::ShrinkingCircle { .. } => {
                let r = self.radius(t).expect("queried after extinction");
                ((x[0] * x[0] + x[1] * x[1]).sqrt() - r).abs()
            }
            McfReference::PointSet(points) => points
                .iter()
                .map(|p| ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Result of a one-sided interface distance measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterfaceDistance {
    /// sup over curve sample points of dist(x, reference).
    Distance(f64),
    /// The numerical interface has vanished.
    Extinct,
}

/// One-sided Hausdorff distance from the numerical interface to the
/// reference: sup_{x in curve} dist(x, Γ_t).
pub fn interface_distance(curve: &LevelSetCurve, reference: &McfReference, t: f64) -> InterfaceDistance {
    if let Some(t_ext) = reference.extinction_time() {
        assert!(t < t_ext, "time {t} is past the reference extinction {t_ext}");
    }
    if curve.is_empty() {
        return InterfaceDistance::Extinct;
    }
    let sup = curve
        .sample_points()
        .iter()
        .map(|&x| reference.distance(x, t))
        .fold(0.0_f64, f64::max);
    InterfaceDistance::Distance(sup)
}

/// Σ_e h_e ||[u]||²_e over interior faces: the right-hand side of the
/// node-averaging approximation bound.
pub fn weighted_jump_norm_sq(u: &DgField) -> f64 {
    let space = &u.space;
    let mut total = 0.0;
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        for q in 0..space.face_rule.len() {
            let (jump, _) = u.jump_average(f, space.face_rule.points[q]);
            total += face.length * space.face_rule.weights[q] * face.length * jump * jump;
        }
    }
    total
}

/// ||u − û||²_{L2} over the broken mesh.
pub fn reconstruction_error_sq(u: &DgField, averaged: &ConformingField) -> f64 {
    let space = &u.space;
    let mut total = 0.0;
    for e in 0..space.mesh.n_elements() {
        let det = space.geometry(e).det;
        for q in 0..space.element_rule.len() {
            let r = space.element_rule.points[q];
            let d = u.evaluate(e, r) - averaged.evaluate(e, r);
            total += space.element_rule.weights[q] * det * d * d;
        }
    }
    total
}

/// A sequence of solution snapshots on one space.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<DgField>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, fields: Vec<DgField>) -> Trajectory {
        assert_eq!(times.len(), fields.len());
        Trajectory { times, fields }
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.fields[0].space
    }
}

/// The two error norms of the convergence tables.
#[derive(Debug, Clone, Copy)]
pub struct ErrorNorms {
    /// max over snapshot times of ||e(t_m)||_{L2}.
    pub linf_l2: f64,
    /// (Σ_m k_m (||∇e||² + j_h(e,e)))^{1/2} over the coarse time grid.
    pub l2_h1: f64,
}

/// Error norms of a coarse trajectory against a reference trajectory,
/// which may live on a finer nested mesh of the same domain. The
/// reference is injected by pointwise evaluation at the coarse quadrature
/// points; traces on coarse faces take the value from the matching side.
pub fn trajectory_error_norms(
    coarse: &Trajectory,
    reference: &Trajectory,
    penalty: &Penalty,
) -> Result<ErrorNorms> {
    let cspace = coarse.space();
    let rspace = reference.space();

    let same_space = Arc::ptr_eq(cspace, rspace);
    if !same_space {
        let (cl, cu, cn) = cspace.mesh.grid_info().ok_or_else(|| {
            Error::MeshMismatch("cross-mesh comparison needs structured meshes".into())
        })?;
        let (rl, ru, rn) = rspace.mesh.grid_info().ok_or_else(|| {
            Error::MeshMismatch("cross-mesh comparison needs structured meshes".into())
        })?;
        if cl != rl || cu != ru {
            return Err(Error::MeshMismatch(format!(
                "domains differ: [{:?}, {:?}] vs [{:?}, {:?}]",
                cl, cu, rl, ru
            )));
        }
        if rn % cn != 0 {
            return Err(Error::MeshMismatch(format!(
                "reference subdivision {rn} is not a multiple of coarse {cn}"
            )));
        }
    }

    // Match coarse times into the reference trajectory.
    let t_scale = coarse.times.last().copied().unwrap_or(1.0).max(1.0);
    let mut ref_index = Vec::with_capacity(coarse.times.len());
    for &t in &coarse.times {
        let found = reference
            .times
            .iter()
            .position(|&tr| (tr - t).abs() <= 1e-9 * t_scale);
        match found {
            Some(idx) => ref_index.push(idx),
            None => {
                return Err(Error::TimeGridMismatch(format!(
                    "coarse time {t} missing from the reference trajectory"
                )))
            }
        }
    }

    let mut linf_l2 = 0.0_f64;
    let mut h1_sum = 0.0_f64;
    for (m, (&t, &ridx)) in coarse.times.iter().zip(&ref_index).enumerate() {
        let uc = &coarse.fields[m];
        let ur = &reference.fields[ridx];
        let (l2_sq, h1_sq) = if same_space {
            let diff = uc.difference(ur);
            (
                diff.l2_inner(&diff),
                diff.broken_h1_seminorm_sq() + crate::forms::jump_penalty(&diff, penalty),
            )
        } else {
            error_norms_injected(uc, ur, penalty)
        };
        linf_l2 = linf_l2.max(l2_sq.sqrt());
        if m > 0 {
            let k_m = t - coarse.times[m - 1];
            h1_sum += k_m * h1_sq;
        }
    }
    Ok(ErrorNorms {
        linf_l2,
        l2_h1: h1_sum.sqrt(),
    })
}

/// (||e||²_{L2}, ||∇e||² + j_h(e,e)) with the reference evaluated
/// pointwise on the coarse quadrature.
fn error_norms_injected(uc: &DgField, ur: &DgField, penalty: &Penalty) -> (f64, f64) {
    let space = &uc.space;
    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    for e in 0..space.mesh.n_elements() {
        let geom = space.geometry(e);
        for q in 0..space.element_rule.len() {
            let r = space.element_rule.points[q];
            let x = geom.to_physical(r);
            let w = space.element_rule.weights[q] * geom.det;
            let d = uc.evaluate(e, r) - ur.eval_physical(x, None).expect("point in domain");
            l2_sq += w * d * d;
            let gc = uc.gradient(e, r);
            let gr = ur.grad_physical(x, None).expect("point in domain");
            h1_sq += w * ((gc[0] - gr[0]).powi(2) + (gc[1] - gr[1]).powi(2));
        }
    }
    for &f in &space.mesh.interior_faces {
        let face = &space.mesh.faces[f];
        let sigma_over_h = penalty.value(f) / face.length;
        let into_owner = [-face.normal[0], -face.normal[1]];
        let into_neighbor = face.normal;
        for q in 0..space.face_rule.len() {
            let t = space.face_rule.points[q];
            let x = space.face_quad_point(f, q);
            let (jump_c, _) = uc.jump_average(f, t);
            // Reference traces from each side of the coarse face.
            let r_owner = ur.eval_physical(x, Some(into_owner)).expect("point in domain");
            let r_neighbor = ur
                .eval_physical(x, Some(into_neighbor))
                .expect("point in domain");
            let jump = jump_c - (r_owner - r_neighbor);
            h1_sq += space.face_rule.weights[q] * face.length * sigma_over_h * jump * jump;
        }
    }
    (l2_sq, h1_sq)
}
