//! File output (legacy ASCII VTK, CSV tables, manifests, Matrix Market
//! dumps) and the flat key=value configuration format.
//!
//! All writers format numbers deterministically, so identical inputs
//! produce bit-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{ConvergenceRow, InterfaceRow};
use crate::mesh::Mesh;
use crate::postprocess::{ConformingField, LevelSetCurve};
use crate::space::DgField;
use crate::sparse::CsrMatrix;
use crate::spectrum::SpectrumReport;
use crate::stepper::EnergyTrace;

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}

/// Mesh dump as a legacy ASCII VTK unstructured grid of triangles.
pub fn write_vtk_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = String::new();
    vtk_header(&mut out, "mesh");
    vtk_points_and_cells(&mut out, mesh);
    write_file(path, &out)
}

/// Field export: per-vertex values of the node-averaged reconstruction
/// plus the per-cell mean of the raw DG field.
pub fn write_vtk_field(
    path: &Path,
    field: &DgField,
    averaged: &ConformingField,
    name: &str,
) -> Result<()> {
    let mesh = &field.space.mesh;
    let mut out = String::new();
    vtk_header(&mut out, name);
    vtk_points_and_cells(&mut out, mesh);

    let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
    let _ = writeln!(out, "SCALARS {name} double 1");
    let _ = writeln!(out, "LOOKUP_TABLE default");
    for v in &averaged.vertex_values {
        let _ = writeln!(out, "{v:.17e}");
    }

    let _ = writeln!(out, "CELL_DATA {}", mesh.n_elements());
    let _ = writeln!(out, "SCALARS {name}_cell_mean double 1");
    let _ = writeln!(out, "LOOKUP_TABLE default");
    let space = &field.space;
    for e in 0..mesh.n_elements() {
        let det = space.geometry(e).det;
        let mut integral = 0.0;
        for q in 0..space.element_rule.len() {
            integral += space.element_rule.weights[q] * det * field.evaluate(e, space.element_rule.points[q]);
        }
        let mean = integral / mesh.element_areas[e];
        let _ = writeln!(out, "{mean:.17e}");
    }
    write_file(path, &out)
}

/// Level-set polyline as legacy ASCII VTK polydata.
pub fn write_vtk_polylines(path: &Path, curve: &LevelSetCurve) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "zero level set at t = {}", curve.time);
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET POLYDATA");
    let n_pts = 2 * curve.segments.len();
    let _ = writeln!(out, "POINTS {n_pts} double");
    for seg in &curve.segments {
        for p in seg {
            let _ = writeln!(out, "{:.17e} {:.17e} 0.0", p[0], p[1]);
        }
    }
    let _ = writeln!(out, "LINES {} {}", curve.segments.len(), 3 * curve.segments.len());
    for (i, _) in curve.segments.iter().enumerate() {
        let _ = writeln!(out, "2 {} {}", 2 * i, 2 * i + 1);
    }
    write_file(path, &out)
}

fn vtk_header(out: &mut String, title: &str) {
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
}

fn vtk_points_and_cells(out: &mut String, mesh: &Mesh) {
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.17e} {:.17e} 0.0", v[0], v[1]);
    }
    let _ = writeln!(out, "CELLS {} {}", mesh.n_elements(), 4 * mesh.n_elements());
    for tri in &mesh.elements {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", mesh.n_elements());
    for _ in 0..mesh.n_elements() {
        let _ = writeln!(out, "5");
    }
}

/// Per-step energy trace CSV.
pub fn write_energy_csv(path: &Path, trace: &EnergyTrace) -> Result<()> {
    let mut out = String::from("step,t,dirichlet,double_well,energy_j,energy_i,dissipation\n");
    for r in &trace.records {
        let dissipation = match r.dissipation {
            Some(d) => format!("{d:.17e}"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            r.step, r.time, r.dirichlet, r.double_well, r.energy_j, r.energy_i, dissipation
        );
    }
    write_file(path, &out)
}

/// Spectrum sweep CSV: profile, eps, h, lambda_dg, residual.
pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<()> {
    let mut out = String::from("profile,eps,h,lambda_dg,residual\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.3e}",
            r.profile, r.eps, r.h, r.lambda_dg, r.residual
        );
    }
    write_file(path, &out)
}

/// Convergence table CSV in the benchmark layout.
pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut out =
        String::from("h,Linf_L2_error,Linf_L2_order,L2_H1_error,L2_H1_order\n");
    let fmt_opt = |v: Option<f64>, digits: usize| match v {
        Some(x) => format!("{x:.*e}", digits),
        None => String::new(),
    };
    let fmt_order = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => String::new(),
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6e},{},{},{},{}",
            r.h,
            fmt_opt(r.linf_l2, 5),
            fmt_order(r.linf_l2_order),
            fmt_opt(r.l2_h1, 5),
            fmt_order(r.l2_h1_order)
        );
    }
    write_file(path, &out)
}

/// Interface study CSV: per-snapshot distances against the radius law.
pub fn write_interface_csv(path: &Path, rows: &[InterfaceRow]) -> Result<()> {
    let mut out = String::from("t,reference_radius,sup_distance,mean_radius,segments,status\n");
    for r in rows {
        let (sup, mean, status) = match (r.sup_distance, r.mean_radius) {
            (Some(d), Some(m)) => (format!("{d:.17e}"), format!("{m:.17e}"), "ok"),
            _ => (String::new(), String::new(), "extinct"),
        };
        let _ = writeln!(
            out,
            "{:.17e},{:.17e},{},{},{},{}",
            r.time, r.reference_radius, sup, mean, r.segments, status
        );
    }
    write_file(path, &out)
}

/// Level-set segments CSV: t, segment_id, x1, y1, x2, y2.
pub fn write_level_set_csv(path: &Path, curves: &[LevelSetCurve]) -> Result<()> {
    let mut out = String::from("t,segment_id,x1,y1,x2,y2\n");
    for curve in curves {
        for (id, seg) in curve.segments.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                curve.time, id, seg[0][0], seg[0][1], seg[1][0], seg[1][1]
            );
        }
    }
    write_file(path, &out)
}

/// Matrix Market coordinate dump for debugging assembled operators.
pub fn write_matrix_market(path: &Path, matrix: &CsrMatrix) -> Result<()> {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let nnz = matrix.values.iter().filter(|v| **v != 0.0).count();
    let _ = writeln!(out, "{} {} {}", matrix.nrows, matrix.ncols, nnz);
    for i in 0..matrix.nrows {
        for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            if matrix.values[k] != 0.0 {
                let _ = writeln!(out, "{} {} {:.17e}", i + 1, matrix.col_idx[k] + 1, matrix.values[k]);
            }
        }
    }
    write_file(path, &out)
}

/// Run manifest: sorted key=value lines, loadable back as a config file.
pub fn write_manifest(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    write_file(path, &out)
}

/// Flat key=value configuration: one pair per line, `#` comments and
/// blank lines ignored.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {} is not a key=value pair: '{raw}'",
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
