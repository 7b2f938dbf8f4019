//! Python bindings for the Allen-Cahn IPDG solver.
//!
//! Exposes a `Simulation` class driving the energy-stable Crank-Nicolson
//! scheme plus the small free functions that are handy for scripting:
//! the secant force, the double-well potential, ellipse distances, the
//! shrinking-circle radius law and the discrete spectrum bound.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::sync::Arc;

use acdg::experiments::TestCase;
use acdg::forms::{default_penalty_value, ginzburg_landau_energy, Penalty, ScalarField};
use acdg::mesh::Mesh;
use acdg::postprocess::{extract_zero_level_set, node_average, InterfaceDistance, McfReference};
use acdg::space::{DgField, DgSpace};
use acdg::spectrum::{assemble_linearized, smallest_rayleigh};
use acdg::stepper::{InitialData, SchemeConfig, Stepper};

fn to_py_err(e: acdg::Error) -> PyErr {
    match e {
        acdg::Error::InvalidParameter(_) | acdg::Error::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// One Allen-Cahn run on the square [-1, 1]^2.
#[pyclass]
struct Simulation {
    stepper: Stepper,
    field: DgField,
    time: f64,
    steps_taken: usize,
}

#[pymethods]
impl Simulation {
    /// Build a simulation for a named test case.
    ///
    /// Args:
    ///     test: "test1" | "test2" | "circle" | "manufactured"
    ///     eps:  interface width
    ///     n:    mesh subdivisions per side
    ///     k:    time step
    #[new]
    #[pyo3(signature = (test, eps=0.125, n=20, k=1e-3, degree=1, lambda_=-1.0,
                        penalty=None, init="nodal", symmetrized=false, r0=0.5))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        test: &str,
        eps: f64,
        n: usize,
        k: f64,
        degree: usize,
        lambda_: f64,
        penalty: Option<f64>,
        init: &str,
        symmetrized: bool,
        r0: f64,
    ) -> PyResult<Self> {
        let case = TestCase::parse(test, symmetrized, r0).map_err(to_py_err)?;
        let initial_data = match init {
            "nodal" => InitialData::NodalInterpolant,
            "elliptic-projection" => InitialData::EllipticProjection,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown init '{other}' (expected nodal or elliptic-projection)"
                )))
            }
        };
        let config = SchemeConfig {
            eps,
            dt: k,
            t_final: f64::MAX,
            degree,
            lambda: lambda_,
            penalty: penalty.unwrap_or_else(|| default_penalty_value(degree)),
            newton_tol: 1e-10,
            newton_max_iter: 30,
            initial_data,
        };
        let mesh = Arc::new(Mesh::rectangle([-1.0, -1.0], [1.0, 1.0], n).map_err(to_py_err)?);
        let space = DgSpace::new(mesh, degree);
        let stepper = Stepper::new(space, config).map_err(to_py_err)?;
        let profile = case.initial_profile(eps);
        let field = stepper
            .initial_field(profile.as_ref())
            .map_err(to_py_err)?;
        Ok(Simulation {
            stepper,
            field,
            time: 0.0,
            steps_taken: 0,
        })
    }

    /// Advance one time step; returns (newton_iterations, relative_residual).
    fn step(&mut self) -> PyResult<(usize, f64)> {
        let k = self.stepper.config.dt;
        let result = self.stepper.step(&self.field, k).map_err(to_py_err)?;
        self.field = result.field;
        self.time += k;
        self.steps_taken += 1;
        Ok((result.newton_iterations, result.relative_residual))
    }

    /// Step until the simulated time reaches `t`; returns the number of
    /// steps taken.
    fn run_until(&mut self, t: f64) -> PyResult<usize> {
        let mut taken = 0;
        while self.time < t - 1e-12 {
            self.step()?;
            taken += 1;
        }
        Ok(taken)
    }

    fn time(&self) -> f64 {
        self.time
    }

    fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// The discrete Ginzburg-Landau energy J of the current state.
    fn energy(&self) -> f64 {
        ginzburg_landau_energy(&self.field, self.stepper.config.eps, &self.stepper.penalty)
    }

    /// (dirichlet, double_well_integral, energy_j, energy_i).
    fn energy_parts(&self) -> (f64, f64, f64, f64) {
        let rec = self
            .stepper
            .energy_record(&self.field, self.steps_taken, self.time, None);
        (rec.dirichlet, rec.double_well, rec.energy_j, rec.energy_i)
    }

    /// Node-averaged (conforming) vertex values of the current state.
    fn vertex_values(&self) -> Vec<f64> {
        node_average(&self.field).vertex_values
    }

    /// Mesh vertex coordinates as (x, y) tuples.
    fn vertices(&self) -> Vec<(f64, f64)> {
        self.stepper
            .space
            .mesh
            .vertices
            .iter()
            .map(|v| (v[0], v[1]))
            .collect()
    }

    /// Zero-level-set segments of the node-averaged state as
    /// (x1, y1, x2, y2) tuples.
    fn zero_level_set(&self) -> Vec<(f64, f64, f64, f64)> {
        let curve = extract_zero_level_set(&node_average(&self.field), self.time);
        curve
            .segments
            .iter()
            .map(|s| (s[0][0], s[0][1], s[1][0], s[1][1]))
            .collect()
    }

    /// Mean distance of the interface from the origin; None when the
    /// interface is extinct.
    fn mean_interface_radius(&self) -> Option<f64> {
        extract_zero_level_set(&node_average(&self.field), self.time).mean_radius()
    }

    /// One-sided sup distance from the interface to the shrinking-circle
    /// reference of initial radius r0 at the current time; None when the
    /// interface is extinct.
    fn interface_sup_distance(&self, r0: f64) -> PyResult<Option<f64>> {
        let reference = McfReference::ShrinkingCircle { radius0: r0 };
        let t_ext = reference.extinction_time().unwrap();
        if self.time >= t_ext {
            return Err(PyValueError::new_err(format!(
                "time {} is at or past the reference extinction {t_ext}",
                self.time
            )));
        }
        let curve = extract_zero_level_set(&node_average(&self.field), self.time);
        match acdg::postprocess::interface_distance(&curve, &reference, self.time) {
            InterfaceDistance::Distance(d) => Ok(Some(d)),
            InterfaceDistance::Extinct => Ok(None),
        }
    }

    /// (u, 1): the total mass of the order parameter.
    fn mass(&self) -> f64 {
        self.stepper.integral(&self.field)
    }

    fn l2_norm(&self) -> f64 {
        self.field.l2_norm()
    }

    fn n_elements(&self) -> usize {
        self.stepper.space.mesh.n_elements()
    }

    fn total_dofs(&self) -> usize {
        self.stepper.space.total_dofs()
    }

    fn mesh_size(&self) -> f64 {
        self.stepper.space.mesh.mesh_size
    }

    /// Whether the time step satisfies the uniqueness constraint k < 2 eps².
    fn uniqueness_guaranteed(&self) -> bool {
        self.stepper.config.uniqueness_guaranteed()
    }
}

/// Secant force f(a, b) = (F(a) - F(b)) / (a - b) in polynomial form.
#[pyfunction]
fn secant_force(a: f64, b: f64) -> f64 {
    acdg::stepper::secant_force(a, b)
}

/// Double-well potential F(u) = (u² - 1)² / 4.
#[pyfunction]
fn double_well(u: f64) -> f64 {
    acdg::forms::double_well(u)
}

/// Euclidean distance from (x, y) to the ellipse x²/a² + y²/b² = 1.
#[pyfunction]
fn ellipse_distance(x: f64, y: f64, a: f64, b: f64) -> f64 {
    acdg::experiments::ellipse_distance([x, y], a, b)
}

/// Radius of a circle of initial radius r0 shrinking by mean curvature,
/// r(t) = sqrt(r0² - 2t); None at or past extinction.
#[pyfunction]
fn shrinking_circle_radius(r0: f64, t: f64) -> Option<f64> {
    McfReference::ShrinkingCircle { radius0: r0 }.radius(t)
}

/// Smallest Rayleigh quotient of the linearized operator around the
/// projected background profile; returns (lambda, eigensolver_residual).
/// Profiles: "test1" | "test2" | "circle" | "manufactured" | "zero" |
/// "plus-one" | "minus-one".
#[pyfunction]
#[pyo3(signature = (profile, eps, n, degree=1))]
fn spectrum_lambda(profile: &str, eps: f64, n: usize, degree: usize) -> PyResult<(f64, f64)> {
    let mesh = Arc::new(Mesh::rectangle([-1.0, -1.0], [1.0, 1.0], n).map_err(to_py_err)?);
    let space = DgSpace::new(mesh, degree);
    let penalty =
        Penalty::uniform(&space.mesh, default_penalty_value(degree)).map_err(to_py_err)?;
    let background: DgField = match profile {
        "zero" => space.zero_field(),
        "plus-one" => space.constant_field(1.0),
        "minus-one" => space.constant_field(-1.0),
        name => {
            let case = TestCase::parse(name, false, 0.5).map_err(to_py_err)?;
            let field: Box<dyn ScalarField + Send> = case.initial_profile(eps);
            acdg::forms::elliptic_projection_fn(&space, &penalty, field.as_ref())
                .map_err(to_py_err)?
        }
    };
    let a_lin = assemble_linearized(&space, &penalty, &background, eps).map_err(to_py_err)?;
    let mass = acdg::forms::assemble_mass(&space);
    let pair =
        smallest_rayleigh(&a_lin.matrix, &mass, space.dofs_per_element()).map_err(to_py_err)?;
    Ok((pair.value, pair.residual))
}

#[pymodule]
fn acdg_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(secant_force, m)?)?;
    m.add_function(wrap_pyfunction!(double_well, m)?)?;
    m.add_function(wrap_pyfunction!(ellipse_distance, m)?)?;
    m.add_function(wrap_pyfunction!(shrinking_circle_radius, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum_lambda, m)?)?;
    Ok(())
}
