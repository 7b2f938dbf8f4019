//! Modified Crank-Nicolson time stepping with the secant nonlinearity.
//!
//! One step advances u^m to u^{m+1} through the nonlinear system
//!
//!   (d_t u^{m+1}, v) + a_h(u^{m+1/2}, v) + ε⁻² (f^{m+1}, v) = 0  ∀ v ∈ V_h,
//!
//! where u^{m+1/2} = (u^{m+1} + u^m)/2 and f^{m+1} is the secant quotient
//! of the double well written in polynomial form,
//!
//!   f^{m+1}(a, b) = ¼ (a³ + a²b + ab² + b³) − (a + b)/2,
//!
//! so that f^{m+1} (a − b) = F(a) − F(b) exactly. Testing with
//! v = d_t u^{m+1} turns the step equation into a discrete energy identity,
//! which makes J_ε nonincreasing for every h and k.
//!
//! The nonlinear system is solved by Newton's method with the exact
//! Jacobian M/k + A/2 + ε⁻² W(u), damped by halving against the convex
//! splitting functional
//!
//!   J(u) = ¼ a_h(u,u) + ε⁻² ∫ F₊(u, u^m) + (1/(2k) − 1/(4ε²)) ||u||²
//!        + ½ a_h(u^m, u) − (1/(2ε²) + 1/k) (u^m, u),
//!
//! whose stationarity condition is exactly the step equation and which is
//! convex when k < 2ε² (the uniqueness regime). Outside that regime the
//! merit function is disabled and damping falls back to residual descent;
//! if the Jacobian loses positive definiteness there, a mass shift is
//! added and the solve retried.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{
    assemble_mass, assemble_stiffness, assemble_weighted_mass, composed_integral,
    default_penalty_value, dirichlet_energy, double_well, values_at_quadrature, AssembledForm,
    Penalty, ScalarField,
};
use crate::space::{DgField, DgSpace};
use crate::sparse::{conjugate_gradient, norm, BlockJacobi, CsrMatrix};

/// Secant force f^{m+1}(a, b); equals f(a) = a³ − a on the diagonal.
pub fn secant_force(a: f64, b: f64) -> f64 {
    0.25 * (a * a * a + a * a * b + a * b * b + b * b * b) - 0.5 * (a + b)
}

/// ∂f^{m+1}/∂a = ¼ (3a² + 2ab + b²) − ½.
pub fn secant_force_deriv(a: f64, b: f64) -> f64 {
    0.25 * (3.0 * a * a + 2.0 * a * b + b * b) - 0.5
}

/// Secant quotient of the convex part: (F_c⁺(a) − F_c⁺(b)) / (a − b) in
/// polynomial form.
pub fn convex_secant(a: f64, b: f64) -> f64 {
    0.25 * (a * a * a + a * a * b + a * b * b + b * b * b)
}

/// Antiderivative in `a` of `convex_secant`, the F₊ term of the merit
/// functional.
pub fn convex_secant_antiderivative(a: f64, b: f64) -> f64 {
    0.25 * (0.25 * a * a * a * a + a * a * a * b / 3.0 + 0.5 * a * a * b * b + a * b * b * b)
}

/// How the initial iterate u_h^0 is produced from u_0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialData {
    NodalInterpolant,
    EllipticProjection,
}

/// All scheme parameters.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    /// Interface width ε.
    pub eps: f64,
    /// Time step k.
    pub dt: f64,
    /// Final time T.
    pub t_final: f64,
    /// Polynomial degree r.
    pub degree: usize,
    /// IPDG switch λ in {-1, 0, +1}.
    pub lambda: f64,
    /// Uniform interior penalty σ_e.
    pub penalty: f64,
    /// Relative Newton tolerance on the step residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub initial_data: InitialData,
}

impl SchemeConfig {
    pub fn new(eps: f64, dt: f64, t_final: f64) -> SchemeConfig {
        SchemeConfig {
            eps,
            dt,
            t_final,
            degree: 1,
            lambda: -1.0,
            penalty: default_penalty_value(1),
            newton_tol: 1e-10,
            newton_max_iter: 30,
            initial_data: InitialData::NodalInterpolant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "final time {} is smaller than the time step {}",
                self.t_final, self.dt
            )));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::InvalidParameter(format!(
                "degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if self.lambda != -1.0 {
            // The nonsymmetric variants (0, +1) stay available for form
            // assembly and experiments at the library level, but stepping
            // solves its Newton systems by conjugate gradients, which
            // needs the symmetric variant.
            return Err(Error::InvalidParameter(format!(
                "time stepping requires the symmetric variant lambda = -1 \
                 (got {}); lambda = 0/+1 forms can be assembled directly",
                self.lambda
            )));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty must be positive, got {}",
                self.penalty
            )));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "newton tolerance must lie in (0,1), got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Whether the uniqueness constraint k < 2ε² holds. A violation is a
    /// warning, not an error: energy stability is unconditional.
    pub fn uniqueness_guaranteed(&self) -> bool {
        self.dt < 2.0 * self.eps * self.eps
    }
}

/// One row of the per-step energy record.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRecord {
    pub step: usize,
    pub time: f64,
    /// Φ(u^m): gradient, consistency and penalty terms.
    pub dirichlet: f64,
    /// (F(u^m), 1): the double-well bulk term.
    pub double_well: f64,
    /// J_ε(u^m) = Φ + ε⁻² (F, 1).
    pub energy_j: f64,
    /// I_ε(u^m) = Φ + ε⁻² (F_c⁺, 1).
    pub energy_i: f64,
    /// Backward difference (J^m − J^{m-1}) / k_m; None on the first record.
    pub dissipation: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EnergyTrace {
    pub records: Vec<EnergyRecord>,
}

impl EnergyTrace {
    /// Largest violation of monotone decay: max over steps of
    /// (J^{m+1} − J^m) / (1 + |J^m|). Negative when strictly decreasing.
    pub fn worst_energy_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| (w[1].energy_j - w[0].energy_j) / (1.0 + w[0].energy_j.abs()))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub field: DgField,
    pub newton_iterations: usize,
    /// Final residual norm relative to the Newton start.
    pub relative_residual: f64,
    pub residual_history: Vec<f64>,
    /// (u^{m+1} − u^m, 1): total mass change of the step.
    pub mass_change: f64,
    /// ∫ f^{m+1}(u^{m+1}, u^m); the step equation with v ≡ 1 forces
    /// mass_change / k = −ε⁻² · nonlinearity_integral.
    pub nonlinearity_integral: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_field: DgField,
    pub trace: EnergyTrace,
    pub snapshots: Vec<(f64, DgField)>,
    pub shortened_last_step: bool,
    pub total_newton_iterations: usize,
}

/// A run that failed partway keeps everything produced so far.
#[derive(Debug)]
pub struct RunFailure {
    pub step: usize,
    pub cause: Error,
    pub partial: RunOutput,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted at step {}: {}", self.step, self.cause)
    }
}

pub struct Stepper {
    pub space: Arc<DgSpace>,
    pub config: SchemeConfig,
    pub penalty: Penalty,
    stiffness: AssembledForm,
    mass: CsrMatrix,
    /// M · 1, for (v, 1) inner products.
    mass_times_one: Vec<f64>,
}

impl Stepper {
    pub fn new(space: Arc<DgSpace>, config: SchemeConfig) -> Result<Stepper> {
        config.validate()?;
        if space.degree() != config.degree {
            return Err(Error::InvalidParameter(format!(
                "space degree {} does not match config degree {}",
                space.degree(),
                config.degree
            )));
        }
        let penalty = Penalty::uniform(&space.mesh, config.penalty)?;
        let stiffness = assemble_stiffness(&space, config.lambda, &penalty)?;
        let mass = assemble_mass(&space);
        let ones = space.constant_field(1.0);
        let mass_times_one = mass.matvec_alloc(&ones.coeffs);
        Ok(Stepper {
            space,
            config,
            penalty,
            stiffness,
            mass,
            mass_times_one,
        })
    }

    pub fn stiffness(&self) -> &AssembledForm {
        &self.stiffness
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Builds u_h^0 from the initial profile per the configured policy.
    pub fn initial_field(&self, profile: &dyn ScalarField) -> Result<DgField> {
        match self.config.initial_data {
            InitialData::NodalInterpolant => self.space.interpolate(|x| profile.value(x)),
            InitialData::EllipticProjection => {
                crate::forms::elliptic_projection_fn(&self.space, &self.penalty, profile)
            }
        }
    }

    /// (v, 1) over the broken mesh.
    pub fn integral(&self, v: &DgField) -> f64 {
        v.coeffs
            .iter()
            .zip(&self.mass_times_one)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn energy_record(
        &self,
        u: &DgField,
        step: usize,
        time: f64,
        dissipation: Option<f64>,
    ) -> EnergyRecord {
        let eps2 = self.config.eps * self.config.eps;
        let dirichlet = dirichlet_energy(u, &self.penalty);
        let dw = composed_integral(u, double_well);
        let cp = composed_integral(u, crate::forms::convex_plus);
        EnergyRecord {
            step,
            time,
            dirichlet,
            double_well: dw,
            energy_j: dirichlet + dw / eps2,
            energy_i: dirichlet + cp / eps2,
            dissipation,
        }
    }

    /// The convex splitting functional J(u) with previous step `prev`.
    /// Its stationarity condition is the step equation; it is convex
    /// exactly when dt < 2ε².
    pub fn convex_splitting_merit(&self, candidate: &DgField, prev: &DgField, dt: f64) -> f64 {
        let eps2 = self.config.eps * self.config.eps;
        let a_cc = self.quadratic_form(&candidate.coeffs, &candidate.coeffs);
        let a_pc = self.quadratic_form(&prev.coeffs, &candidate.coeffs);
        let m_cc = self.mass_form(&candidate.coeffs, &candidate.coeffs);
        let m_pc = self.mass_form(&prev.coeffs, &candidate.coeffs);
        let space = &self.space;
        let nq = space.element_rule.len();
        let cand_q = values_at_quadrature(space, &candidate.coeffs);
        let prev_q = values_at_quadrature(space, &prev.coeffs);
        let mut f_plus = 0.0;
        for e in 0..space.mesh.n_elements() {
            let det = space.geometry(e).det;
            for q in 0..nq {
                f_plus += space.element_rule.weights[q]
                    * det
                    * convex_secant_antiderivative(cand_q[e * nq + q], prev_q[e * nq + q]);
            }
        }
        0.25 * a_cc
            + f_plus / eps2
            + (0.5 / dt - 0.25 / eps2) * m_cc
            + 0.5 * a_pc
            + (-0.5 / eps2 - 1.0 / dt) * m_pc
    }

    /// u' A v with the assembled stiffness.
    fn quadratic_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let au = self.stiffness.matrix.matvec_alloc(u);
        au.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    fn mass_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let mu = self.mass.matvec_alloc(u);
        mu.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Nonlinear step residual R(u) = M (u − b)/k + A (u + b)/2 + ε⁻² N(u, b),
    /// with `a_prev` = A b and `prev_q` the quadrature values of b.
    fn residual(
        &self,
        u: &[f64],
        prev: &[f64],
        a_prev: &[f64],
        prev_q: &[f64],
        dt: f64,
        out: &mut Vec<f64>,
    ) {
        let eps2 = self.config.eps * self.config.eps;
        let space = &self.space;
        let ndof = space.dofs_per_element();
        let nq = space.element_rule.len();
        out.clear();
        out.resize(u.len(), 0.0);

        let mut diff = vec![0.0; u.len()];
        for i in 0..u.len() {
            diff[i] = (u[i] - prev[i]) / dt;
        }
        self.mass.matvec(&diff, out);

        self.stiffness.matrix.matvec_add(0.5, u, out);
        for (o, a) in out.iter_mut().zip(a_prev) {
            *o += 0.5 * a;
        }

        let u_q = values_at_quadrature(space, u);
        for e in 0..space.mesh.n_elements() {
            let det = space.geometry(e).det;
            let base = e * ndof;
            for q in 0..nq {
                let f = secant_force(u_q[e * nq + q], prev_q[e * nq + q]);
                let w = space.element_rule.weights[q] * det * f / eps2;
                let phi = space.phi_at(q);
                for i in 0..ndof {
                    out[base + i] += w * phi[i];
                }
            }
        }
    }

    /// Advances one step of size `dt` from `prev`, starting Newton at
    /// `guess`.
    pub fn step_from_guess(&self, prev: &DgField, dt: f64, guess: &DgField) -> Result<StepResult> {
        let config = &self.config;
        let eps2 = config.eps * config.eps;
        let space = &self.space;
        let ndof = space.dofs_per_element();
        let nq = space.element_rule.len();
        let use_merit = config.lambda == -1.0 && dt < 2.0 * eps2;

        let a_prev = self.stiffness.matrix.matvec_alloc(&prev.coeffs);
        let prev_q = values_at_quadrature(space, &prev.coeffs);

        // Round-off floor: the residual is a sum of terms of this size, so
        // it cannot be driven meaningfully below their cancellation noise.
        let m_prev = self.mass.matvec_alloc(&prev.coeffs);
        let floor = 1e-13 * (norm(&m_prev) / dt + norm(&a_prev)).max(f64::MIN_POSITIVE);

        let mut u = guess.clone();
        let mut residual_vec = Vec::new();
        self.residual(&u.coeffs, &prev.coeffs, &a_prev, &prev_q, dt, &mut residual_vec);
        let r0 = norm(&residual_vec);
        let mut history = vec![r0];
        if r0 <= floor {
            return Ok(self.finish_step(u, prev, 0, 0.0, history));
        }

        let mut r = r0;
        let mut mass_shift = 0.0_f64;
        let mut iteration = 0;
        while iteration < config.newton_max_iter {
            iteration += 1;
            let u_q = values_at_quadrature(space, &u.coeffs);
            let w_matrix = assemble_weighted_mass(space, |e, q, _| {
                secant_force_deriv(u_q[e * nq + q], prev_q[e * nq + q]) / eps2
            });
            let mut jacobian = self.stiffness.matrix.clone();
            jacobian.scale(0.5);
            jacobian.add_scaled(1.0 / dt + mass_shift, &self.mass);
            jacobian.add_scaled(1.0, &w_matrix);

            let precond = BlockJacobi::new(&jacobian, ndof);
            let mut delta = vec![0.0; u.coeffs.len()];
            let neg_residual: Vec<f64> = residual_vec.iter().map(|v| -v).collect();
            let solve = conjugate_gradient(
                &|x, y| jacobian.matvec(x, y),
                &precond,
                &neg_residual,
                &mut delta,
                1e-12,
                40 * u.coeffs.len().max(100),
            );
            match solve {
                Ok(_) => {}
                Err(Error::IndefiniteSystem { .. }) => {
                    // Lost positive definiteness (possible when k >= 2ε²):
                    // shift by a multiple of the mass and retry.
                    mass_shift = if mass_shift == 0.0 {
                        0.5 / eps2
                    } else {
                        2.0 * mass_shift
                    };
                    iteration -= 1;
                    if mass_shift > 1e6 / eps2 {
                        return Err(Error::NewtonDiverged {
                            iterations: iteration,
                            history,
                        });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            }

            let merit_old = if use_merit {
                self.convex_splitting_merit(&u, prev, dt)
            } else {
                0.0
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut candidate = u.clone();
            for _ in 0..40 {
                candidate.coeffs.copy_from_slice(&u.coeffs);
                for (c, d) in candidate.coeffs.iter_mut().zip(&delta) {
                    *c += alpha * d;
                }
                if use_merit {
                    // Accepted Newton steps must not increase the merit.
                    let merit_new = self.convex_splitting_merit(&candidate, prev, dt);
                    if merit_new <= merit_old + 1e-12 * (1.0 + merit_old.abs()) {
                        accepted = true;
                        break;
                    }
                } else {
                    self.residual(
                        &candidate.coeffs,
                        &prev.coeffs,
                        &a_prev,
                        &prev_q,
                        dt,
                        &mut residual_vec,
                    );
                    if norm(&residual_vec) <= (1.0 - 1e-4 * alpha) * r {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::NewtonDiverged {
                    iterations: iteration,
                    history,
                });
            }
            u = candidate;
            self.residual(&u.coeffs, &prev.coeffs, &a_prev, &prev_q, dt, &mut residual_vec);
            r = norm(&residual_vec);
            history.push(r);
            if r <= (config.newton_tol * r0).max(floor) {
                return Ok(self.finish_step(u, prev, iteration, r / r0, history));
            }
        }
        Err(Error::NewtonDiverged {
            iterations: config.newton_max_iter,
            history,
        })
    }

    pub fn step(&self, prev: &DgField, dt: f64) -> Result<StepResult> {
        self.step_from_guess(prev, dt, prev)
    }

    fn finish_step(
        &self,
        u: DgField,
        prev: &DgField,
        iterations: usize,
        relative_residual: f64,
        history: Vec<f64>,
    ) -> StepResult {
        let mass_change = self.integral(&u) - self.integral(prev);
        let space = &self.space;
        let nq = space.element_rule.len();
        let u_q = values_at_quadrature(space, &u.coeffs);
        let p_q = values_at_quadrature(space, &prev.coeffs);
        let mut f_int = 0.0;
        for e in 0..space.mesh.n_elements() {
            let det = space.geometry(e).det;
            for q in 0..nq {
                f_int += space.element_rule.weights[q]
                    * det
                    * secant_force(u_q[e * nq + q], p_q[e * nq + q]);
            }
        }
        StepResult {
            field: u,
            newton_iterations: iterations,
            relative_residual,
            residual_history: history,
            mass_change,
            nonlinearity_integral: f_int,
        }
    }

    /// Runs the scheme from `u0` to T, recording energies each step and
    /// storing copies of the solution at the requested times (matched to
    /// the nearest grid point). A non-integral T/k shortens the last step.
    pub fn run(
        &self,
        u0: DgField,
        snapshot_times: &[f64],
    ) -> std::result::Result<RunOutput, RunFailure> {
        let config = &self.config;
        let k = config.dt;
        let t_final = config.t_final;
        let steps_exact = t_final / k;
        let mut n_full = steps_exact.round() as usize;
        let mut last_dt = None;
        if (steps_exact - steps_exact.round()).abs() > 1e-9 * steps_exact.max(1.0) {
            n_full = steps_exact.floor() as usize;
            let rem = t_final - n_full as f64 * k;
            if rem > 1e-12 * t_final {
                last_dt = Some(rem);
            }
        }
        let total_steps = n_full + usize::from(last_dt.is_some());

        let time_of = |m: usize| -> f64 {
            if m <= n_full {
                m as f64 * k
            } else {
                t_final
            }
        };
        // Each requested snapshot time maps to its nearest grid point.
        let snapshot_steps: Vec<usize> = snapshot_times
            .iter()
            .map(|&ts| {
                (0..=total_steps)
                    .min_by(|&a, &b| {
                        (time_of(a) - ts)
                            .abs()
                            .partial_cmp(&(time_of(b) - ts).abs())
                            .unwrap()
                    })
                    .unwrap_or(0)
            })
            .collect();

        let mut trace = EnergyTrace::default();
        trace.records.push(self.energy_record(&u0, 0, 0.0, None));
        let mut snapshots = Vec::new();
        for _ in snapshot_steps.iter().filter(|&&s| s == 0) {
            snapshots.push((0.0, u0.clone()));
        }

        let mut u = u0;
        let mut total_newton = 0;
        for m in 0..total_steps {
            let dt_m = if m < n_full { k } else { last_dt.unwrap() };
            let t_new = time_of(m + 1);
            let result = match self.step(&u, dt_m) {
                Ok(res) => res,
                Err(cause) => {
                    return Err(RunFailure {
                        step: m,
                        cause: Error::StepFailed {
                            step: m,
                            cause: Box::new(cause),
                        },
                        partial: RunOutput {
                            final_field: u.clone(),
                            trace,
                            snapshots,
                            shortened_last_step: last_dt.is_some(),
                            total_newton_iterations: total_newton,
                        },
                    });
                }
            };
            total_newton += result.newton_iterations;
            u = result.field;
            let prev_j = trace.records.last().unwrap().energy_j;
            let mut record = self.energy_record(&u, m + 1, t_new, None);
            record.dissipation = Some((record.energy_j - prev_j) / dt_m);
            trace.records.push(record);
            for _ in snapshot_steps.iter().filter(|&&s| s == m + 1) {
                snapshots.push((t_new, u.clone()));
            }
        }

        Ok(RunOutput {
            final_field: u,
            trace,
            snapshots,
            shortened_last_step: last_dt.is_some(),
            total_newton_iterations: total_newton,
        })
    }
}
