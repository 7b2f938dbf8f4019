//! Experiment definitions and orchestration: the benchmark initial data
//! built from ellipse distance functions, self-convergence studies
//! against a fine-grid reference, and the shrinking-circle interface
//! study.
//!
//! Initial profiles follow u0(x) = tanh(d0(x) / (√2 ε)) where d0 is a
//! signed distance taken positive outside the initial curve:
//!
//! * `Test1Ellipse`: the ellipse x₁²/0.36 + x₂²/0.04 = 1.
//! * `Test2TwoEllipses`: the crossing pair x₁²/0.36 + x₂²/0.04 = 1 and
//!   x₁²/0.04 + x₂²/0.36 = 1, with the published four-branch sign table.
//!   The printed table has an asymmetric second condition (a circle
//!   x₁²/0.04 + x₂²/0.04 ≤ 1 where symmetry suggests the second ellipse);
//!   it is implemented as printed, with a `symmetrized` switch for the
//!   symmetric variant. The branch table leaves points inside both
//!   ellipses but outside that circle unassigned; they get the + phase,
//!   which is what the symmetrized table yields there.
//! * `Circle`: a circle of given radius, the mean-curvature-flow benchmark.
//! * `Manufactured`: a smooth small-amplitude relaxation with no interface,
//!   for rate checks free of layer effects.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{Penalty, ScalarField};
use crate::mesh::Mesh;
use crate::postprocess::{
    extract_zero_level_set, interface_distance, node_average, trajectory_error_norms,
    InterfaceDistance, LevelSetCurve, McfReference, Trajectory,
};
use crate::space::DgSpace;
use crate::stepper::{InitialData, SchemeConfig, Stepper};

/// Euclidean distance from a point to the ellipse x²/a² + y²/b² = 1,
/// computed from the first-quadrant nearest-point angle by a
/// bisection-Newton hybrid on the stationarity condition
/// g(θ) = sinθ cosθ (b² − a²) + a x sinθ − b y cosθ = 0, with a dense
/// angular-sampling fallback if the iteration fails to converge.
pub fn ellipse_distance(point: [f64; 2], a: f64, b: f64) -> f64 {
    nearest_ellipse_point(point, a, b).1
}

/// Nearest point on the ellipse and the distance to it.
pub fn nearest_ellipse_point(point: [f64; 2], a: f64, b: f64) -> ([f64; 2], f64) {
    assert!(a > 0.0 && b > 0.0, "semi-axes must be positive");
    let x = point[0].abs();
    let y = point[1].abs();
    let (px, py) = if x < 1e-15 && y < 1e-15 {
        // Center: the nearest boundary point sits on the short axis.
        if a <= b {
            (a, 0.0)
        } else {
            (0.0, b)
        }
    } else if y < 1e-15 {
        // On the major/minor x-axis: an interior critical point exists only
        // inside the evolute.
        let c = a * x / (a * a - b * b);
        if a > b && c < 1.0 {
            (a * c, b * (1.0 - c * c).sqrt())
        } else {
            (a, 0.0)
        }
    } else if x < 1e-15 {
        let s = b * y / (b * b - a * a);
        if b > a && s < 1.0 {
            (a * (1.0 - s * s).sqrt(), b * s)
        } else {
            (0.0, b)
        }
    } else {
        let g = |theta: f64| {
            let (s, c) = theta.sin_cos();
            s * c * (b * b - a * a) + a * x * s - b * y * c
        };
        // g(0) = -b y < 0 and g(π/2) = a x > 0: bisect, then polish.
        let mut lo = 0.0_f64;
        let mut hi = std::f64::consts::FRAC_PI_2;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut theta = 0.5 * (lo + hi);
        let mut converged = false;
        for _ in 0..50 {
            let (s, c) = theta.sin_cos();
            let val = s * c * (b * b - a * a) + a * x * s - b * y * c;
            let deriv = (c * c - s * s) * (b * b - a * a) + a * x * c + b * y * s;
            if deriv.abs() < 1e-300 {
                break;
            }
            let step = val / deriv;
            theta -= step;
            if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
                theta = theta.clamp(0.0, std::f64::consts::FRAC_PI_2);
            }
            if step.abs() < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged && g(theta).abs() > 1e-9 * (a * x + b * y) {
            eprintln!(
                "ellipse nearest-point iteration did not converge at ({x}, {y}); \
                 falling back to dense angular sampling"
            );
            theta = dense_angular_minimum(x, y, a, b);
        }
        let (s, c) = theta.sin_cos();
        (a * c, b * s)
    };
    // Reflect back into the point's quadrant.
    let nearest = [
        if point[0] < 0.0 { -px } else { px },
        if point[1] < 0.0 { -py } else { py },
    ];
    let d = ((point[0] - nearest[0]).powi(2) + (point[1] - nearest[1]).powi(2)).sqrt();
    (nearest, d)
}

fn dense_angular_minimum(x: f64, y: f64, a: f64, b: f64) -> f64 {
    let n = 1_000_000;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
        let (s, c) = theta.sin_cos();
        let d2 = (a * c - x).powi(2) + (b * s - y).powi(2);
        if d2 < best.0 {
            best = (d2, theta);
        }
    }
    best.1
}

/// Signed distance to an ellipse, positive outside.
#[derive(Debug, Clone, Copy)]
pub struct SignedEllipseDistance {
    pub a: f64,
    pub b: f64,
}

impl SignedEllipseDistance {
    fn level(&self, x: [f64; 2]) -> f64 {
        x[0] * x[0] / (self.a * self.a) + x[1] * x[1] / (self.b * self.b)
    }
}

impl ScalarField for SignedEllipseDistance {
    fn value(&self, x: [f64; 2]) -> f64 {
        let d = ellipse_distance(x, self.a, self.b);
        if self.level(x) >= 1.0 {
            d
        } else {
            -d
        }
    }

    /// Gradient of the signed distance: the unit outward ray through the
    /// nearest boundary point (quadric normal when on the curve).
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (p, d) = nearest_ellipse_point(x, self.a, self.b);
        if d > 1e-12 {
            let sign = if self.level(x) >= 1.0 { 1.0 } else { -1.0 };
            [sign * (x[0] - p[0]) / d, sign * (x[1] - p[1]) / d]
        } else {
            let g = [2.0 * p[0] / (self.a * self.a), 2.0 * p[1] / (self.b * self.b)];
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt().max(f64::MIN_POSITIVE);
            [g[0] / n, g[1] / n]
        }
    }
}

/// The benchmark cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestCase {
    Test1Ellipse,
    Test2TwoEllipses { symmetrized: bool },
    Circle { radius: f64 },
    Manufactured,
}

impl TestCase {
    pub fn name(&self) -> &'static str {
        match self {
            TestCase::Test1Ellipse => "test1",
            TestCase::Test2TwoEllipses { symmetrized: false } => "test2",
            TestCase::Test2TwoEllipses { symmetrized: true } => "test2-symmetrized",
            TestCase::Circle { .. } => "circle",
            TestCase::Manufactured => "manufactured",
        }
    }

    pub fn parse(name: &str, symmetrized: bool, radius: f64) -> Result<TestCase> {
        match name {
            "test1" => Ok(TestCase::Test1Ellipse),
            "test2" => Ok(TestCase::Test2TwoEllipses { symmetrized }),
            "circle" => Ok(TestCase::Circle { radius }),
            "manufactured" => Ok(TestCase::Manufactured),
            other => Err(Error::Config(format!(
                "unknown test case '{other}' (expected test1, test2, circle or manufactured)"
            ))),
        }
    }

    /// The initial profile u0 for interface width ε.
    pub fn initial_profile(&self, eps: f64) -> Box<dyn ScalarField + Send> {
        match *self {
            TestCase::Test1Ellipse => Box::new(TanhProfile {
                eps,
                distance: DistanceKind::Ellipse(SignedEllipseDistance { a: 0.6, b: 0.2 }),
            }),
            TestCase::Test2TwoEllipses { symmetrized } => Box::new(TanhProfile {
                eps,
                distance: DistanceKind::TwoEllipses { symmetrized },
            }),
            TestCase::Circle { radius } => Box::new(TanhProfile {
                eps,
                distance: DistanceKind::Circle { radius },
            }),
            TestCase::Manufactured => Box::new(ManufacturedProfile),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum DistanceKind {
    Ellipse(SignedEllipseDistance),
    TwoEllipses { symmetrized: bool },
    Circle { radius: f64 },
}

impl DistanceKind {
    /// Signed distance-like quantity d0 and its gradient direction.
    fn signed_distance(&self, x: [f64; 2]) -> f64 {
        match *self {
            DistanceKind::Ellipse(e) => e.value(x),
            DistanceKind::Circle { radius } => (x[0] * x[0] + x[1] * x[1]).sqrt() - radius,
            DistanceKind::TwoEllipses { symmetrized } => {
                let e1 = SignedEllipseDistance { a: 0.6, b: 0.2 };
                let e2 = SignedEllipseDistance { a: 0.2, b: 0.6 };
                let d_min = ellipse_distance(x, e1.a, e1.b).min(ellipse_distance(x, e2.a, e2.b));
                two_ellipse_sign(x, symmetrized) * d_min
            }
        }
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            DistanceKind::Ellipse(e) => e.gradient(x),
            DistanceKind::Circle { .. } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r > 1e-12 {
                    [x[0] / r, x[1] / r]
                } else {
                    [1.0, 0.0]
                }
            }
            DistanceKind::TwoEllipses { symmetrized } => {
                let e1 = SignedEllipseDistance { a: 0.6, b: 0.2 };
                let e2 = SignedEllipseDistance { a: 0.2, b: 0.6 };
                let d1 = ellipse_distance(x, e1.a, e1.b);
                let d2 = ellipse_distance(x, e2.a, e2.b);
                let closer = if d1 <= d2 { e1 } else { e2 };
                let (p, d) = nearest_ellipse_point(x, closer.a, closer.b);
                let sign = two_ellipse_sign(x, symmetrized);
                if d > 1e-12 {
                    [sign * (x[0] - p[0]) / d, sign * (x[1] - p[1]) / d]
                } else {
                    let g = [
                        2.0 * p[0] / (closer.a * closer.a),
                        2.0 * p[1] / (closer.b * closer.b),
                    ];
                    let n = (g[0] * g[0] + g[1] * g[1]).sqrt().max(f64::MIN_POSITIVE);
                    [g[0] / n, g[1] / n]
                }
            }
        }
    }
}

/// Sign table of the two-ellipse initial condition. Quadric levels:
/// q1 for the wide ellipse, q2 for the tall one, q3 for the printed
/// r = 0.2 circle in the second + condition.
fn two_ellipse_sign(x: [f64; 2], symmetrized: bool) -> f64 {
    let q1 = x[0] * x[0] / 0.36 + x[1] * x[1] / 0.04;
    let q2 = x[0] * x[0] / 0.04 + x[1] * x[1] / 0.36;
    let q_second = if symmetrized {
        q2
    } else {
        x[0] * x[0] / 0.04 + x[1] * x[1] / 0.04
    };
    if (q1 >= 1.0 && q2 >= 1.0) || (q1 <= 1.0 && q_second <= 1.0) {
        1.0
    } else if (q1 < 1.0 && q2 > 1.0) || (q1 > 1.0 && q2 < 1.0) {
        -1.0
    } else {
        // Unassigned by the branch table (inside both ellipses, outside the
        // printed circle): + phase, matching the symmetrized table.
        1.0
    }
}

/// u0(x) = tanh(d0(x) / (√2 ε)).
struct TanhProfile {
    eps: f64,
    distance: DistanceKind,
}

impl ScalarField for TanhProfile {
    fn value(&self, x: [f64; 2]) -> f64 {
        let d = self.distance.signed_distance(x);
        (d / (2.0_f64.sqrt() * self.eps)).tanh()
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let d = self.distance.signed_distance(x);
        let u = (d / (2.0_f64.sqrt() * self.eps)).tanh();
        let chain = (1.0 - u * u) / (2.0_f64.sqrt() * self.eps);
        let g = self.distance.gradient(x);
        [chain * g[0], chain * g[1]]
    }
}

/// Smooth no-interface relaxation profile, Neumann-compatible.
struct ManufacturedProfile;

impl ScalarField for ManufacturedProfile {
    fn value(&self, x: [f64; 2]) -> f64 {
        let pi = std::f64::consts::PI;
        0.1 * (pi * x[0]).cos() * (pi * x[1]).cos()
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let pi = std::f64::consts::PI;
        [
            -0.1 * pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
            -0.1 * pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
        ]
    }
}

/// Parameters of a convergence or interface study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub test: TestCase,
    pub eps: f64,
    /// Subdivisions per side, ascending; each next level should double.
    pub levels: Vec<usize>,
    /// k = k_coupling * h² unless an explicit k is given.
    pub k_coupling: f64,
    pub explicit_k: Option<f64>,
    pub t_final: f64,
    pub degree: usize,
    pub lambda: f64,
    pub penalty: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub initial_data: InitialData,
    pub workers: usize,
    pub domain: ([f64; 2], [f64; 2]),
}

impl StudyConfig {
    pub fn new(test: TestCase, eps: f64, levels: Vec<usize>, t_final: f64) -> StudyConfig {
        StudyConfig {
            test,
            eps,
            levels,
            k_coupling: 0.25,
            explicit_k: None,
            t_final,
            degree: 1,
            lambda: -1.0,
            penalty: crate::forms::default_penalty_value(1),
            newton_tol: 1e-10,
            newton_max_iter: 30,
            initial_data: InitialData::NodalInterpolant,
            workers: 4,
            domain: ([-1.0, -1.0], [1.0, 1.0]),
        }
    }

    pub fn side_length(&self) -> f64 {
        self.domain.1[0] - self.domain.0[0]
    }

    pub fn mesh_size(&self, n: usize) -> f64 {
        2.0_f64.sqrt() * self.side_length() / n as f64
    }

    pub fn time_step(&self, n: usize) -> f64 {
        let k = match self.explicit_k {
            Some(k) => k,
            None => {
                let h = self.mesh_size(n);
                self.k_coupling * h * h
            }
        };
        // A coupled step can exceed T on very coarse levels; a single full
        // step is the sensible reading there.
        k.min(self.t_final)
    }

    fn scheme_config(&self, dt: f64) -> SchemeConfig {
        SchemeConfig {
            eps: self.eps,
            dt,
            t_final: self.t_final,
            degree: self.degree,
            lambda: self.lambda,
            penalty: self.penalty,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            initial_data: self.initial_data,
        }
    }
}

/// One row of a convergence table; `None` error entries mark rows whose
/// run failed (the table is still produced).
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub k: f64,
    pub linf_l2: Option<f64>,
    pub linf_l2_order: Option<f64>,
    pub l2_h1: Option<f64>,
    pub l2_h1_order: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Reference run description: (n, k).
    pub reference: (usize, f64),
}

impl ConvergenceTable {
    /// Least-squares slopes of log e against log h over the valid rows.
    pub fn fitted_orders(&self) -> (Option<f64>, Option<f64>) {
        let fit = |points: Vec<(f64, f64)>| -> Option<f64> {
            if points.len() < 2 {
                return None;
            }
            let n = points.len() as f64;
            let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
            let my = points.iter().map(|p| p.1).sum::<f64>() / n;
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, y) in points {
                num += (x - mx) * (y - my);
                den += (x - mx) * (x - mx);
            }
            Some(num / den)
        };
        let l2_points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.linf_l2.map(|e| (r.h.ln(), e.ln())))
            .collect();
        let h1_points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.l2_h1.map(|e| (r.h.ln(), e.ln())))
            .collect();
        (fit(l2_points), fit(h1_points))
    }
}

/// Runs one level and returns its trajectory sampled at the given times.
fn run_level(
    study: &StudyConfig,
    n: usize,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    let mesh = Arc::new(Mesh::rectangle(study.domain.0, study.domain.1, n)?);
    let space = DgSpace::new(mesh, study.degree);
    let config = study.scheme_config(dt);
    let stepper = Stepper::new(space, config)?;
    let profile = study.test.initial_profile(study.eps);
    let u0 = stepper.initial_field(profile.as_ref())?;
    let out = stepper
        .run(u0, snapshot_times)
        .map_err(|failure| failure.cause)?;
    let (times, fields): (Vec<f64>, Vec<_>) = out.snapshots.into_iter().unzip();
    Ok(Trajectory::new(times, fields))
}

/// Time grid {0, k, 2k, ..., T} including a shortened final point.
fn full_time_grid(dt: f64, t_final: f64) -> Vec<f64> {
    let mut times = Vec::new();
    let mut m = 0usize;
    loop {
        let t = m as f64 * dt;
        if t > t_final * (1.0 + 1e-12) {
            break;
        }
        times.push(t);
        m += 1;
    }
    let last = *times.last().unwrap();
    if (last - t_final).abs() > 1e-9 * t_final {
        times.push(t_final);
    }
    times
}

/// Self-convergence study: each level is compared against a single
/// reference run at twice the finest resolution and a quarter of the
/// finest time step.
pub fn convergence_study(study: &StudyConfig) -> Result<ConvergenceTable> {
    if study.levels.len() < 2 {
        return Err(Error::Config(
            "a convergence study needs at least two levels".into(),
        ));
    }
    let mut levels = study.levels.clone();
    levels.sort_unstable();
    let n_max = *levels.last().unwrap();
    let n_ref = 2 * n_max;
    let k_finest = study.time_step(n_max);
    let k_ref = k_finest / 4.0;

    // The reference must be sampled at every coarse time.
    let mut union_times: Vec<f64> = Vec::new();
    for &n in &levels {
        union_times.extend(full_time_grid(study.time_step(n), study.t_final));
    }
    union_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    union_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * study.t_final.max(1.0));

    // Run all levels plus the reference, worker-capped.
    let mut jobs: Vec<JobSpec> = levels
        .iter()
        .map(|&n| JobSpec {
            n,
            dt: study.time_step(n),
            snapshots: full_time_grid(study.time_step(n), study.t_final),
        })
        .collect();
    jobs.push(JobSpec {
        n: n_ref,
        dt: k_ref,
        snapshots: union_times,
    });

    let results = run_jobs_parallel(study, &jobs);
    let mut results: Vec<Option<Result<Trajectory>>> = results.into_iter().map(Some).collect();
    let reference = results.last_mut().unwrap().take().unwrap()?;

    let mut rows = Vec::new();
    for (idx, &n) in levels.iter().enumerate() {
        let h = study.mesh_size(n);
        let k = study.time_step(n);
        let row = match results[idx].take().unwrap() {
            Ok(traj) => {
                let penalty = Penalty::uniform(&traj.space().mesh, study.penalty)?;
                let norms = trajectory_error_norms(&traj, &reference, &penalty)?;
                ConvergenceRow {
                    n,
                    h,
                    k,
                    linf_l2: Some(norms.linf_l2),
                    linf_l2_order: None,
                    l2_h1: Some(norms.l2_h1),
                    l2_h1_order: None,
                }
            }
            Err(_) => ConvergenceRow {
                n,
                h,
                k,
                linf_l2: None,
                linf_l2_order: None,
                l2_h1: None,
                l2_h1_order: None,
            },
        };
        rows.push(row);
    }

    // Pairwise orders between consecutive valid rows.
    for i in 1..rows.len() {
        let ratio = rows[i - 1].h / rows[i].h;
        if let (Some(e0), Some(e1)) = (rows[i - 1].linf_l2, rows[i].linf_l2) {
            rows[i].linf_l2_order = Some((e0 / e1).ln() / ratio.ln());
        }
        if let (Some(e0), Some(e1)) = (rows[i - 1].l2_h1, rows[i].l2_h1) {
            rows[i].l2_h1_order = Some((e0 / e1).ln() / ratio.ln());
        }
    }

    Ok(ConvergenceTable {
        rows,
        reference: (n_ref, k_ref),
    })
}

/// One run of the parallel study executor.
#[derive(Debug, Clone)]
struct JobSpec {
    n: usize,
    dt: f64,
    snapshots: Vec<f64>,
}

/// Executes independent runs concurrently, capped at `study.workers`
/// threads. Results land in their job's slot, so the outcome is
/// deterministic regardless of scheduling.
fn run_jobs_parallel(study: &StudyConfig, jobs: &[JobSpec]) -> Vec<Result<Trajectory>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let workers = study.workers.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<Trajectory>>>> =
        (0..jobs.len()).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let job = &jobs[idx];
                let outcome = run_level(study, job.n, job.dt, &job.snapshots);
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("job completed"))
        .collect()
}

/// One measured time of the shrinking-circle study.
#[derive(Debug, Clone)]
pub struct InterfaceRow {
    pub time: f64,
    pub reference_radius: f64,
    /// None when the numerical interface is extinct.
    pub sup_distance: Option<f64>,
    pub mean_radius: Option<f64>,
    pub segments: usize,
}

/// Runs the circle benchmark and measures the extracted interface against
/// the analytic radius law at each requested time. Times between grid
/// points evaluate the piecewise-linear-in-time interpolant of the
/// node-averaged snapshots, so the curve is the zero set of u^{ε,h,k}
/// at exactly the requested t.
pub fn circle_interface_study(
    study: &StudyConfig,
    n: usize,
    request_times: &[f64],
) -> Result<(Vec<InterfaceRow>, Vec<LevelSetCurve>)> {
    let TestCase::Circle { radius } = study.test else {
        return Err(Error::Config(
            "interface study requires the circle test case".into(),
        ));
    };
    let reference = McfReference::ShrinkingCircle { radius0: radius };
    let t_ext = reference.extinction_time().unwrap();
    for &t in request_times {
        if t >= t_ext {
            return Err(Error::Config(format!(
                "snapshot time {t} is at or past the circle extinction time {t_ext}"
            )));
        }
        if t > study.t_final * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "snapshot time {t} is past the final time {}",
                study.t_final
            )));
        }
    }
    let dt = study.time_step(n);

    // Each requested time needs its bracketing grid points.
    let grid = full_time_grid(dt, study.t_final);
    let tol = 1e-9 * study.t_final.max(1.0);
    let bracket = |t: f64| -> (usize, usize) {
        let hi = grid
            .iter()
            .position(|&g| g >= t - tol)
            .unwrap_or(grid.len() - 1);
        if (grid[hi] - t).abs() <= tol || hi == 0 {
            (hi, hi)
        } else {
            (hi - 1, hi)
        }
    };
    let mut needed: Vec<usize> = request_times
        .iter()
        .flat_map(|&t| {
            let (lo, hi) = bracket(t);
            [lo, hi]
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let snapshot_times: Vec<f64> = needed.iter().map(|&i| grid[i]).collect();

    let traj = run_level(study, n, dt, &snapshot_times)?;
    let averaged: Vec<_> = traj.fields.iter().map(node_average).collect();
    let snap_index = |grid_idx: usize| -> usize {
        needed.iter().position(|&i| i == grid_idx).unwrap()
    };

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &t in request_times {
        let (lo, hi) = bracket(t);
        let curve = if lo == hi {
            extract_zero_level_set(&averaged[snap_index(lo)], t)
        } else {
            let interp = crate::postprocess::time_interpolant(
                &averaged[snap_index(lo)],
                &averaged[snap_index(hi)],
                grid[lo],
                grid[hi],
                t,
            );
            extract_zero_level_set(&interp, t)
        };
        let r_ref = reference.radius(t).unwrap();
        let row = match interface_distance(&curve, &reference, t) {
            InterfaceDistance::Distance(d) => InterfaceRow {
                time: t,
                reference_radius: r_ref,
                sup_distance: Some(d),
                mean_radius: curve.mean_radius(),
                segments: curve.segments.len(),
            },
            InterfaceDistance::Extinct => InterfaceRow {
                time: t,
                reference_radius: r_ref,
                sup_distance: None,
                mean_radius: None,
                segments: 0,
            },
        };
        rows.push(row);
        curves.push(curve);
    }
    Ok((rows, curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_distance_axis_and_boundary_points() {
        let (a, b) = (0.6, 0.2);
        // On the ellipse.
        assert!(ellipse_distance([0.6, 0.0], a, b) < 1e-12);
        assert!(ellipse_distance([0.0, 0.2], a, b) < 1e-12);
        // Center: min semi-axis.
        assert!((ellipse_distance([0.0, 0.0], a, b) - 0.2).abs() < 1e-12);
        // Outside along the major axis.
        assert!((ellipse_distance([1.2, 0.0], a, b) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ellipse_distance_matches_dense_sampling_oracle() {
        let (a, b) = (0.6, 0.2);
        let probes = [
            [0.5, 0.0],
            [0.3, 0.1],
            [-0.7, 0.05],
            [0.1, -0.5],
            [0.45, 0.18],
            [-0.2, -0.02],
        ];
        for &p in &probes {
            let fast = ellipse_distance(p, a, b);
            let theta = dense_angular_minimum(p[0].abs(), p[1].abs(), a, b);
            let (s, c) = theta.sin_cos();
            let slow = ((a * c - p[0].abs()).powi(2) + (b * s - p[1].abs()).powi(2)).sqrt();
            assert!(
                (fast - slow).abs() < 1e-9,
                "point {p:?}: fast {fast} vs sampled {slow}"
            );
        }
    }

    #[test]
    fn interior_axis_point_prefers_off_axis_nearest_point() {
        // (0.5, 0) against the 0.6 x 0.2 ellipse: the nearest point is off
        // the axis; minimizing over the closed-form critical angle gives
        // d² = (0.5 − 0.6 c)² + 0.04 (1 − c²) with c = 15/16.
        let c = 15.0 / 16.0_f64;
        let expect = ((0.5 - 0.6 * c).powi(2) + 0.04 * (1.0 - c * c)).sqrt();
        let got = ellipse_distance([0.5, 0.0], 0.6, 0.2);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn signed_distance_has_unit_gradient_along_rays() {
        let field = SignedEllipseDistance { a: 0.6, b: 0.2 };
        let mut state = 42_u64;
        let mut rand = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let x = [rand(), rand()];
            let d = ellipse_distance(x, 0.6, 0.2);
            if d < 2e-3 {
                continue; // too close to the curve for centered differences
            }
            let g = field.gradient(x);
            // One-sided slopes along the ray; skip medial-axis kinks where
            // they disagree.
            let fp = (field.value([x[0] + h * g[0], x[1] + h * g[1]]) - field.value(x)) / h;
            let fm = (field.value(x) - field.value([x[0] - h * g[0], x[1] - h * g[1]])) / h;
            if (fp - fm).abs() > 1e-3 {
                continue;
            }
            let slope = 0.5 * (fp + fm);
            assert!(
                (slope - 1.0).abs() < 1e-4,
                "slope {slope} at {x:?} (d = {d})"
            );
            checked += 1;
        }
    }

    #[test]
    fn test1_profile_sign_structure() {
        let profile = TestCase::Test1Ellipse.initial_profile(0.125);
        // Deep inside the ellipse: near -1. Far outside: near +1.
        assert!(profile.value([0.0, 0.0]) < -0.5);
        assert!(profile.value([0.9, 0.9]) > 0.9);
        // On the curve: zero.
        assert!(profile.value([0.6, 0.0]).abs() < 1e-12);
        assert!(profile.value([0.0, -0.2]).abs() < 1e-12);
    }

    #[test]
    fn profile_gradient_matches_finite_differences() {
        for test in [
            TestCase::Test1Ellipse,
            TestCase::Test2TwoEllipses { symmetrized: false },
            TestCase::Circle { radius: 0.5 },
            TestCase::Manufactured,
        ] {
            let profile = test.initial_profile(0.125);
            let h = 1e-6;
            for &x in &[[0.31, 0.17], [-0.52, 0.33], [0.05, -0.41]] {
                let g = profile.gradient(x);
                let fx = (profile.value([x[0] + h, x[1]]) - profile.value([x[0] - h, x[1]]))
                    / (2.0 * h);
                let fy = (profile.value([x[0], x[1] + h]) - profile.value([x[0], x[1] - h]))
                    / (2.0 * h);
                assert!(
                    (g[0] - fx).abs() < 1e-5 && (g[1] - fy).abs() < 1e-5,
                    "{:?} at {x:?}: {g:?} vs ({fx}, {fy})",
                    test.name()
                );
            }
        }
    }

    #[test]
    fn interface_width_scales_initial_slope() {
        // |∇u0| at an interface point grows like 1/(√2 ε).
        let p = [0.6, 0.0];
        let slope = |eps: f64| {
            let profile = TestCase::Test1Ellipse.initial_profile(eps);
            let g = profile.gradient(p);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        };
        let s1 = slope(0.125);
        let s2 = slope(0.25);
        assert!(
            (s1 / s2 - 2.0).abs() < 1e-9,
            "slopes {s1} vs {s2} should scale by 2"
        );
        assert!((s1 - 1.0 / (2.0_f64.sqrt() * 0.125)).abs() < 1e-9);
    }

    #[test]
    fn two_ellipse_branch_table() {
        // Inside wide ellipse only: - phase.
        assert_eq!(two_ellipse_sign([0.4, 0.0], false), -1.0);
        // Inside tall ellipse only: - phase.
        assert_eq!(two_ellipse_sign([0.0, 0.4], false), -1.0);
        // Outside both: + phase.
        assert_eq!(two_ellipse_sign([0.8, 0.8], false), 1.0);
        // Inside both and inside the printed circle: + phase.
        assert_eq!(two_ellipse_sign([0.05, 0.05], false), 1.0);
        // The unassigned corner (inside both ellipses, outside the printed
        // circle): + by our completion, matching the symmetrized table.
        let gap = [0.15, 0.15];
        assert_eq!(two_ellipse_sign(gap, false), 1.0);
        assert_eq!(two_ellipse_sign(gap, true), 1.0);
    }

    #[test]
    fn time_grid_includes_shortened_tail() {
        let grid = full_time_grid(3e-3, 1e-2);
        assert_eq!(grid.len(), 5);
        assert!((grid[3] - 9e-3).abs() < 1e-15);
        assert!((grid[4] - 1e-2).abs() < 1e-15);
        let exact = full_time_grid(2.5e-3, 1e-2);
        assert_eq!(exact.len(), 5);
        assert!((exact[4] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn manufactured_study_produces_second_order_rates() {
        // Smooth relaxation, no interface: a light end-to-end check of the
        // study machinery. Levels are deliberately coarse to stay fast.
        let mut study = StudyConfig::new(TestCase::Manufactured, 0.5, vec![4, 8, 16], 0.02);
        study.workers = 4;
        let table = convergence_study(&study).unwrap();
        assert_eq!(table.rows.len(), 3);
        // Order entries are exactly the log ratios of adjacent errors.
        for i in 1..table.rows.len() {
            let ratio = table.rows[i - 1].h / table.rows[i].h;
            let expect = (table.rows[i - 1].linf_l2.unwrap() / table.rows[i].linf_l2.unwrap())
                .ln()
                / ratio.ln();
            let stored = table.rows[i].linf_l2_order.unwrap();
            assert!((stored - expect).abs() < 1e-12);
        }
        let (l2_order, h1_order) = table.fitted_orders();
        let l2_order = l2_order.unwrap();
        let h1_order = h1_order.unwrap();
        assert!(
            (1.6..=2.4).contains(&l2_order),
            "L2 order {l2_order}, table {:?}",
            table.rows
        );
        assert!(
            (0.7..=1.3).contains(&h1_order),
            "H1 order {h1_order}, table {:?}",
            table.rows
        );
    }
}
