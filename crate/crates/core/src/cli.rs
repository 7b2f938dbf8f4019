//! Command-line front end: `run`, `converge`, `spectrum`, `interface` and
//! `energy` subcommands.
//!
//! Every option can also come from a flat key=value config file
//! (`--config`); command-line flags win on conflict. Each subcommand
//! writes a `manifest.txt` with the fully resolved parameters into the
//! output directory before doing any work — the manifest is itself a
//! valid config file, so a run is reproducible from it alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{circle_interface_study, convergence_study, StudyConfig, TestCase};
use crate::forms::{default_penalty_value, FnField, ScalarField};
use crate::io;
use crate::mesh::Mesh;
use crate::postprocess::{extract_zero_level_set, node_average};
use crate::space::DgSpace;
use crate::spectrum::spectrum_study;
use crate::stepper::{InitialData, SchemeConfig, Stepper};

#[derive(Parser, Debug)]
#[command(
    name = "acdg",
    version,
    about = "Energy-stable interior penalty DG solver for the Allen-Cahn equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time-step one configuration and export energies and snapshots.
    Run(CommonArgs),
    /// Self-convergence study over a sequence of meshes.
    Converge(ConvergeArgs),
    /// Sweep of the discrete spectrum bound over mesh sizes.
    Spectrum(SpectrumArgs),
    /// Shrinking-circle benchmark: interface distance to the radius law.
    Interface(CommonArgs),
    /// Time-step one configuration and report the energy trace only.
    Energy(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// Test case: test1 | test2 | circle | manufactured.
    #[arg(long)]
    test: Option<String>,
    /// Interface width ε.
    #[arg(long)]
    eps: Option<f64>,
    /// Mesh subdivisions per side of the square domain.
    #[arg(long)]
    n: Option<usize>,
    /// Time step k (overrides --k-coupling).
    #[arg(long)]
    k: Option<f64>,
    /// Coupling constant C in k = C h².
    #[arg(long = "k-coupling")]
    k_coupling: Option<f64>,
    /// Final time T.
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// End time, an alias for --T used by the interface benchmark.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Polynomial degree r (1 or 2).
    #[arg(long)]
    degree: Option<usize>,
    /// IPDG switch λ; time stepping requires the symmetric variant -1.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Interior penalty σ (default 10 r²).
    #[arg(long)]
    penalty: Option<f64>,
    /// Initial data: nodal | elliptic-projection.
    #[arg(long)]
    init: Option<String>,
    #[arg(long = "newton-tol")]
    newton_tol: Option<f64>,
    #[arg(long = "newton-max-iter")]
    newton_max_iter: Option<usize>,
    /// Comma-separated snapshot times.
    #[arg(long)]
    snapshots: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker cap for concurrent runs within a study.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed recorded in the manifest (all computations are deterministic).
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key=value config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the symmetrized variant of the two-ellipse sign table.
    #[arg(long = "test2-symmetrized")]
    test2_symmetrized: bool,
    /// Circle radius for the circle test / interface benchmark.
    #[arg(long)]
    r0: Option<f64>,
    /// Shortcut for --test circle in the interface benchmark.
    #[arg(long)]
    circle: bool,
}

#[derive(Args, Debug, Clone)]
struct ConvergeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of doubling levels starting at --n.
    #[arg(long)]
    levels: Option<usize>,
    /// Explicit comma-separated mesh sizes (overrides --levels).
    #[arg(long = "n-list")]
    n_list: Option<String>,
    /// Run the whole study once per ε in this comma-separated list
    /// (writes table_eps<value>.csv per entry).
    #[arg(long = "eps-list")]
    eps_list: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct SpectrumArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Background profile: test1 | test2 | zero | plus-one | minus-one.
    #[arg(long)]
    profile: Option<String>,
    /// Explicit comma-separated mesh sizes.
    #[arg(long = "n-list")]
    n_list: Option<String>,
}

/// Fully resolved parameters: command line over config file over defaults.
struct Resolved {
    file: BTreeMap<String, String>,
    manifest: BTreeMap<String, String>,
}

impl Resolved {
    fn new(config_path: Option<&Path>) -> Result<Resolved> {
        let file = match config_path {
            Some(p) => io::read_config_file(p)?,
            None => BTreeMap::new(),
        };
        Ok(Resolved {
            file,
            manifest: BTreeMap::new(),
        })
    }

    fn lookup<T: std::str::FromStr>(
        &mut self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T>
    where
        T: std::fmt::Display,
    {
        let value = match cli {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|_| {
                    Error::Config(format!("config key '{key}' has unparseable value '{raw}'"))
                })?,
                None => default,
            },
        };
        self.manifest.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn lookup_opt_string(&mut self, key: &str, cli: Option<String>) -> Option<String> {
        let value = cli.or_else(|| self.file.get(key).cloned());
        if let Some(v) = &value {
            self.manifest.insert(key.to_string(), v.clone());
        }
        value
    }

    fn record(&mut self, key: &str, value: impl std::fmt::Display) {
        self.manifest.insert(key.to_string(), value.to_string());
    }
}

struct SchemeSetup {
    test: TestCase,
    eps: f64,
    n: usize,
    dt: f64,
    config: SchemeConfig,
    snapshots: Vec<f64>,
    out: PathBuf,
    workers: usize,
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn parse_init(name: &str) -> Result<InitialData> {
    match name {
        "nodal" | "nodal-interpolant" => Ok(InitialData::NodalInterpolant),
        "elliptic-projection" | "projection" => Ok(InitialData::EllipticProjection),
        other => Err(Error::Config(format!(
            "unknown initial data '{other}' (expected nodal or elliptic-projection)"
        ))),
    }
}

/// Resolves the scheme parameters shared by run/interface/energy.
fn resolve_scheme(
    args: &CommonArgs,
    resolved: &mut Resolved,
    default_test: &str,
    default_n: usize,
    default_t: f64,
) -> Result<SchemeSetup> {
    let test_name = if args.circle {
        "circle".to_string()
    } else {
        resolved
            .lookup_opt_string("test", args.test.clone())
            .unwrap_or_else(|| default_test.to_string())
    };
    resolved.record("test", &test_name);
    let symmetrized = args.test2_symmetrized
        || resolved.file.get("test2-symmetrized").map(|v| v == "true") == Some(true);
    resolved.record("test2-symmetrized", symmetrized);
    let r0 = resolved.lookup("r0", args.r0, 0.5)?;
    let test = TestCase::parse(&test_name, symmetrized, r0)?;

    let eps = resolved.lookup("eps", args.eps, 0.125)?;
    let n = resolved.lookup("n", args.n, default_n)?;
    let snapshots_text = resolved
        .lookup_opt_string("snapshots", args.snapshots.clone())
        .unwrap_or_default();
    resolved.record("snapshots", &snapshots_text);
    let snapshots = parse_f64_list(&snapshots_text, "snapshot time")?;
    // Unless T is given, run at least until the last requested snapshot.
    let default_t = snapshots
        .iter()
        .fold(default_t, |acc, &t| acc.max(t));
    let t_final = resolved.lookup(
        "T",
        args.t_final.or(args.t_end),
        default_t,
    )?;
    let degree = resolved.lookup("degree", args.degree, 1)?;
    let k_coupling = resolved.lookup("k-coupling", args.k_coupling, 0.25)?;
    let h = 2.0_f64.sqrt() * 2.0 / n as f64;
    let default_k = (k_coupling * h * h).min(t_final);
    let dt = resolved.lookup("k", args.k, default_k)?;
    let lambda = resolved.lookup("lambda", args.lambda, -1.0)?;
    let penalty = resolved.lookup("penalty", args.penalty, default_penalty_value(degree))?;
    let init_name = resolved
        .lookup_opt_string("init", args.init.clone())
        .unwrap_or_else(|| "nodal".to_string());
    resolved.record("init", &init_name);
    let initial_data = parse_init(&init_name)?;
    let newton_tol = resolved.lookup("newton-tol", args.newton_tol, 1e-10)?;
    let newton_max_iter = resolved.lookup("newton-max-iter", args.newton_max_iter, 30)?;
    let out = args
        .out
        .clone()
        .or_else(|| resolved.file.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("acdg-out"));
    resolved.record("out", out.display());
    let workers = resolved.lookup("workers", args.workers, 4)?;
    // Recorded in the manifest; all computations here are deterministic.
    resolved.lookup("seed", args.seed, 0u64)?;

    let config = SchemeConfig {
        eps,
        dt,
        t_final,
        degree,
        lambda,
        penalty,
        newton_tol,
        newton_max_iter,
        initial_data,
    };
    config.validate()?;
    if !config.uniqueness_guaranteed() {
        eprintln!(
            "warning: k = {dt} violates the uniqueness constraint k < 2 eps^2 = {}; \
             energy decay still holds but the step solution may be non-unique",
            2.0 * eps * eps
        );
    }
    Ok(SchemeSetup {
        test,
        eps,
        n,
        dt,
        config,
        snapshots,
        out,
        workers,
    })
}

fn study_from_setup(setup: &SchemeSetup, levels: Vec<usize>) -> StudyConfig {
    let mut study = StudyConfig::new(setup.test, setup.eps, levels, setup.config.t_final);
    study.degree = setup.config.degree;
    study.lambda = setup.config.lambda;
    study.penalty = setup.config.penalty;
    study.newton_tol = setup.config.newton_tol;
    study.newton_max_iter = setup.config.newton_max_iter;
    study.initial_data = setup.config.initial_data;
    study.workers = setup.workers;
    study
}

fn cmd_run(args: &CommonArgs, energies_only: bool) -> Result<()> {
    let mut resolved = Resolved::new(args.config.as_deref())?;
    let setup = resolve_scheme(args, &mut resolved, "test1", 20, 0.01)?;
    io::write_manifest(&setup.out.join("manifest.txt"), &resolved.manifest)?;

    let mesh = Arc::new(Mesh::rectangle([-1.0, -1.0], [1.0, 1.0], setup.n)?);
    let space = DgSpace::new(Arc::clone(&mesh), setup.config.degree);
    let stepper = Stepper::new(Arc::clone(&space), setup.config.clone())?;
    let profile = setup.test.initial_profile(setup.eps);
    let u0 = stepper.initial_field(profile.as_ref())?;

    let out = match stepper.run(u0, &setup.snapshots) {
        Ok(out) => out,
        Err(failure) => {
            // Preserve the partial trace before reporting the failure.
            io::write_energy_csv(&setup.out.join("energy.csv"), &failure.partial.trace)?;
            return Err(failure.cause);
        }
    };

    io::write_energy_csv(&setup.out.join("energy.csv"), &out.trace)?;
    println!(
        "run: test={} eps={} n={} k={} T={} steps={} newton_iterations={}",
        setup.test.name(),
        setup.eps,
        setup.n,
        setup.dt,
        setup.config.t_final,
        out.trace.records.len() - 1,
        out.total_newton_iterations
    );
    println!(
        "energy: J(0)={:.6e} J(T)={:.6e} worst_step_increase={:.3e}",
        out.trace.records.first().unwrap().energy_j,
        out.trace.records.last().unwrap().energy_j,
        out.trace.worst_energy_increase()
    );

    if !energies_only {
        io::write_vtk_mesh(&setup.out.join("mesh.vtk"), &mesh)?;
        let mut curves = Vec::new();
        for (idx, (t, field)) in out.snapshots.iter().enumerate() {
            let averaged = node_average(field);
            io::write_vtk_field(
                &setup.out.join(format!("u_{idx:03}.vtk")),
                field,
                &averaged,
                "u",
            )?;
            let curve = extract_zero_level_set(&averaged, *t);
            io::write_vtk_polylines(
                &setup.out.join(format!("interface_{idx:03}.vtk")),
                &curve,
            )?;
            curves.push(curve);
        }
        io::write_level_set_csv(&setup.out.join("levelset.csv"), &curves)?;
        println!(
            "wrote {} snapshot(s) to {}",
            out.snapshots.len(),
            setup.out.display()
        );
    }
    Ok(())
}

fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let mut resolved = Resolved::new(args.common.config.as_deref())?;
    let setup = resolve_scheme(&args.common, &mut resolved, "test1", 10, 0.01)?;

    let n_list_text = args
        .n_list
        .clone()
        .or_else(|| resolved.file.get("n-list").cloned());
    let levels: Vec<usize> = match n_list_text {
        Some(text) => {
            resolved.record("n-list", &text);
            parse_usize_list(&text, "mesh size")?
        }
        None => {
            let count = match args.levels {
                Some(c) => c,
                None => resolved.lookup("levels", None, 3usize)?,
            };
            resolved.record("levels", count);
            (0..count).map(|i| setup.n << i).collect()
        }
    };
    // Optional sweep over several interface widths.
    let eps_values: Vec<f64> = match args
        .eps_list
        .clone()
        .or_else(|| resolved.file.get("eps-list").cloned())
    {
        Some(text) => {
            resolved.record("eps-list", &text);
            parse_f64_list(&text, "eps")?
        }
        None => vec![setup.eps],
    };
    io::write_manifest(&setup.out.join("manifest.txt"), &resolved.manifest)?;

    let mut base_study = study_from_setup(&setup, levels);
    base_study.k_coupling = resolved.lookup("k-coupling", args.common.k_coupling, 0.25)?;
    if args.common.k.is_some() || resolved.file.contains_key("k") {
        base_study.explicit_k = Some(setup.dt);
    }
    let single = eps_values.len() == 1;
    for &eps in &eps_values {
        let mut study = base_study.clone();
        study.eps = eps;
        let table = convergence_study(&study)?;
        let file = if single {
            "table.csv".to_string()
        } else {
            format!("table_eps{eps}.csv")
        };
        io::write_convergence_csv(&setup.out.join(file), &table.rows)?;

        println!(
            "convergence study: test={} eps={} reference n={} k={:.3e}",
            setup.test.name(),
            eps,
            table.reference.0,
            table.reference.1
        );
        println!("h,Linf_L2_error,Linf_L2_order,L2_H1_error,L2_H1_order");
        for row in &table.rows {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.5e}"));
            let o = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            println!(
                "{:.5e},{},{},{},{}",
                row.h,
                f(row.linf_l2),
                o(row.linf_l2_order),
                f(row.l2_h1),
                o(row.l2_h1_order)
            );
        }
        let (l2, h1) = table.fitted_orders();
        println!(
            "fitted orders: Linf_L2={} L2_H1={}",
            l2.map_or("-".to_string(), |x| format!("{x:.4}")),
            h1.map_or("-".to_string(), |x| format!("{x:.4}"))
        );
    }
    Ok(())
}

fn cmd_spectrum(args: &SpectrumArgs) -> Result<()> {
    let mut resolved = Resolved::new(args.common.config.as_deref())?;
    let profile_name = args
        .profile
        .clone()
        .or_else(|| resolved.file.get("profile").cloned())
        .unwrap_or_else(|| "test1".to_string());
    resolved.record("profile", &profile_name);
    let eps = resolved.lookup("eps", args.common.eps, 0.125)?;
    let degree = resolved.lookup("degree", args.common.degree, 1)?;
    let penalty = resolved.lookup(
        "penalty",
        args.common.penalty,
        default_penalty_value(degree),
    )?;
    let n_list_text = args
        .n_list
        .clone()
        .or_else(|| resolved.file.get("n-list").cloned())
        .unwrap_or_else(|| "10,20,40".to_string());
    resolved.record("n-list", &n_list_text);
    let levels = parse_usize_list(&n_list_text, "mesh size")?;
    let out = args
        .out_dir()
        .or_else(|| resolved.file.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("acdg-out"));
    resolved.record("out", out.display());
    io::write_manifest(&out.join("manifest.txt"), &resolved.manifest)?;

    let profile: Box<dyn ScalarField + Send> = match profile_name.as_str() {
        "zero" => Box::new(FnField {
            value: |_| 0.0,
            gradient: |_| [0.0, 0.0],
        }),
        "plus-one" => Box::new(FnField {
            value: |_| 1.0,
            gradient: |_| [0.0, 0.0],
        }),
        "minus-one" => Box::new(FnField {
            value: |_| -1.0,
            gradient: |_| [0.0, 0.0],
        }),
        name => {
            let symmetrized = args.common.test2_symmetrized;
            let r0 = args.common.r0.unwrap_or(0.5);
            TestCase::parse(name, symmetrized, r0)?.initial_profile(eps)
        }
    };

    let report = spectrum_study(
        &profile_name,
        profile.as_ref(),
        eps,
        &levels,
        degree,
        penalty,
        ([-1.0, -1.0], [1.0, 1.0]),
    )?;
    io::write_spectrum_csv(&out.join("spectrum.csv"), &report)?;
    println!("profile,eps,n,h,lambda_dg,residual");
    for row in &report.rows {
        println!(
            "{},{},{},{:.5e},{:.8e},{:.2e}",
            row.profile, row.eps, row.n, row.h, row.lambda_dg, row.residual
        );
    }
    println!(
        "empirical lower bound: {:.8e} (relative spread {:.3})",
        report.empirical_lower_bound(),
        report.relative_spread()
    );
    Ok(())
}

impl SpectrumArgs {
    fn out_dir(&self) -> Option<PathBuf> {
        self.common.out.clone()
    }
}

fn cmd_interface(args: &CommonArgs) -> Result<()> {
    let mut resolved = Resolved::new(args.config.as_deref())?;
    let mut args = args.clone();
    if !args.circle && args.test.is_none() {
        args.circle = true;
    }
    let setup = resolve_scheme(&args, &mut resolved, "circle", 64, 0.1)?;
    let TestCase::Circle { radius } = setup.test else {
        return Err(Error::Config(
            "the interface benchmark runs the circle test case".into(),
        ));
    };
    io::write_manifest(&setup.out.join("manifest.txt"), &resolved.manifest)?;

    // Default snapshots: eight times up to T, strictly before extinction.
    let extinction = 0.5 * radius * radius;
    let snapshots = if setup.snapshots.is_empty() {
        let t_max = setup.config.t_final.min(0.9 * extinction);
        (1..=8).map(|i| t_max * i as f64 / 8.0).collect()
    } else {
        setup.snapshots.clone()
    };

    let mut study = study_from_setup(&setup, vec![setup.n]);
    study.explicit_k = Some(setup.dt);
    let (rows, curves) = circle_interface_study(&study, setup.n, &snapshots)?;
    io::write_interface_csv(&setup.out.join("interface.csv"), &rows)?;
    io::write_level_set_csv(&setup.out.join("levelset.csv"), &curves)?;
    for (idx, curve) in curves.iter().enumerate() {
        io::write_vtk_polylines(
            &setup.out.join(format!("interface_{idx:03}.vtk")),
            curve,
        )?;
    }

    println!("t,reference_radius,sup_distance,mean_radius,segments");
    for row in &rows {
        match (row.sup_distance, row.mean_radius) {
            (Some(d), Some(m)) => println!(
                "{:.5e},{:.6},{:.4e},{:.6},{}",
                row.time, row.reference_radius, d, m, row.segments
            ),
            _ => println!("{:.5e},{:.6},extinct,-,0", row.time, row.reference_radius),
        }
    }
    Ok(())
}

/// Entry point used by the binary and by tests; returns the exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/version through this path.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args, false),
        Command::Energy(args) => cmd_run(args, true),
        Command::Converge(args) => cmd_converge(args),
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::Interface(args) => cmd_interface(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
