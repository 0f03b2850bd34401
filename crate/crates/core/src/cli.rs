//! Command-line driver.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.
//! `--config FILE` reads `key = value` lines (keys are long flag names,
//! optionally under a `[subcommand]` section); flags on the command line
//! override the file, which overrides the defaults.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gp::{gp_log_marginal, gp_log_marginal_independent, gp_posterior_sparse};
use crate::hyper::{
    gp_objective, maximize, or_nan, statfem_objective, write_trace, HyperName, HyperPoint, HyperResult, HyperSpec,
    Readings,
};
use crate::io::{read_dirichlet, read_observations, write_node_csv, write_rows, write_rows_to, write_vtk};
use crate::mesh::{generate, load_boundary_sidecar, load_mesh, Mesh, MeshFormat};
use crate::rational::best_rational_approx;
use crate::sparse::SparseMatrix;
use crate::spde::{
    build_field_with, convergence_study, fit_loglog_slope, matern_kernel, save_field, FieldOptions, MaternParams,
};
use crate::statfem::{assemble_forward, forward_prior, statfem_posterior, true_response_variances, MismatchField};

#[derive(Parser, Debug)]
#[command(
    name = "spdefem",
    version,
    about = "Matérn fields on finite-element meshes: sampling, GP regression and statFEM"
)]
struct Cli {
    /// `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw field samples at the mesh nodes.
    Sample(SampleArgs),
    /// Covariance column of a field at a point.
    Cov(CovArgs),
    /// Gaussian-process regression with optional hyperparameter fit.
    Regress(RegressArgs),
    /// Statistical finite elements for a Poisson problem.
    Statfem(StatfemArgs),
    /// Covariance error against the analytic Matérn kernel under refinement.
    Convergence(ConvergenceArgs),
    /// Best rational approximation of x^γ on [ε, 1].
    Rational(RationalArgs),
}

#[derive(Args, Debug, Clone)]
struct MeshArgs {
    /// Mesh file: one line of interval coordinates, or `.off` triangles.
    #[arg(long, value_name = "FILE")]
    mesh: Option<PathBuf>,
    /// Boundary label file for `--mesh` (`label: i1 i2 ...` lines).
    #[arg(long, value_name = "FILE")]
    boundary: Option<PathBuf>,
    /// Uniform interval `a:b:n` with n elements.
    #[arg(long, value_name = "A:B:N")]
    interval: Option<String>,
    /// Unit square with n×n cells.
    #[arg(long, value_name = "N")]
    square: Option<usize>,
    /// Unit hemisphere at refinement level n.
    #[arg(long, value_name = "N")]
    hemisphere: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct FieldArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    /// Smoothness; defaults to the value giving β = 1.
    #[arg(long)]
    nu: Option<f64>,
    /// Rational approximation degree m for fractional β.
    #[arg(long, default_value_t = 6)]
    degree: usize,
    /// Lower end ε of the rational approximation interval.
    #[arg(long, default_value_t = crate::rational::DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SampleArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add the marginal variances as a column.
    #[arg(long)]
    variance: bool,
    /// Output file; `.vtk` writes VTK, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also store the field in the binary field format.
    #[arg(long, value_name = "FILE")]
    save_field: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CovArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    field: FieldArgs,
    /// Reference point, comma separated.
    #[arg(long, value_name = "X[,Y[,Z]]")]
    at: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    /// Maximize the log marginal likelihood over the lengthscale and amplitude.
    #[arg(long)]
    fit_hyper: bool,
    /// Also fit σ_e.
    #[arg(long)]
    fit_noise: bool,
    /// Bounds `lo:hi` for the fitted amplitude (default: start/100 to start·100).
    #[arg(long, value_name = "LO:HI")]
    sigma_bounds: Option<String>,
    /// Bounds `lo:hi` for the fitted lengthscale.
    #[arg(long, value_name = "LO:HI")]
    ell_bounds: Option<String>,
    /// Bounds `lo:hi` for a fitted σ_e.
    #[arg(long, value_name = "LO:HI")]
    sigma_e_bounds: Option<String>,
    /// Latin-grid restarts besides the initial point.
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every objective evaluation to this CSV.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum ReadingsArg {
    Shared,
    Independent,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct RegressArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    field: FieldArgs,
    /// Observations CSV (`x1[,x2[,x3]],y1[,y2,...]`).
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    sigma_e: f64,
    /// Whether repeated readings share one field realization.
    #[arg(long, value_enum, default_value_t = ReadingsArg::Shared)]
    readings: ReadingsArg,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct StatfemArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    /// Dirichlet spec (`<label> <value>` or `<label> random <value>` lines).
    #[arg(long)]
    dirichlet: PathBuf,
    /// Constant mean source f̄.
    #[arg(long, default_value_t = 1.0)]
    fbar: f64,
    /// Source amplitude.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    /// Source smoothness; must give integer β (default β = 1).
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    sigma_d: f64,
    #[arg(long, default_value_t = 1.0)]
    ell_d: f64,
    /// Mismatch smoothness; must give integer β (default β = 1).
    #[arg(long)]
    nu_d: Option<f64>,
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    sigma_e: f64,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ConvergenceArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    ell: f64,
    /// Levels h = 1/50 · 2^-k, k = 0..levels.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 6)]
    degree: usize,
    #[arg(long, default_value_t = crate::rational::DEFAULT_EPSILON)]
    epsilon: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct RationalArgs {
    #[arg(long, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long, default_value_t = 6)]
    degree: usize,
    #[arg(long, default_value_t = crate::rational::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Error-curve samples.
    #[arg(long, default_value_t = 400)]
    points: usize,
    /// Error curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error with the stage it came from.
struct Failure {
    stage: &'static str,
    err: Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.err)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure { stage: "input", err }
    }
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|err| Failure { stage, err })
    }
}

type Run = std::result::Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Ok(v) = std::env::var("SPDE_THREADS") {
        if !v.trim().parse::<usize>().is_ok_and(|n| n > 0) {
            eprintln!("error: SPDE_THREADS must be a positive integer, got `{v}`");
            return 2;
        }
    }
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let out = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Cov(a) => cov(a),
        Command::Regress(a) => regress(a),
        Command::Statfem(a) => statfem(a),
        Command::Convergence(a) => convergence(a),
        Command::Rational(a) => rational(a),
    };
    match out {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error in {f}");
            if f.err.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

/// Splices `--key value` pairs from the config file right after the
/// subcommand name so that later command-line flags override them.
fn apply_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            path = Some(PathBuf::from(
                it.next().ok_or_else(|| invalid("--config needs a file"))?,
            ));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let Some(pos) = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
    else {
        return Ok(rest);
    };
    let name = rest[pos].to_string_lossy().into_owned();
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&name) else {
        return Ok(rest);
    };
    let takes_value = |cmd: &clap::Command, key: &str| -> Option<bool> {
        cmd.get_arguments()
            .find(|a| a.get_long() == Some(key))
            .map(|a| a.get_action().takes_values())
    };
    let mut extra: Vec<OsString> = Vec::new();
    let text = std::fs::read_to_string(&path)?;
    let mut section: Option<String> = None;
    for (ln, line) in text.lines().enumerate() {
        let perr = |m: String| Error::Parse {
            path: path.clone(),
            line: ln + 1,
            message: m,
        };
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(s) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let s = s.trim().to_string();
            if root.find_subcommand(&s).is_none() {
                return Err(perr(format!("unknown section [{s}]")));
            }
            section = Some(s);
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| perr("expected `key = value`".into()))?;
        let key = k.trim().replace('_', "-");
        let val = v.trim().trim_matches('"').to_string();
        if key == "config" {
            return Err(perr("config files cannot nest".into()));
        }
        let scoped = section.as_deref();
        if scoped.is_some_and(|s| s != name) {
            continue;
        }
        let known = match takes_value(sub, &key) {
            Some(k) => k,
            None if scoped.is_none() && root.get_subcommands().any(|c| takes_value(c, &key).is_some()) => continue,
            None => return Err(perr(format!("`{key}` is not a flag of `{name}`"))),
        };
        if known {
            extra.push(format!("--{key}").into());
            extra.push(val.into());
        } else {
            match val.as_str() {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(perr(format!("`{key}` is a switch; use true or false"))),
            }
        }
    }
    let tail = rest.split_off(pos + 1);
    rest.extend(extra);
    rest.extend(tail);
    Ok(rest)
}

fn parse_bounds(s: &Option<String>, default: (f64, f64), what: &str) -> Result<(f64, f64)> {
    match s {
        None => Ok(default),
        Some(s) => {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| invalid(format!("{what} bounds must be `lo:hi`, got `{s}`")))?;
            let p = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("bad {what} bound `{t}`")))
            };
            Ok((p(a)?, p(b)?))
        }
    }
}

fn build_mesh(a: &MeshArgs) -> Result<Mesh> {
    let given = [
        a.mesh.is_some(),
        a.interval.is_some(),
        a.square.is_some(),
        a.hemisphere.is_some(),
    ];
    if given.iter().filter(|g| **g).count() != 1 {
        return Err(invalid(
            "give exactly one of --mesh, --interval, --square, --hemisphere",
        ));
    }
    if a.boundary.is_some() && a.mesh.is_none() {
        return Err(invalid("--boundary applies to --mesh only"));
    }
    if let Some(p) = &a.mesh {
        let mut m = load_mesh(p, MeshFormat::from_path(p))?;
        if let Some(b) = &a.boundary {
            load_boundary_sidecar(&mut m, b)?;
        }
        return Ok(m);
    }
    if let Some(s) = &a.interval {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || invalid(format!("--interval must be `a:b:n`, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return generate::interval(lo, hi, n);
    }
    if let Some(n) = a.square {
        return generate::unit_square(n);
    }
    generate::hemisphere(a.hemisphere.unwrap())
}

fn default_nu(nu: Option<f64>, dim: usize) -> f64 {
    nu.unwrap_or_else(|| MaternParams::nu_for_beta(1.0, dim))
}

fn field_setup(mesh: &Mesh, f: &FieldArgs) -> Result<(MaternParams, FieldOptions)> {
    let p = MaternParams::new(f.sigma, f.ell, default_nu(f.nu, mesh.dim_param()), mesh.dim_param())?;
    Ok((
        p,
        FieldOptions {
            degree: f.degree,
            epsilon: f.epsilon,
        },
    ))
}

fn write_fields(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    let vtk = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("vtk"));
    if vtk {
        write_vtk(path, mesh, fields)
    } else {
        write_node_csv(path, mesh, fields)
    }
}

fn sample(a: SampleArgs) -> Run {
    let mesh = build_mesh(&a.mesh)?;
    let (p, opts) = field_setup(&mesh, &a.field)?;
    if a.samples == 0 {
        return Err(invalid("--samples must be at least 1").into());
    }
    let field = build_field_with(&mesh, &p, &opts, None).at("field")?;
    let s = field.sample(a.samples, a.seed);
    let names: Vec<String> = (1..=a.samples).map(|k| format!("s{k}")).collect();
    let cols: Vec<Vec<f64>> = (0..a.samples).map(|k| s.column(k).iter().copied().collect()).collect();
    let var = if a.variance {
        let all: Vec<usize> = (0..mesh.n_nodes()).collect();
        Some(field.variances(&all).at("variances")?)
    } else {
        None
    };
    let mut fields: Vec<(&str, &[f64])> = names
        .iter()
        .map(|n| n.as_str())
        .zip(cols.iter().map(|c| c.as_slice()))
        .collect();
    if let Some(v) = &var {
        fields.push(("variance", v));
    }
    write_fields(&a.out, &mesh, &fields).at("output")?;
    if let Some(path) = &a.save_field {
        save_field(&field, path).at("output")?;
    }
    Ok(())
}

fn parse_point(s: &str, dim: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| invalid(format!("bad coordinate `{t}` in --at")))
        })
        .collect::<Result<_>>()?;
    if v.len() != dim {
        return Err(invalid(format!("--at needs {dim} coordinates, got {}", v.len())));
    }
    Ok(v)
}

fn cov(a: CovArgs) -> Run {
    let mesh = build_mesh(&a.mesh)?;
    let (p, opts) = field_setup(&mesh, &a.field)?;
    let x = parse_point(&a.at, mesh.dim_embed())?;
    let field = build_field_with(&mesh, &p, &opts, None).at("field")?;
    let c = field.covariance_at(&mesh, &x).at("covariance")?;
    let mut fields: Vec<(&str, &[f64])> = vec![("covariance", &c)];
    let kernel: Vec<f64>;
    if !mesh.is_manifold() {
        kernel = mesh
            .nodes()
            .map(|y| matern_kernel(&p, crate::mesh::dist(y, &x)))
            .collect();
        fields.push(("matern", &kernel));
    }
    write_fields(&a.out, &mesh, &fields).at("output")?;
    Ok(())
}

fn hyper_spec(fit: &FitArgs, free: Vec<(HyperName, (f64, f64))>, fixed: HyperPoint) -> Result<HyperSpec> {
    let triples: Vec<(HyperName, f64, f64)> = free.into_iter().map(|(n, (lo, hi))| (n, lo, hi)).collect();
    let mut spec = HyperSpec::new(&triples, fixed)?;
    spec.seed = fit.seed;
    spec.restarts = fit.restarts;
    Ok(spec)
}

fn report_fit(spec: &HyperSpec, r: &HyperResult, trace: &Option<PathBuf>) -> Run {
    for (n, v) in spec.names().iter().zip(&r.params) {
        println!("{n} = {v:.10e}");
    }
    println!("log_marginal = {:.10e}", r.value);
    println!("evaluations = {}", r.trace.len());
    if let Some(path) = trace {
        let f = std::fs::File::create(path).map_err(Error::from).at("output")?;
        write_trace(f, spec.names(), &r.trace).at("output")?;
    }
    Ok(())
}

fn regress(a: RegressArgs) -> Run {
    let mesh = build_mesh(&a.mesh)?;
    let (mut p, opts) = field_setup(&mesh, &a.field)?;
    let table = read_observations(&a.obs)?;
    let mut obs = table.into_observations(&mesh, a.sigma_e).at("observations")?;
    let readings = match a.readings {
        ReadingsArg::Shared => Readings::Shared,
        ReadingsArg::Independent => Readings::Independent,
    };
    if a.fit.fit_hyper || a.fit.fit_noise {
        let mut free = Vec::new();
        if a.fit.fit_hyper {
            free.push((
                HyperName::Sigma,
                parse_bounds(&a.fit.sigma_bounds, (p.sigma / 100.0, p.sigma * 100.0), "sigma")?,
            ));
            free.push((
                HyperName::Ell,
                parse_bounds(&a.fit.ell_bounds, (p.ell / 100.0, p.ell * 100.0), "ell")?,
            ));
        }
        if a.fit.fit_noise {
            free.push((
                HyperName::SigmaE,
                parse_bounds(&a.fit.sigma_e_bounds, (a.sigma_e / 100.0, a.sigma_e * 100.0), "sigma_e")?,
            ));
        }
        let fixed = HyperPoint {
            sigma: p.sigma,
            ell: p.ell,
            sigma_d: 1.0,
            ell_d: 1.0,
            sigma_e: a.sigma_e,
        };
        let spec = hyper_spec(&a.fit, free, fixed)?;
        let init = spec.free_values(&fixed);
        let nu = p.nu;
        let degree = opts.degree;
        let r = maximize(
            |x: &[f64]| or_nan(gp_objective(&mesh, nu, degree, &obs, readings, &spec.point(x))),
            &spec,
            &init,
        )
        .at("hyperparameter fit")?;
        report_fit(&spec, &r, &a.fit.trace)?;
        let best = r.point(&spec);
        p.sigma = best.sigma;
        p.ell = best.ell;
        obs = obs.with_sigma_e(best.sigma_e)?;
    }
    let field = build_field_with(&mesh, &p, &opts, None).at("field")?;
    let lml = match readings {
        Readings::Shared => gp_log_marginal(&field, &obs),
        Readings::Independent => gp_log_marginal_independent(&field, &obs),
    }
    .at("log marginal")?;
    println!("log_marginal_final = {lml:.10e}");
    let post = gp_posterior_sparse(&field, &obs).at("posterior")?;
    let all: Vec<usize> = (0..mesh.n_nodes()).collect();
    let var = post.variances(&all).at("posterior variances")?;
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let lower: Vec<f64> = post.mean().iter().zip(&sd).map(|(m, s)| m - 1.96 * s).collect();
    let upper: Vec<f64> = post.mean().iter().zip(&sd).map(|(m, s)| m + 1.96 * s).collect();
    write_fields(
        &a.out,
        &mesh,
        &[
            ("mean", post.mean()),
            ("variance", &var),
            ("lower95", &lower),
            ("upper95", &upper),
        ],
    )
    .at("output")?;
    Ok(())
}

fn statfem(a: StatfemArgs) -> Run {
    let mesh = build_mesh(&a.mesh)?;
    let dim = mesh.dim_param();
    let bc = read_dirichlet(&a.dirichlet)?;
    let fm = assemble_forward(&mesh, &bc, vec![a.fbar; mesh.n_nodes()]).at("forward model")?;
    let src_p = MaternParams::new(a.sigma, a.ell, default_nu(a.nu, dim), dim)?;
    let source = build_field_with(&mesh, &src_p, &FieldOptions::default(), None).at("source field")?;
    let prior = forward_prior(&fm, &source).at("solution prior")?;
    let mut obs = read_observations(&a.obs)?
        .into_observations(&mesh, a.sigma_e)
        .at("observations")?;
    let nu_d = default_nu(a.nu_d, dim);
    let mut d_p = MaternParams::new(a.sigma_d, a.ell_d, nu_d, dim)?;
    if d_p.to_spde()?.is_fractional() {
        return Err(invalid(format!(
            "mismatch smoothness nu_d = {nu_d} gives a fractional exponent; statFEM needs integer beta"
        ))
        .into());
    }
    if a.fit.fit_hyper || a.fit.fit_noise {
        let mut free = Vec::new();
        if a.fit.fit_hyper {
            free.push((
                HyperName::SigmaD,
                parse_bounds(&a.fit.sigma_bounds, (a.sigma_d / 100.0, a.sigma_d * 100.0), "sigma_d")?,
            ));
            free.push((
                HyperName::EllD,
                parse_bounds(&a.fit.ell_bounds, (a.ell_d / 100.0, a.ell_d * 100.0), "ell_d")?,
            ));
        }
        if a.fit.fit_noise {
            free.push((
                HyperName::SigmaE,
                parse_bounds(&a.fit.sigma_e_bounds, (a.sigma_e / 100.0, a.sigma_e * 100.0), "sigma_e")?,
            ));
        }
        let fixed = HyperPoint {
            sigma: a.sigma,
            ell: a.ell,
            sigma_d: a.sigma_d,
            ell_d: a.ell_d,
            sigma_e: a.sigma_e,
        };
        let spec = hyper_spec(&a.fit, free, fixed)?;
        let init = spec.free_values(&fixed);
        let r = maximize(
            |x: &[f64]| or_nan(statfem_objective(&prior, &mesh, nu_d, &obs, &spec.point(x))),
            &spec,
            &init,
        )
        .at("hyperparameter fit")?;
        report_fit(&spec, &r, &a.fit.trace)?;
        let best = r.point(&spec);
        d_p.sigma = best.sigma_d;
        d_p.ell = best.ell_d;
        obs = obs.with_sigma_e(best.sigma_e)?;
    }
    let mismatch = MismatchField::new(&mesh, &d_p).at("mismatch field")?;
    let post = statfem_posterior(&prior, &mismatch, &obs).at("posterior")?;
    println!("log_marginal = {:.10e}", post.log_marginal());
    let u_var = post.variances().at("posterior variances")?;
    let z_var =
        true_response_variances(&post, &mismatch, &SparseMatrix::identity(mesh.n_nodes())).at("true response")?;
    write_fields(
        &a.out,
        &mesh,
        &[
            ("prior_mean", prior.mean()),
            ("posterior_mean", post.mean()),
            ("posterior_variance", &u_var),
            ("z_variance", &z_var),
        ],
    )
    .at("output")?;
    Ok(())
}

fn convergence(a: ConvergenceArgs) -> Run {
    if a.levels < 2 {
        return Err(invalid("--levels must be at least 2 to fit a rate").into());
    }
    let nu = MaternParams::nu_for_beta(a.beta, 1);
    let p = MaternParams::new(a.sigma, a.ell, nu, 1)?;
    let hs: Vec<f64> = (0..a.levels).map(|k| 1.0 / 50.0 / 2f64.powi(k as i32)).collect();
    let opts = FieldOptions {
        degree: a.degree,
        epsilon: a.epsilon,
    };
    let rows = convergence_study(&p, (-0.2, 1.2), (0.0, 1.0), 0.5, &hs, &opts).at("convergence study")?;
    let slope = fit_loglog_slope(&rows.iter().map(|r| (r.h, r.eta)).collect::<Vec<_>>());
    let data = rows.iter().map(|r| vec![r.h, r.nodes as f64, r.eta]);
    let header = ["h", "nodes", "eta"];
    match &a.out {
        Some(path) => write_rows(path, &header, data).at("output")?,
        None => write_rows_to(std::io::stdout().lock(), &header, data).at("output")?,
    }
    eprintln!("slope = {slope:.6}");
    Ok(())
}

fn rational(a: RationalArgs) -> Run {
    let r = best_rational_approx(a.gamma, a.degree, a.epsilon).at("rational approximation")?;
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
    println!("gamma = {}", r.gamma);
    println!("degree = {}", r.degree);
    println!("nodes = {}", list(&r.nodes));
    println!("numerator_roots = {}", list(&r.num_roots));
    println!("denominator_roots = {}", list(&r.den_roots));
    println!("max_error = {:.16e}", r.max_error);
    println!("spread = {:.3e}", r.spread);
    println!("iterations = {}", r.iterations);
    if let Some(path) = &a.out {
        if a.points < 2 {
            return Err(invalid("--points must be at least 2").into());
        }
        write_rows(
            path,
            &["x", "error"],
            r.error_curve(a.points).into_iter().map(|(x, e)| vec![x, e]),
        )
        .at("output")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_values_sit_before_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "ell = 0.3\nsigma_e = 0.1   # shared key, unknown to sample\n[sample]\nvariance = true\nseed = 4\n[rational]\ngamma = 0.5\n").unwrap();
        let argv = args(&format!(
            "spdefem sample --config {} --seed 9 --out x.csv",
            cfg.display()
        ));
        let got: Vec<String> = apply_config(argv)
            .unwrap()
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            got,
            [
                "spdefem",
                "sample",
                "--ell",
                "0.3",
                "--variance",
                "--seed",
                "4",
                "--seed",
                "9",
                "--out",
                "x.csv"
            ]
        );
        let cli = Cli::try_parse_from(got).unwrap();
        match cli.command {
            Command::Sample(a) => {
                assert_eq!(a.seed, 9);
                assert_eq!(a.field.ell, 0.3);
                assert!(a.variance);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        for body in [
            "no_equals\n",
            "bogus = 1\n",
            "[nothing]\n",
            "[sample]\nsigma_e = 1\n",
            "[sample]\nvariance = maybe\n",
        ] {
            std::fs::write(&cfg, body).unwrap();
            let argv = args(&format!("spdefem sample --config {} --out x.csv", cfg.display()));
            assert!(apply_config(argv).is_err(), "{body}");
        }
    }

    #[test]
    fn bounds_and_points() {
        assert_eq!(
            parse_bounds(&Some("0.1:2".into()), (1.0, 2.0), "x").unwrap(),
            (0.1, 2.0)
        );
        assert_eq!(parse_bounds(&None, (1.0, 2.0), "x").unwrap(), (1.0, 2.0));
        assert!(parse_bounds(&Some("0.1".into()), (1.0, 2.0), "x").is_err());
        assert_eq!(parse_point("0.5, 0.25", 2).unwrap(), vec![0.5, 0.25]);
        assert!(parse_point("0.5", 2).is_err());
    }

    #[test]
    fn mesh_choice_is_exclusive() {
        let none = MeshArgs {
            mesh: None,
            boundary: None,
            interval: None,
            square: None,
            hemisphere: None,
        };
        assert!(build_mesh(&none).is_err());
        let two = MeshArgs {
            square: Some(2),
            hemisphere: Some(1),
            ..none.clone()
        };
        assert!(build_mesh(&two).is_err());
        let line = MeshArgs {
            interval: Some("0:2:4".into()),
            ..none.clone()
        };
        assert_eq!(build_mesh(&line).unwrap().n_nodes(), 5);
        let bad = MeshArgs {
            interval: Some("0:2".into()),
            ..none
        };
        assert!(build_mesh(&bad).is_err());
    }
}
