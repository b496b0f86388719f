use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use kolmogorov::chain::{build_chain, chain_bound_exponent, verify_chain, HarnackConfig};
use kolmogorov::control::{
    default_kappa_grid, kappa_estimate, optimal_control, ControlProblem, KAPPA_GRID_POINTS,
};
use kolmogorov::fields::unit_directions;
use kolmogorov::gramian::{equivalence_constants, gramian};
use kolmogorov::kernel::{fit_aronson_constant, fit_lower_constant, log_aronson_upper_form, log_lower_bound_form, GaussianKernel};
use kolmogorov::mc::{dilated_grid, estimate_density, mass_concentration, simulate_paths, verify_bounds, BoundsConfig, Scheme, SimConfig};
use kolmogorov::model::{homogeneous_dimension, kalman_rank, SpaceTimePoint};
use kolmogorov::{load_model, Error, LoadError, Model};

const THREADS_ENV: &str = "KOLMO_THREADS";

#[derive(Parser, Debug)]
#[command(name = "kolmo", version, about = "Kolmogorov operators: Gramians, kernels, controls, Harnack chains and Monte Carlo checks")]
struct Cli {
    /// Write `<subcommand>.csv`, `<subcommand>.json` and `manifest.json` here
    /// instead of stdout/stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a model.
    Validate(ModelArg),
    /// Gramian C(τ) on a list of horizons.
    Gramian(GramianArgs),
    /// Γ^λ on a grid of endpoints.
    Kernel(KernelArgs),
    /// Minimum-energy control and its trajectory.
    Control(ControlArgs),
    /// Harnack chain along the optimal trajectory.
    Chain(ChainArgs),
    /// Monte Carlo endpoint densities.
    Simulate(SimulateArgs),
    /// Two-sided comparison with Γ^{λ⁻} and Γ^{λ⁺}.
    VerifyBounds(VerifyArgs),
    /// Comparison constants between C and its homogeneous counterpart.
    Equivalence(EquivalenceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Gramian(_) => "gramian",
            Command::Kernel(_) => "kernel",
            Command::Control(_) => "control",
            Command::Chain(_) => "chain",
            Command::Simulate(_) => "simulate",
            Command::VerifyBounds(_) => "verify-bounds",
            Command::Equivalence(_) => "equivalence",
        }
    }

    fn model(&self) -> &Path {
        match self {
            Command::Validate(a) => &a.model,
            Command::Gramian(a) => &a.model.model,
            Command::Kernel(a) => &a.model.model,
            Command::Control(a) => &a.model.model,
            Command::Chain(a) => &a.model.model,
            Command::Simulate(a) => &a.model.model,
            Command::VerifyBounds(a) => &a.model.model,
            Command::Equivalence(a) => &a.model.model,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Simulate(a) => Some(a.sim.seed),
            Command::VerifyBounds(a) => Some(a.sim.seed),
            _ => None,
        }
    }

    fn params(&self) -> Value {
        let v = match self {
            Command::Validate(a) => serde_json::to_value(a),
            Command::Gramian(a) => serde_json::to_value(a),
            Command::Kernel(a) => serde_json::to_value(a),
            Command::Control(a) => serde_json::to_value(a),
            Command::Chain(a) => serde_json::to_value(a),
            Command::Simulate(a) => serde_json::to_value(a),
            Command::VerifyBounds(a) => serde_json::to_value(a),
            Command::Equivalence(a) => serde_json::to_value(a),
        };
        v.unwrap_or(Value::Null)
    }
}

#[derive(Args, Debug, Serialize)]
struct ModelArg {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GramianArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    /// Comma-separated horizons.
    #[arg(long, value_parser = parse_list, default_value = "0.25,0.5,1")]
    tau: Values,
}

#[derive(Args, Debug, Serialize)]
struct KernelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Start point `t,x1,...,xd`.
    #[arg(long, value_parser = parse_list)]
    from: Values,
    /// End point `T,y1,...,yd`; with `--grid` only `T` is used.
    #[arg(long, value_parser = parse_list)]
    to: Values,
    /// `R:n`: n points per axis with dilated offset at most R around `e^{hB}x`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridSpec>,
    /// Constant of the lower form; fitted on the rows when absent.
    #[arg(long)]
    c_lower: Option<f64>,
    /// Constant of the upper form; fitted on the rows when absent.
    #[arg(long)]
    c_upper: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct ControlArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, value_parser = parse_list)]
    from: Values,
    #[arg(long, value_parser = parse_list)]
    to: Values,
    /// Number of sample times on `[t, T]`.
    #[arg(long, default_value_t = 65)]
    n: usize,
}

#[derive(Args, Debug, Serialize)]
struct ChainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, value_parser = parse_list)]
    from: Values,
    #[arg(long, value_parser = parse_list)]
    to: Values,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.25)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Harnack constant C.
    #[arg(long = "harnack-constant", default_value_t = 10.0)]
    c_harnack: f64,
    /// Cone constant; estimated from the drift when absent.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    EulerMaruyama,
    ExactGaussian,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeArg::ExactGaussian => Scheme::ExactGaussian,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SimArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, value_enum, default_value = "euler-maruyama")]
    scheme: SchemeArg,
    /// Box width of the density estimates.
    #[arg(long, default_value_t = 0.1)]
    bandwidth: f64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig::new(self.paths, self.steps, self.seed).with_scheme(self.scheme.into())
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, value_parser = parse_list)]
    from: Values,
    /// Final time T.
    #[arg(long)]
    to: f64,
    #[arg(long, value_parser = parse_grid, default_value = "3:5")]
    grid: GridSpec,
    /// Radius for the mass fraction in the summary.
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    #[command(flatten)]
    #[serde(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, value_parser = parse_list)]
    from: Values,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    lambda_minus: f64,
    #[arg(long)]
    lambda_plus: f64,
    #[arg(long, value_parser = parse_grid, default_value = "3:5")]
    grid: GridSpec,
    #[command(flatten)]
    #[serde(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug, Serialize)]
struct EquivalenceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArg,
    #[arg(long, value_parser = parse_list, default_value = "0.001953125,0.0078125,0.03125,0.125,0.5,1")]
    tau: Values,
    #[arg(long, default_value_t = 64)]
    directions: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
struct GridSpec {
    radius: f64,
    n: usize,
}

/// A comma-separated list of numbers on the command line.
#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
struct Values(Vec<f64>);

fn parse_list(s: &str) -> Result<Values, String> {
    s.split(',')
        .map(|p| {
            let v: f64 = p.trim().parse().map_err(|e| format!("`{p}`: {e}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("`{p}` is not finite"))
            }
        })
        .collect::<Result<_, _>>()
        .map(Values)
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let (r, n) = s.split_once(':').ok_or("expected R:n")?;
    let radius: f64 = r.parse().map_err(|e| format!("radius `{r}`: {e}"))?;
    let n: usize = n.parse().map_err(|e| format!("count `{n}`: {e}"))?;
    if !(radius > 0.0 && radius.is_finite()) || n == 0 {
        return Err("grid needs a positive radius and at least one point".into());
    }
    Ok(GridSpec { radius, n })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    model: String,
    params: Value,
    seed: Option<u64>,
    output: Option<String>,
    version: &'static str,
}

/// What a subcommand produces.
struct Report {
    csv: Option<String>,
    summary: Value,
}

enum Failure {
    Usage(String),
    Parse(String),
    Validation { clause: &'static str, message: String },
    Numeric(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Numeric(_) | Failure::Io(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Validation { .. } => 3,
            Failure::Usage(_) => 64,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if let Some(clause) = e.clause() {
            return Failure::Validation {
                clause,
                message: e.to_string(),
            };
        }
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::DimensionMismatch { .. } => Failure::Usage(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Invalid(inner) if inner.clause().is_some() => inner.into(),
            other => Failure::Parse(other.to_string()),
        }
    }
}

type Run<T> = Result<T, Failure>;

fn point(values: &[f64], d: usize, flag: &str) -> Run<SpaceTimePoint> {
    if values.len() != d + 1 {
        return Err(Failure::Usage(format!(
            "--{flag} needs t and {d} coordinates, got {} values",
            values.len()
        )));
    }
    Ok(SpaceTimePoint::from_slice(values[0], &values[1..]))
}

fn time_only(values: &[f64], flag: &str) -> Run<f64> {
    values
        .first()
        .copied()
        .ok_or_else(|| Failure::Usage(format!("--{flag} is empty")))
}

fn csv_line(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let line: Vec<String> = fields.into_iter().collect();
    out.push_str(&line.join(","));
    out.push('\n');
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn finite_row(values: &[f64]) -> Run<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Failure::Numeric(format!("non-finite output value {v}"))),
        None => Ok(()),
    }
}

fn coord_headers(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

fn run_validate(model: &Model) -> Run<Report> {
    let system = &model.spec.system;
    Ok(Report {
        csv: None,
        summary: json!({
            "valid": true,
            "d": system.dim(),
            "blocks": system.structure().sizes(),
            "Q": homogeneous_dimension(system.structure()),
            "kalman_rank": kalman_rank(system),
            "homogeneous": system.is_homogeneous(),
            "ellipticity": model.ellipticity,
        }),
    })
}

fn run_gramian(model: &Model, args: &GramianArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let hom = system.homogeneous_part();
    let mut csv = String::new();
    let mut header = vec!["tau".to_string()];
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("c{i}{j}"));
        }
    }
    header.extend(["logdet".into(), "det_ratio".into()]);
    csv_line(&mut csv, header);
    for &tau in &args.tau.0 {
        let c = gramian(system, tau)?;
        let c0 = gramian(&hom, tau)?;
        let mut row = vec![tau];
        for i in 0..d {
            for j in 0..d {
                row.push(c.matrix()[(i, j)]);
            }
        }
        row.push(c.logdet());
        row.push((c.logdet() - c0.logdet()).exp());
        finite_row(&row)?;
        csv_line(&mut csv, row.into_iter().map(num));
    }
    Ok(Report {
        csv: Some(csv),
        summary: json!({ "Q": homogeneous_dimension(system.structure()), "rows": args.tau.0.len() }),
    })
}

fn run_kernel(model: &Model, args: &KernelArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let from = point(&args.from.0, d, "from")?;
    let big_t = time_only(&args.to.0, "to")?;
    let ys = match args.grid {
        Some(g) => dilated_grid(system, &from.x, big_t - from.t, g.radius, g.n)?,
        None => vec![point(&args.to.0, d, "to")?.x],
    };
    let kernel = GaussianKernel::new(system, args.lambda)?;
    let transitions: Vec<_> = ys
        .iter()
        .map(|y| (from.clone(), SpaceTimePoint::new(big_t, y.clone())))
        .collect();
    let c_lower = match args.c_lower {
        Some(c) => c,
        None => fit_lower_constant(&kernel, &transitions)?,
    };
    let c_upper = match args.c_upper {
        Some(c) => c,
        None => fit_aronson_constant(&kernel, &transitions)?,
    };
    let mut csv = String::new();
    let mut header = coord_headers("y", d);
    header.extend(["gamma", "log_gamma", "lower_form", "upper_form"].map(String::from));
    csv_line(&mut csv, header);
    for y in &ys {
        let log_gamma = kernel.log_density(from.t, &from.x, big_t, y)?;
        let lower = log_lower_bound_form(c_lower, system, from.t, &from.x, big_t, y)?.exp();
        let upper = log_aronson_upper_form(c_upper, system, from.t, &from.x, big_t, y)?.exp();
        let mut row: Vec<f64> = y.iter().copied().collect();
        row.extend([log_gamma.exp(), log_gamma, lower, upper]);
        finite_row(&row)?;
        csv_line(&mut csv, row.into_iter().map(num));
    }
    Ok(Report {
        csv: Some(csv),
        summary: json!({ "lambda": args.lambda, "c_lower": c_lower, "c_upper": c_upper, "rows": ys.len() }),
    })
}

fn run_control(model: &Model, args: &ControlArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let from = point(&args.from.0, d, "from")?;
    let to = point(&args.to.0, d, "to")?;
    if args.n < 2 {
        return Err(Failure::Usage("--n needs at least two sample times".into()));
    }
    let ctrl = optimal_control(&ControlProblem::between(system, &from, &to)?)?;
    let mut csv = String::new();
    let mut header = vec!["s".to_string()];
    header.extend(coord_headers("gamma", d));
    header.extend(["control_sq", "cost"].map(String::from));
    csv_line(&mut csv, header);
    let h = to.t - from.t;
    for k in 0..args.n {
        let s = if k + 1 == args.n {
            to.t
        } else {
            from.t + h * k as f64 / (args.n - 1) as f64
        };
        let mut row = vec![s];
        row.extend(ctrl.trajectory(s)?.iter().copied());
        row.push(ctrl.control(s)?.norm_squared());
        row.push(ctrl.partial_cost(from.t, s)?);
        finite_row(&row)?;
        csv_line(&mut csv, row.into_iter().map(num));
    }
    let end_error = (ctrl.trajectory(to.t)? - &to.x).amax();
    Ok(Report {
        csv: Some(csv),
        summary: json!({ "V": ctrl.cost(), "l2_norm": ctrl.l2_norm(), "endpoint_error": end_error }),
    })
}

fn run_chain(model: &Model, args: &ChainArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let from = point(&args.from.0, d, "from")?;
    let to = point(&args.to.0, d, "to")?;
    let kappa = match args.kappa {
        Some(k) => k,
        None => kappa_estimate(system, &default_kappa_grid(KAPPA_GRID_POINTS))?,
    };
    let config = HarnackConfig::new(args.c_harnack, args.beta, args.r, args.tau, kappa)?;
    let chain = build_chain(&ControlProblem::between(system, &from, &to)?, &config)?;
    let verified = verify_chain(&chain, &config, system);
    let bound = chain_bound_exponent(&chain);
    let mut csv = String::new();
    let mut header = vec!["j".to_string(), "t".to_string()];
    header.extend(coord_headers("gamma", d));
    header.extend(["step_cost", "clause"].map(String::from));
    csv_line(&mut csv, header);
    for (j, step) in chain.steps.iter().enumerate() {
        let mut row = vec![chain.times[j + 1]];
        row.extend(chain.points[j + 1].iter().copied());
        row.push(step.cost);
        finite_row(&row)?;
        let mut fields = vec![(j + 1).to_string()];
        fields.extend(row.into_iter().map(num));
        fields.push(step.clause.as_str().to_string());
        csv_line(&mut csv, fields);
    }
    Ok(Report {
        csv: Some(csv),
        summary: json!({
            "V": chain.cost,
            "epsilon": chain.epsilon,
            "J": chain.len(),
            "exponent": chain.exponent,
            "verified": verified,
            "within_bound": bound.within_bound,
            "kappa": kappa,
            "start": { "t": chain.times[0], "x": chain.points[0] },
        }),
    })
}

fn run_simulate(model: &Model, args: &SimulateArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let from = point(&args.from.0, d, "from")?;
    let horizon = args.to - from.t;
    let ys = dilated_grid(system, &from.x, horizon, args.grid.radius, args.grid.n)?;
    let config = args.sim.config();
    let endpoints = simulate_paths(&model.spec, from.t, &from.x, args.to, &config)?;
    let mut csv = String::new();
    let mut header = coord_headers("y", d);
    header.extend(["gamma_est", "stderr", "hits"].map(String::from));
    csv_line(&mut csv, header);
    for y in &ys {
        let est = estimate_density(&endpoints, y, args.sim.bandwidth, system.structure(), horizon)?;
        let mut row: Vec<f64> = y.iter().copied().collect();
        row.extend([est.value, est.stderr]);
        finite_row(&row)?;
        let mut fields: Vec<String> = row.into_iter().map(num).collect();
        fields.push(est.n_hits.to_string());
        csv_line(&mut csv, fields);
    }
    let mass = mass_concentration(&endpoints, system, &from.x, horizon, args.radius)?;
    let moments = match endpoints.moments() {
        Ok(m) => json!({
            "mean": m.mean.as_slice(),
            "mean_stderr": m.mean_stderr.as_slice(),
            "covariance": rows_of(&m.covariance),
            "covariance_stderr": rows_of(&m.covariance_stderr),
        }),
        Err(_) => Value::Null,
    };
    Ok(Report {
        csv: Some(csv),
        summary: json!({
            "seed": config.seed,
            "config": config,
            "mass": { "radius": args.radius, "fraction": mass.fraction, "stderr": mass.stderr },
            "moments": moments,
            "weighted": endpoints.log_weights.is_some(),
        }),
    })
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn run_verify(model: &Model, args: &VerifyArgs) -> Run<Report> {
    let system = &model.spec.system;
    let d = system.dim();
    let from = point(&args.from.0, d, "from")?;
    let ys = dilated_grid(system, &from.x, args.to - from.t, args.grid.radius, args.grid.n)?;
    let mut config = BoundsConfig::new(args.sim.config());
    config.bandwidth = args.sim.bandwidth;
    let report = verify_bounds(&model.spec, from.t, &from.x, args.to, &ys, args.lambda_minus, args.lambda_plus, &config)?;
    let mut csv = String::new();
    let mut header = coord_headers("y", d);
    header.extend(
        ["gamma_est", "stderr", "gamma_lambda_minus", "gamma_lambda_plus", "ratio_minus", "ratio_plus"].map(String::from),
    );
    csv_line(&mut csv, header);
    for r in &report.rows {
        let mut row = r.y.clone();
        row.extend([r.gamma, r.stderr, r.gamma_minus, r.gamma_plus, r.ratio_minus, r.ratio_plus]);
        finite_row(&row)?;
        csv_line(&mut csv, row.into_iter().map(num));
    }
    Ok(Report {
        csv: Some(csv),
        summary: json!({
            "c_minus": report.c_minus,
            "c_plus": report.c_plus,
            "psd_sandwich": report.psd_sandwich,
            "diagonal": report.diagonal,
            "a_min": report.a_min,
            "a_max": report.a_max,
            "exact": report.rows.iter().all(|r| r.exact),
            "seed": report.seed,
            "config": config,
        }),
    })
}

fn run_equivalence(model: &Model, args: &EquivalenceArgs) -> Run<Report> {
    let system = &model.spec.system;
    if args.directions == 0 {
        return Err(Failure::Usage("--directions must be positive".into()));
    }
    let dirs: Vec<DVector<f64>> = unit_directions(system.dim(), args.directions);
    let report = equivalence_constants(system, &args.tau.0, &dirs)?;
    let mut csv = String::new();
    csv_line(&mut csv, ["tau", "det_ratio", "quadratic_ratio_min", "quadratic_ratio_max"].map(String::from));
    for (k, &tau) in report.tau_grid.iter().enumerate() {
        let (lo, hi) = report.quadratic_ratio_range[k];
        let row = [tau, report.det_ratio[k], lo, hi];
        finite_row(&row)?;
        csv_line(&mut csv, row.into_iter().map(num));
    }
    Ok(Report {
        csv: Some(csv),
        summary: json!({
            "k_dilation": report.k_dilation,
            "k_determinant": report.k_determinant,
            "k_quadratic": report.k_quadratic,
            "det_c0_unit": report.det_c0_unit,
            "directions": report.directions,
        }),
    })
}

fn execute(command: &Command) -> Run<Report> {
    let model = load_model(command.model())?;
    match command {
        Command::Validate(_) => run_validate(&model),
        Command::Gramian(a) => run_gramian(&model, a),
        Command::Kernel(a) => run_kernel(&model, a),
        Command::Control(a) => run_control(&model, a),
        Command::Chain(a) => run_chain(&model, a),
        Command::Simulate(a) => run_simulate(&model, a),
        Command::VerifyBounds(a) => run_verify(&model, a),
        Command::Equivalence(a) => run_equivalence(&model, a),
    }
}

fn emit(cli: &Cli, manifest: &RunManifest, report: &Report) -> Run<()> {
    let name = cli.command.name();
    let io = |e: std::io::Error| Failure::Io(e.to_string());
    let pretty = |v: &Value| serde_json::to_string_pretty(v).expect("JSON values serialize");
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io)?;
            if let Some(csv) = &report.csv {
                std::fs::write(dir.join(format!("{name}.csv")), csv).map_err(io)?;
            }
            std::fs::write(dir.join(format!("{name}.json")), pretty(&report.summary) + "\n").map_err(io)?;
            std::fs::write(dir.join("manifest.json"), pretty(&json!(manifest)) + "\n").map_err(io)?;
        }
        None => {
            if let Some(csv) = &report.csv {
                print!("{csv}");
            }
            eprintln!("{}", pretty(&json!({ "manifest": manifest, "summary": report.summary })));
        }
    }
    Ok(())
}

fn configure_threads() -> Run<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a thread count, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn report_failure(f: &Failure) {
    let mut msg = String::new();
    match f {
        Failure::Usage(m) => write!(msg, "usage error: {m}"),
        Failure::Parse(m) => write!(msg, "parse error: {m}"),
        Failure::Validation { clause, message } => write!(msg, "validation failed: {message}\nclause: {clause}"),
        Failure::Numeric(m) => write!(msg, "numeric failure: {m}"),
        Failure::Io(m) => write!(msg, "output error: {m}"),
    }
    .expect("writing to a String");
    eprintln!("{msg}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| {
        let report = execute(&cli.command)?;
        let manifest = RunManifest {
            subcommand: cli.command.name(),
            model: cli.command.model().display().to_string(),
            params: cli.command.params(),
            seed: cli.command.seed(),
            output: cli.out.as_ref().map(|p| p.display().to_string()),
            version: env!("CARGO_PKG_VERSION"),
        };
        emit(&cli, &manifest, &report)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report_failure(&f);
            ExitCode::from(f.code())
        }
    }
}
