use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use affine_pr::experiments::{self, plot, ConvergenceSpec, Report, SweepSpec};
use affine_pr::io::{read_instance, write_instance};
use affine_pr::model::{sample_complex_gaussian, GaussianConvention};
use affine_pr::probes::{self, ConvexityProbe};
use affine_pr::solver::{self, InitMode, SolveSummary, SolverConfig, StepSpec};
use affine_pr::{generate_instance, linalg, Error, InstanceParams, ProblemInstance, Result, RngSpec};

const SEED_ENV: &str = "APR_SEED";

#[derive(Parser)]
#[command(name = "apr", version, about = "Affine phase retrieval by Wirtinger gradient descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and write its metadata to --out.
    Gen {
        #[command(flatten)]
        opts: Opts,
        /// Also write the arrays to a sibling `.bin` file.
        #[arg(long)]
        arrays: bool,
    },
    /// Solve one instance; prints a JSON summary and writes the trace to --out.
    Solve {
        #[command(flatten)]
        opts: Opts,
        /// Instance file written by `gen`.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Empirical success rate against m/d.
    Sweep(Opts),
    /// Relative error against iteration for one instance.
    Converge(Opts),
    /// Empirical checks of the analytic properties.
    #[command(subcommand)]
    Probe(Probe),
    /// Compare analytic derivatives with finite differences on one instance.
    Gradcheck {
        #[command(flatten)]
        opts: Opts,
        #[arg(long)]
        instance: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Probe {
    /// Smallest real-Hessian eigenvalue over points in a ball (--trials points).
    Hessian(Opts),
    /// How often R0/3 <= |x| <= R0 holds (--trials instances).
    R0(Opts),
    /// Difference inequality on random pairs (--trials pairs).
    Diffineq(Opts),
    /// Derivative checks on random instances (--trials cases, --d is the largest dimension).
    Derivs(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct Opts {
    /// Signal dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Number of measurements.
    #[arg(long, conflicts_with = "ratio")]
    m: Option<usize>,
    /// Oversampling m/d; `sweep` takes a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    ratio: Option<Vec<f64>>,
    /// Bias scale: b_j = bias_lambda |x| N(0, 1).
    #[arg(long)]
    bias_lambda: Option<f64>,
    /// Standard deviation of additive observation noise.
    #[arg(long)]
    sigma: Option<f64>,
    /// fixed:<mu> | auto[:safety] | backtrack
    #[arg(long)]
    step: Option<String>,
    /// Iteration budget.
    #[arg(long)]
    iters: Option<usize>,
    /// Relative-error success threshold.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; the APR_SEED environment variable takes precedence.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// JSON file with the same keys as the long flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl Opts {
    /// Flags first, then the config file, with `APR_SEED` over both.
    fn resolve(self) -> Result<Opts> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str::<Opts>(&text)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => Opts::default(),
        };
        let (m, ratio) = if self.m.is_some() || self.ratio.is_some() {
            (self.m, self.ratio)
        } else {
            (file.m, file.ratio)
        };
        if m.is_some() && ratio.is_some() {
            return Err(invalid("--m and --ratio are mutually exclusive"));
        }
        let seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| invalid(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?,
            ),
            Err(_) => self.seed.or(file.seed),
        };
        Ok(Opts {
            d: self.d.or(file.d),
            m,
            ratio,
            bias_lambda: self.bias_lambda.or(file.bias_lambda),
            sigma: self.sigma.or(file.sigma),
            step: self.step.or(file.step),
            iters: self.iters.or(file.iters),
            tol: self.tol.or(file.tol),
            trials: self.trials.or(file.trials),
            seed,
            jobs: self.jobs.or(file.jobs),
            out: self.out.or(file.out),
            format: self.format.or(file.format),
            config: None,
        })
    }

    fn d(&self, default: usize) -> usize {
        self.d.unwrap_or(default)
    }

    fn m(&self, d: usize, default_ratio: f64) -> Result<usize> {
        if let Some(m) = self.m {
            return Ok(m);
        }
        let ratio = match self.ratio.as_deref() {
            None => default_ratio,
            Some([r]) => *r,
            Some(_) => return Err(invalid("expected a single --ratio")),
        };
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(invalid(format!("ratio must be positive, got {ratio}")));
        }
        Ok((ratio * d as f64).round() as usize)
    }

    fn bias_lambda(&self) -> f64 {
        self.bias_lambda.unwrap_or(5.0)
    }

    fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(0.0)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn params(&self, default_d: usize, default_ratio: f64) -> Result<InstanceParams> {
        let d = self.d(default_d);
        Ok(InstanceParams::new(
            d,
            self.m(d, default_ratio)?,
            self.bias_lambda(),
            self.sigma(),
            self.seed(),
        ))
    }

    fn solver_config(&self, default_tol: f64) -> Result<SolverConfig> {
        let step = match &self.step {
            Some(s) => s.parse::<StepSpec>()?,
            None => StepSpec::default(),
        };
        let defaults = SolverConfig::default();
        let cfg = SolverConfig {
            step,
            max_iters: self.iters.unwrap_or(defaults.max_iters),
            success_tol: self.tol.unwrap_or(default_tol),
            init: InitMode::RandomInBall { seed: self.seed() },
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self, default: Format, allowed: &[Format]) -> Result<Format> {
        let f = self.format.unwrap_or(default);
        if allowed.contains(&f) {
            Ok(f)
        } else {
            Err(invalid(format!("--format {f:?} is not supported here").to_lowercase()))
        }
    }

    fn install_pool(&self) -> Result<()> {
        if let Some(jobs) = self.jobs.filter(|&j| j > 0) {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            fs::write(path, bytes).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn load_or_generate(instance: Option<&Path>, opts: &Opts, d: usize, ratio: f64) -> Result<ProblemInstance> {
    match instance {
        Some(path) => Ok(read_instance(path)?.1),
        None => generate_instance(&opts.params(d, ratio)?),
    }
}

fn verdict(pass: bool) -> u8 {
    if pass {
        0
    } else {
        2
    }
}

fn gen(opts: Opts, arrays: bool) -> Result<u8> {
    opts.format(Format::Json, &[Format::Json])?;
    let out = opts.out.as_deref().ok_or_else(|| invalid("gen requires --out"))?;
    let params = opts.params(64, 8.0)?;
    let inst = generate_instance(&params)?;
    write_instance(&inst, &params, out, arrays)?;
    Ok(0)
}

fn solve(opts: Opts, instance: Option<PathBuf>) -> Result<u8> {
    let format = opts.format(Format::Csv, &[Format::Csv, Format::Json, Format::Svg])?;
    let inst = load_or_generate(instance.as_deref(), &opts, 64, 8.0)?;
    let cfg = opts.solver_config(1e-5)?;
    let trace = solver::gradient_descent_traced(&inst, &cfg)?;
    let summary = SolveSummary::new(&inst, &cfg, &trace);
    emit(None, &json(&summary))?;
    if let Some(out) = opts.out.as_deref() {
        let bytes = match format {
            Format::Csv => {
                let mut buf = Vec::new();
                solver::write_trace_csv(&trace, &mut buf).expect("in-memory write");
                buf
            }
            Format::Json => json(&trace),
            Format::Svg => {
                let pts: Vec<(f64, f64)> = trace
                    .iters
                    .iter()
                    .zip(&trace.rel_errors)
                    .filter(|(_, e)| **e > 0.0 && e.is_finite())
                    .map(|(k, e)| (*k as f64, e.log10()))
                    .collect();
                let labels = plot::Labels {
                    title: &format!("Relative error, d = {}, m = {}", inst.d(), inst.m()),
                    x: "iteration",
                    y: "log10 relative error",
                };
                plot::line_plot(&pts, &labels, None).into_bytes()
            }
        };
        emit(Some(out), &bytes)?;
    }
    Ok(if trace.diverged_at.is_some() { 4 } else { 0 })
}

fn emit_report<R: Report + Serialize>(result: &R, format: Format, out: Option<&Path>) -> Result<()> {
    let bytes = match format {
        Format::Csv => experiments::csv_string(result).into_bytes(),
        Format::Json => json(result),
        Format::Svg => result.render_svg().into_bytes(),
    };
    emit(out, &bytes)
}

fn sweep(opts: Opts) -> Result<u8> {
    let format = opts.format(Format::Csv, &[Format::Csv, Format::Json, Format::Svg])?;
    if opts.m.is_some() {
        return Err(invalid("sweep takes --ratio, not --m"));
    }
    let spec = SweepSpec {
        d: opts.d(64),
        ratios: opts
            .ratio
            .clone()
            .unwrap_or_else(|| vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
        trials: opts.trials.unwrap_or(50),
        bias_lambda: opts.bias_lambda(),
        sigma: opts.sigma(),
        base_seed: opts.seed(),
        jobs: opts.jobs.unwrap_or(0),
    };
    let result = experiments::run_success_sweep(&spec, &opts.solver_config(1e-5)?)?;
    emit_report(&result, format, opts.out.as_deref())?;
    Ok(0)
}

fn converge(opts: Opts) -> Result<u8> {
    let format = opts.format(Format::Csv, &[Format::Csv, Format::Json, Format::Svg])?;
    let d = opts.d(64);
    let spec = ConvergenceSpec {
        d,
        m: opts.m(d, 7.0)?,
        sigma: opts.sigma(),
        bias_lambda: opts.bias_lambda(),
        seed: opts.seed(),
    };
    let result = experiments::run_convergence_experiment(&spec, &opts.solver_config(1e-12)?)?;
    emit_report(&result, format, opts.out.as_deref())?;
    Ok(if result.diverged_at.is_some() { 4 } else { 0 })
}

fn probe(which: Probe) -> Result<u8> {
    let (kind, opts) = match which {
        Probe::Hessian(o) => ("hessian", o.resolve()?),
        Probe::R0(o) => ("r0", o.resolve()?),
        Probe::Diffineq(o) => ("diffineq", o.resolve()?),
        Probe::Derivs(o) => ("derivs", o.resolve()?),
    };
    opts.install_pool()?;
    opts.format(Format::Json, &[Format::Json])?;
    let rng = RngSpec::new(opts.seed());
    let out = opts.out.as_deref();
    let pass = match kind {
        "hessian" => {
            let inst = generate_instance(&opts.params(32, 3000.0 / 32.0)?)?;
            let probe = ConvexityProbe {
                num_points: opts.trials.unwrap_or(20),
                ..ConvexityProbe::default()
            };
            let report = probes::probe_strong_convexity(&inst, &probe, &rng)?;
            emit(out, &json(&report))?;
            report.pass
        }
        "r0" => {
            let d = opts.d(64);
            let m = opts.m(d, 10.0)?;
            let report = probes::probe_r0_sandwich(d, m, opts.bias_lambda(), opts.trials.unwrap_or(100), &rng)?;
            emit(out, &json(&report))?;
            report.fraction >= 0.99
        }
        "diffineq" => {
            let d = opts.d(32);
            let m = opts.m(d, 2000.0 / 32.0)?;
            let report =
                probes::probe_difference_inequality(d, m, opts.bias_lambda(), opts.trials.unwrap_or(200), &rng)?;
            emit(out, &json(&report))?;
            report.holds == report.pairs
        }
        _ => {
            let report = probes::run_derivative_checks(opts.trials.unwrap_or(100), opts.d(16), &rng)?;
            emit(out, &json(&report))?;
            report.pass
        }
    };
    Ok(verdict(pass))
}

#[derive(Serialize)]
struct GradcheckPoint {
    gradient_dev: f64,
    curvature_fd_dev: f64,
    curvature_dense_dev: f64,
}

#[derive(Serialize)]
struct GradcheckReport {
    d: usize,
    m: usize,
    points: Vec<GradcheckPoint>,
    pass: bool,
}

fn gradcheck(opts: Opts, instance: Option<PathBuf>) -> Result<u8> {
    opts.format(Format::Json, &[Format::Json])?;
    let inst = load_or_generate(instance.as_deref(), &opts, 8, 4.0)?;
    let x_norm = inst.signal_norm();
    let radius = if x_norm > 0.0 { 3.0 * x_norm } else { 1.0 };
    let rng = RngSpec::new(opts.seed()).child(1);
    let mut points = Vec::new();
    for i in 0..opts.trials.unwrap_or(10) as u64 {
        let point = rng.child(i);
        let z = solver::sample_initial_point(radius, inst.d(), &point.child(0))?;
        let v = sample_complex_gaussian(inst.d(), &point.child(1), GaussianConvention::UnitModulus)?;
        let v = linalg::scale(&v, 1.0 / linalg::norm(&v));
        let (g, fd, dense) = probes::check_derivatives_at(&inst, &z, &v)?;
        points.push(GradcheckPoint {
            gradient_dev: g,
            curvature_fd_dev: fd,
            curvature_dense_dev: dense,
        });
    }
    let pass = points.iter().all(|p| {
        p.gradient_dev <= probes::GRADIENT_TOL
            && p.curvature_fd_dev <= probes::CURVATURE_FD_TOL
            && p.curvature_dense_dev <= probes::CURVATURE_DENSE_TOL
    });
    let report = GradcheckReport {
        d: inst.d(),
        m: inst.m(),
        points,
        pass,
    };
    emit(opts.out.as_deref(), &json(&report))?;
    Ok(verdict(pass))
}

fn run(cli: Cli) -> Result<u8> {
    let ready = |opts: Opts| -> Result<Opts> {
        let opts = opts.resolve()?;
        opts.install_pool()?;
        Ok(opts)
    };
    match cli.command {
        Command::Probe(p) => probe(p),
        Command::Gen { opts, arrays } => gen(opts.resolve()?, arrays),
        Command::Solve { opts, instance } => solve(ready(opts)?, instance),
        Command::Sweep(opts) => sweep(ready(opts)?),
        Command::Converge(opts) => converge(ready(opts)?),
        Command::Gradcheck { opts, instance } => gradcheck(ready(opts)?, instance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("apr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
