//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use affine_pr::experiments::{self, ConvergenceSpec, SweepSpec};
use affine_pr::linalg;
use affine_pr::objective::{loss, wirtinger_gradient};
use affine_pr::probes::{self, ConvexityProbe};
use affine_pr::solver::{fit_convergence_rate, SolverConfig};
use affine_pr::{generate_instance, InstanceParams, ProblemInstance, RngSpec};

const SEED: u64 = 2024;
const APR: &str = env!("CARGO_BIN_EXE_apr");

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut Shared) -> Outcome;

/// CSV outputs of criteria 5 to 7, replayed through the CLI by criterion 9.
#[derive(Default)]
struct Shared {
    sweep_csv: Option<String>,
    converge_csv: Option<String>,
    noisy_csv: Option<String>,
}

fn derivatives(_: &mut Shared) -> Outcome {
    let report = match probes::run_derivative_checks(100, 16, &RngSpec::new(SEED)) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let pass = report.cases == 100
        && report.pass
        && report.max_gradient_dev <= 1e-6
        && report.max_curvature_fd_dev <= 1e-5
        && report.max_curvature_dense_dev <= 1e-10;
    Outcome::new(
        pass,
        format!(
            "100 cases, max dev gradient {:.1e}, curvature fd {:.1e}, dense {:.1e}",
            report.max_gradient_dev, report.max_curvature_fd_dev, report.max_curvature_dense_dev
        ),
    )
}

fn scaled(inst: &ProblemInstance, s: f64) -> ProblemInstance {
    ProblemInstance::noiseless(
        inst.a.clone(),
        linalg::scale(&inst.b, s),
        linalg::scale(&inst.x, s),
        inst.seed,
    )
    .expect("scaled instance is valid")
}

fn stationarity(_: &mut Shared) -> Outcome {
    let mut worst_loss = 0.0_f64;
    let mut worst_grad = 0.0_f64;
    for t in 0..20u64 {
        let d = 2 + t as usize;
        let base = generate_instance(&InstanceParams::new(d, 8 * d, 5.0, 0.0, SEED + t)).unwrap();
        let inst = scaled(&base, 10f64.powi(t as i32 % 5 - 2));
        let scale = inst.signal_norm();
        let f = loss(&inst, &inst.x).unwrap();
        let g = linalg::norm(&wirtinger_gradient(&inst, &inst.x).unwrap());
        worst_loss = worst_loss.max(f / scale.powi(4));
        worst_grad = worst_grad.max(g / scale.powi(3));
    }
    Outcome::new(
        worst_loss <= 1e-18 && worst_grad <= 1e-10,
        format!("20 instances, max f(x)/|x|^4 = {worst_loss:.1e}, max |grad f(x)|/|x|^3 = {worst_grad:.1e}"),
    )
}

fn convexity(_: &mut Shared) -> Outcome {
    let inst = generate_instance(&InstanceParams::new(32, 3000, 5.0, 0.0, SEED)).unwrap();
    let probe = ConvexityProbe::default();
    let report = match probes::probe_strong_convexity(&inst, &probe, &RngSpec::new(SEED)) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let bound = 0.5 * report.beta_theory;
    let pass = report.num_points == 20
        && report.ball_radius >= 10.0 * inst.signal_norm() * (1.0 - 1e-12)
        && report.positive_points == 20
        && report.point_min_eigs.iter().all(|&e| e > 0.0 && e >= bound)
        && report.pass;
    Outcome::new(
        pass,
        format!(
            "c0 = {:.2}, min eigenvalue {:.4e} vs 0.5 beta = {:.4e}, {}/20 points positive",
            report.c0_hat, report.min_eig_real_hessian, bound, report.positive_points
        ),
    )
}

fn r0_sandwich(_: &mut Shared) -> Outcome {
    match probes::probe_r0_sandwich(64, 640, 5.0, 100, &RngSpec::new(SEED)) {
        Ok(r) => Outcome::new(
            r.holds >= 99,
            format!("{}/{} trials hold, failing seeds {:?}", r.holds, r.trials, r.failing_seeds),
        ),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn sweep_spec() -> SweepSpec {
    SweepSpec {
        d: 64,
        ratios: vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        trials: 50,
        bias_lambda: 5.0,
        sigma: 0.0,
        base_seed: SEED,
        jobs: 1,
    }
}

fn phase_transition(shared: &mut Shared) -> Outcome {
    let result = match experiments::run_success_sweep(&sweep_spec(), &SolverConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let rates = result.success_rates();
    let violation = result.worst_monotonicity_violation();
    let at_eight = *rates.last().unwrap();
    shared.sweep_csv = Some(experiments::csv_string(&result));
    Outcome::new(
        violation <= 0.05 && at_eight >= 0.95,
        format!("success rates {rates:?}, worst violation {violation:.2}"),
    )
}

fn convergence_spec(sigma: f64) -> ConvergenceSpec {
    ConvergenceSpec {
        d: 64,
        m: 7 * 64,
        sigma,
        bias_lambda: 5.0,
        seed: SEED,
    }
}

/// Matches the `converge` subcommand: tolerance below the 1e-10 target.
fn convergence_config() -> SolverConfig {
    SolverConfig {
        success_tol: 1e-12,
        ..SolverConfig::default()
    }
}

fn linear_convergence(shared: &mut Shared) -> Outcome {
    let result = match experiments::run_convergence_experiment(&convergence_spec(0.0), &convergence_config()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    shared.converge_csv = Some(experiments::csv_string(&result));
    let reached = result
        .iters
        .iter()
        .zip(&result.rel_errors)
        .find(|(_, e)| **e <= 1e-10)
        .map(|(k, _)| *k);
    let fit = fit_convergence_rate(&result.iters, &result.rel_errors);
    let r2 = fit.as_ref().map(|f| f.r_squared).unwrap_or(f64::NAN);
    let pass = matches!(reached, Some(k) if k <= 10_000) && r2 >= 0.95;
    Outcome::new(
        pass,
        format!(
            "1e-10 reached at iteration {reached:?}, fitted rate {:.4}, R^2 {r2:.4}",
            fit.map(|f| f.rate).unwrap_or(f64::NAN)
        ),
    )
}

fn noise_robustness(shared: &mut Shared) -> Outcome {
    let result = match experiments::run_convergence_experiment(&convergence_spec(0.01), &convergence_config()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    shared.noisy_csv = Some(experiments::csv_string(&result));
    let errors = &result.rel_errors;
    let tail = &errors[errors.len() - (errors.len() / 10).max(1)..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let plateau = result.plateau.unwrap_or(f64::NAN);
    let decreased = errors[0] > 10.0 * plateau;
    let flat = hi <= 1.1 * lo;
    let pass = result.diverged_at.is_none() && decreased && flat && result.final_rel_error <= 1e-2;
    Outcome::new(
        pass,
        format!(
            "initial {:.3e}, plateau {plateau:.3e} (tail spread {:.3}), terminal {:.3e}",
            errors[0],
            hi / lo,
            result.final_rel_error
        ),
    )
}

fn difference_inequality(_: &mut Shared) -> Outcome {
    match probes::probe_difference_inequality(32, 2000, 5.0, 200, &RngSpec::new(SEED)) {
        Ok(r) => Outcome::new(
            r.holds == r.pairs && r.pairs == 200,
            format!("{}/{} pairs hold, max lhs/rhs {:.3}", r.holds, r.pairs, r.max_ratio),
        ),
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn cli_csv(args: &[&str], jobs: usize) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("out.csv");
    let status = Command::new(APR)
        .args(args)
        .args(["--seed", &SEED.to_string(), "--jobs", &jobs.to_string(), "--format", "csv"])
        .arg("--out")
        .arg(&out)
        .env_remove("APR_SEED")
        .env("RUST_LOG", "error")
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("apr {args:?} exited with {status}"));
    }
    std::fs::read_to_string(&out).map_err(|e| e.to_string())
}

fn determinism(shared: &mut Shared) -> Outcome {
    let runs: [(&str, &[&str], &Option<String>); 3] = [
        ("sweep", &["sweep", "--d", "64", "--ratio", "3,4,5,6,7,8", "--trials", "50"], &shared.sweep_csv),
        ("converge", &["converge", "--d", "64", "--m", "448", "--sigma", "0"], &shared.converge_csv),
        ("noisy converge", &["converge", "--d", "64", "--m", "448", "--sigma", "0.01"], &shared.noisy_csv),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, args, library) in runs {
        let one = cli_csv(args, 1);
        let many = cli_csv(args, 4);
        let ok = match (&one, &many) {
            (Ok(a), Ok(b)) => a == b && library.as_deref() == Some(a.as_str()),
            _ => false,
        };
        if let (Err(e), _) | (_, Err(e)) = (&one, &many) {
            notes.push(format!("{name}: {e}"));
        }
        pass &= ok;
        notes.push(format!("{name} {}", if ok { "identical" } else { "differs" }));
    }
    Outcome::new(pass, format!("--jobs 1 vs 4: {}", notes.join(", ")))
}

fn main() {
    let criteria: [(&str, Check, Duration); 9] = [
        ("derivative correctness", derivatives, Duration::from_secs(10)),
        ("exact stationarity", stationarity, Duration::from_secs(5)),
        ("strong convexity probe", convexity, Duration::from_secs(120)),
        ("R0 sandwich", r0_sandwich, Duration::from_secs(30)),
        ("success-rate phase transition", phase_transition, Duration::from_secs(300)),
        ("linear convergence", linear_convergence, Duration::from_secs(30)),
        ("noise robustness", noise_robustness, Duration::from_secs(30)),
        ("difference inequality", difference_inequality, Duration::from_secs(10)),
        ("determinism across --jobs", determinism, Duration::MAX),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check(&mut shared);
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(", limit {} s", budget.as_secs())
        };
        println!(
            "{} criterion {}: {name}: {} [{:.1} s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
