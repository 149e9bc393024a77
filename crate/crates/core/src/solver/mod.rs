//! Gradient descent from an arbitrary point in the data-driven ball
//! `‖z‖ ≤ R₀`, with convergence tracing and rate fitting.

pub mod step;

use log::{debug, warn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::model::ProblemInstance;
use crate::objective;
use crate::rng::{stream, RngSpec};

pub use step::{StepOutcome, StepRegistry, StepRule, StepSpec};

/// Every iteration is recorded up to this index, every tenth afterwards.
pub const DENSE_TRACE_LIMIT: usize = 100_000;

/// `R₀ = 2 ((1/m) Σ y_j − ‖b‖²/m)^{1/2}`.
pub fn compute_r0(instance: &ProblemInstance) -> Result<f64> {
    let radicand = r0_radicand(instance);
    if radicand > 0.0 && radicand.is_finite() {
        Ok(2.0 * radicand.sqrt())
    } else {
        Err(Error::DegenerateObservations { radicand })
    }
}

fn r0_radicand(instance: &ProblemInstance) -> f64 {
    instance.mean_observation() - linalg::norm_sqr(&instance.b) / instance.m() as f64
}

/// [`compute_r0`], falling back to `2 √(max(radicand, mean y) / 2)` when the
/// radicand is not positive. The flag reports whether the fallback was used.
pub fn r0_with_fallback(instance: &ProblemInstance) -> Result<(f64, bool)> {
    match compute_r0(instance) {
        Ok(r0) => Ok((r0, false)),
        Err(Error::DegenerateObservations { radicand }) => {
            let alt = radicand.max(instance.mean_observation());
            if alt > 0.0 && alt.is_finite() {
                let r0 = 2.0 * (alt / 2.0).sqrt();
                warn!("R0 radicand {radicand} is not positive, falling back to R0 = {r0}");
                Ok((r0, true))
            } else {
                Err(Error::DegenerateObservations { radicand })
            }
        }
        Err(e) => Err(e),
    }
}

/// Uniform draw from the complex ball of radius `r0` in `C^d`.
pub fn sample_initial_point(r0: f64, d: usize, rng: &RngSpec) -> Result<CVector> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::invalid(format!("ball radius must be positive, got {r0}")));
    }
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut g = rng.rng();
    Ok(uniform_in_ball(&mut g, r0, d))
}

pub(crate) fn uniform_in_ball(rng: &mut impl Rng, radius: f64, d: usize) -> CVector {
    loop {
        let dir: CVector = (0..d)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im)
            })
            .collect();
        let n = linalg::norm(&dir);
        if n == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let rho = radius * u.powf(1.0 / (2 * d) as f64);
        return linalg::scale(&dir, rho / n);
    }
}

/// Power-iteration estimate of the largest eigenvalue of the real Hessian at `z`.
///
/// Matrix-free: every step is one Hessian-vector product. When the dominant
/// eigenvalue is negative the operator is shifted by its magnitude and the
/// iteration repeated, so the returned value is the largest algebraic one.
pub fn estimate_lambda_max(instance: &ProblemInstance, z: &[Complex64]) -> Result<f64> {
    instance.check_dim(z)?;
    let r = instance.residual_fields(z);
    let n = 2 * instance.d();
    let start = power_start(n);
    let apply = |v: &[f64]| {
        let hv = objective::hessian_vector_product_with(instance, &r, &linalg::from_real(v));
        linalg::to_real(&hv)
    };
    let first = linalg::power_iteration(&start, apply, 30, 500, 1e-10);
    if first.value >= 0.0 {
        return Ok(first.value);
    }
    let shift = first.value.abs();
    let shifted = linalg::power_iteration(
        &start,
        |v: &[f64]| {
            let mut w = apply(v);
            w.iter_mut().zip(v).for_each(|(a, b)| *a += shift * b);
            w
        },
        30,
        500,
        1e-10,
    );
    Ok(shifted.value - shift)
}

/// Deterministic start vector with no special alignment.
fn power_start(n: usize) -> Vec<f64> {
    let mut rng = RngSpec::new(0x5EED_0FF0_E5).rng();
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `μ = safety / λ̂_max` from the real-Hessian curvature at `z0`.
///
/// If the estimate is not positive, falls back to `safety / (d log m R₀²)`.
pub fn auto_step_size(instance: &ProblemInstance, z0: &[Complex64], safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::invalid(format!("safety must lie in (0, 1), got {safety}")));
    }
    let lambda = estimate_lambda_max(instance, z0)?;
    if lambda > 0.0 && lambda.is_finite() {
        debug!("auto step: lambda_max = {lambda:e}");
        return Ok(safety / lambda);
    }
    let (r0, _) = r0_with_fallback(instance)?;
    let log_m = (instance.m() as f64).ln().max(1.0);
    warn!("curvature estimate {lambda} is not positive, using the d log m R0^2 scaling");
    Ok(safety / (instance.d() as f64 * log_m * r0 * r0))
}

/// Inputs of the gradient Lipschitz bound on `‖z‖ ≤ R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzInputs {
    pub d: f64,
    pub log_m: f64,
    pub radius: f64,
    pub bias_rms: f64,
    pub bias_inf: f64,
    pub signal_norm: f64,
}

impl LipschitzInputs {
    pub fn from_instance(instance: &ProblemInstance, radius: f64) -> Self {
        let m = instance.m() as f64;
        Self {
            d: instance.d() as f64,
            log_m: m.ln(),
            radius,
            bias_rms: linalg::norm(&instance.b) / m.sqrt(),
            bias_inf: linalg::norm_inf(&instance.b),
            signal_norm: instance.signal_norm(),
        }
    }

    /// `C_R = 6√2 (2R d log m + ‖b‖_∞ √(d log m)) (R + ‖b‖/√m)
    ///       + 8√2 (2 d log m (R² + ‖x‖²) + ‖b‖_∞²)`.
    pub fn constant(&self) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        let dl = self.d * self.log_m;
        let r = self.radius;
        6.0 * s2 * (2.0 * r * dl + self.bias_inf * dl.sqrt()) * (r + self.bias_rms)
            + 8.0 * s2 * (2.0 * dl * (r * r + self.signal_norm.powi(2)) + self.bias_inf.powi(2))
    }
}

/// Gradient Lipschitz constant over `‖z‖ ≤ R`.
pub fn lipschitz_constant_cr(instance: &ProblemInstance, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    if instance.m() < 2 {
        return Err(Error::invalid("the Lipschitz bound needs m >= 2"));
    }
    Ok(LipschitzInputs::from_instance(instance, radius).constant())
}

/// Largest fixed step covered by the smoothness argument, `(4 − √2) / (2 C_R)`.
pub fn theoretical_step(c_r: f64) -> f64 {
    (4.0 - std::f64::consts::SQRT_2) / (2.0 * c_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Stop on `‖z − x‖/‖x‖ ≤ success_tol` (ground truth known).
    #[default]
    RelativeError,
    /// Stop on `‖∇f‖ ≤ grad_tol · (mean y)^{3/2}`.
    GradientNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitMode {
    RandomInBall { seed: u64 },
    UserSupplied { z0: CVector },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub step: StepSpec,
    pub max_iters: usize,
    pub success_tol: f64,
    pub grad_tol: f64,
    pub stop_rule: StopRule,
    pub record_trace: bool,
    pub init: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: StepSpec::default(),
            max_iters: 10_000,
            success_tol: 1e-5,
            grad_tol: 1e-12,
            stop_rule: StopRule::RelativeError,
            record_trace: true,
            init: InitMode::RandomInBall { seed: 0 },
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.success_tol > 0.0) {
            return Err(Error::invalid("success_tol must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Iteration index of each recorded entry.
    pub iters: Vec<usize>,
    pub rel_errors: Vec<f64>,
    pub losses: Vec<f64>,
    pub iters_run: usize,
    pub converged: bool,
    pub final_z: CVector,
    pub final_rel_error: f64,
    pub fitted_rate: Option<f64>,
    /// Step size of the last accepted iteration (the nominal step if none ran).
    pub mu_used: f64,
    pub r0: f64,
    pub r0_fallback: bool,
    /// Iteration at which the loss stopped being finite.
    pub diverged_at: Option<usize>,
    pub stalled: bool,
}

fn relative_error(z: &[Complex64], x: &[Complex64], x_norm: f64) -> f64 {
    let dist = linalg::distance(z, x);
    if x_norm > 0.0 {
        dist / x_norm
    } else {
        dist
    }
}

/// Runs the iteration `z_{k+1} = z_k − μ ∇f(z_k)` and returns the trace.
///
/// A divergent run is reported through [`Error::Diverged`].
pub fn gradient_descent(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolveTrace> {
    let trace = gradient_descent_traced(instance, config)?;
    match trace.diverged_at {
        Some(iteration) => Err(Error::Diverged {
            iteration,
            loss: trace.losses.last().copied().unwrap_or(f64::NAN),
        }),
        None => Ok(trace),
    }
}

/// Like [`gradient_descent`] but returns the partial trace of a divergent run.
pub fn gradient_descent_traced(
    instance: &ProblemInstance,
    config: &SolverConfig,
) -> Result<SolveTrace> {
    let rule = StepRegistry::builtin().build(&config.step)?;
    gradient_descent_with(instance, config, rule)
}

/// Runs with an explicitly constructed step rule.
pub fn gradient_descent_with(
    instance: &ProblemInstance,
    config: &SolverConfig,
    mut rule: Box<dyn StepRule>,
) -> Result<SolveTrace> {
    config.validate()?;
    let d = instance.d();
    let (r0, r0_fallback) = r0_with_fallback(instance)?;
    let mut z = match &config.init {
        InitMode::RandomInBall { seed } => {
            sample_initial_point(r0, d, &RngSpec::new(*seed).child(stream::INIT))?
        }
        InitMode::UserSupplied { z0 } => {
            instance.check_dim(z0)?;
            if !linalg::all_finite(z0) {
                return Err(Error::invalid("initial point has non-finite entries"));
            }
            z0.clone()
        }
    };
    let x_norm = instance.signal_norm();
    let grad_scale = instance.mean_observation().abs().powf(1.5).max(f64::MIN_POSITIVE);

    let mut mu_used = rule.prepare(instance, &z)?;
    let mut trace = SolveTrace {
        iters: Vec::new(),
        rel_errors: Vec::new(),
        losses: Vec::new(),
        iters_run: 0,
        converged: false,
        final_z: Vec::new(),
        final_rel_error: f64::NAN,
        fitted_rate: None,
        mu_used,
        r0,
        r0_fallback,
        diverged_at: None,
        stalled: false,
    };

    let (mut loss, mut grad) = objective::loss_and_gradient(instance, &z);
    let mut rel = relative_error(&z, &instance.x, x_norm);
    let mut k = 0;
    let mut last_recorded = None;
    loop {
        if !loss.is_finite() || !linalg::all_finite(&z) {
            trace.diverged_at = Some(k);
            record(&mut trace, k, rel, loss);
            break;
        }
        let should_record = config.record_trace && (k <= DENSE_TRACE_LIMIT || k % 10 == 0);
        if should_record {
            record(&mut trace, k, rel, loss);
            last_recorded = Some(k);
        }
        let done = match config.stop_rule {
            StopRule::RelativeError => rel <= config.success_tol,
            StopRule::GradientNorm => linalg::norm(&grad) <= config.grad_tol * grad_scale,
        };
        if done || k >= config.max_iters {
            break;
        }
        match rule.step(instance, &z, loss, &grad) {
            StepOutcome::Moved { z: next, mu } => {
                z = next;
                mu_used = mu;
            }
            StepOutcome::Stalled => {
                trace.stalled = true;
                break;
            }
        }
        k += 1;
        (loss, grad) = objective::loss_and_gradient(instance, &z);
        rel = relative_error(&z, &instance.x, x_norm);
    }
    if trace.diverged_at.is_none() && last_recorded != Some(k) {
        record(&mut trace, k, rel, loss);
    }
    trace.iters_run = k;
    trace.mu_used = mu_used;
    trace.final_rel_error = rel;
    trace.converged = trace.diverged_at.is_none()
        && match config.stop_rule {
            StopRule::RelativeError => rel <= config.success_tol,
            StopRule::GradientNorm => linalg::norm(&grad) <= config.grad_tol * grad_scale,
        };
    trace.final_z = z;
    trace.fitted_rate = fit_convergence_rate(&trace.iters, &trace.rel_errors)
        .ok()
        .map(|f| f.rate);
    Ok(trace)
}

fn record(trace: &mut SolveTrace, k: usize, rel: f64, loss: f64) {
    trace.iters.push(k);
    trace.rel_errors.push(rel);
    trace.losses.push(loss);
}

/// Window of relative errors used for the linear-rate fit.
pub const RATE_WINDOW: (f64, f64) = (1e-10, 1e-1);
pub const RATE_MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(slope)` of `log(rel_error)` against the iteration index.
    pub rate: f64,
    pub r_squared: f64,
    pub points: usize,
    /// `rate < 1`.
    pub contracting: bool,
}

/// Least-squares fit of `log(rel_error)` against `k` over errors in
/// [`RATE_WINDOW`].
pub fn fit_convergence_rate(iters: &[usize], rel_errors: &[f64]) -> Result<RateFit> {
    let (lo, hi) = RATE_WINDOW;
    let pts: Vec<(f64, f64)> = iters
        .iter()
        .zip(rel_errors)
        .filter(|(_, e)| e.is_finite() && **e >= lo && **e <= hi)
        .map(|(k, e)| (*k as f64, e.ln()))
        .collect();
    if pts.len() < RATE_MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} relative errors in [{lo:e}, {hi:e}], need {RATE_MIN_POINTS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_k = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_e = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_k).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_e)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_e).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all points share one iteration index".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let rate = slope.exp();
    Ok(RateFit {
        rate,
        r_squared,
        points: pts.len(),
        contracting: rate < 1.0,
    })
}

/// The two contraction factors suggested by the analysis for step `mu` and
/// curvature bound `beta`: `μβ` and `μβ/2`.
pub fn theoretical_rates(mu: f64, beta: f64) -> (f64, f64) {
    (mu * beta, mu * beta / 2.0)
}

/// Compact JSON summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub converged: bool,
    pub iters_run: usize,
    pub fitted_rate: Option<f64>,
    pub mu_used: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub final_rel_error: f64,
    pub final_loss: f64,
    pub step: String,
    pub mu_theory: Option<f64>,
    pub rho_theory: Option<f64>,
    pub rho_theory_half: Option<f64>,
    pub r0_fallback: bool,
    pub diverged_at: Option<usize>,
}

impl SolveSummary {
    pub fn new(instance: &ProblemInstance, config: &SolverConfig, trace: &SolveTrace) -> Self {
        let x_norm = instance.signal_norm();
        let mu_theory = lipschitz_constant_cr(instance, 5.0 * x_norm.max(trace.r0 / 3.0))
            .ok()
            .map(theoretical_step);
        let beta = crate::model::check_bias_conditions(instance)
            .ok()
            .map(|rep| (1.96 * rep.c0_hat.powi(2) - 4.4) * x_norm * x_norm);
        let rates = beta.map(|b| theoretical_rates(trace.mu_used, b));
        Self {
            converged: trace.converged,
            iters_run: trace.iters_run,
            fitted_rate: trace.fitted_rate,
            mu_used: trace.mu_used,
            r0: trace.r0,
            final_rel_error: trace.final_rel_error,
            final_loss: trace.losses.last().copied().unwrap_or(f64::NAN),
            step: config.step.to_string(),
            mu_theory,
            rho_theory: rates.map(|r| r.0),
            rho_theory_half: rates.map(|r| r.1),
            r0_fallback: trace.r0_fallback,
            diverged_at: trace.diverged_at,
        }
    }
}

/// Writes `iter,rel_error,loss` rows.
pub fn write_trace_csv(trace: &SolveTrace, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "iter,rel_error,loss")?;
    for ((k, e), f) in trace.iters.iter().zip(&trace.rel_errors).zip(&trace.losses) {
        writeln!(out, "{k},{e:?},{f:?}")?;
    }
    Ok(())
}
