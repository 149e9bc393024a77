//! Monte-Carlo success sweeps and instrumented convergence runs, with CSV,
//! JSON and SVG output.

pub mod plot;

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_instance, InstanceParams};
use crate::rng::derive_seed;
use crate::solver::{
    fit_convergence_rate, gradient_descent_traced, InitMode, SolverConfig,
};

/// Success threshold on `‖z_T − x‖/‖x‖`.
pub const SUCCESS_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub ratio: f64,
    pub trial: usize,
    pub seed: u64,
    pub final_rel_error: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub d: usize,
    pub ratios: Vec<f64>,
    pub ms: Vec<usize>,
    pub trials_per_ratio: usize,
    pub successes: Vec<usize>,
    pub step_policy: String,
    pub base_seed: u64,
    pub bias_lambda: f64,
    pub sigma: f64,
    pub max_iters: usize,
    pub measurement_convention: String,
    pub failures: Vec<FailedTrial>,
}

impl SweepResult {
    pub fn success_rates(&self) -> Vec<f64> {
        self.successes
            .iter()
            .map(|s| *s as f64 / self.trials_per_ratio as f64)
            .collect()
    }

    /// Largest drop in success rate between consecutive ratios (0 if none).
    pub fn worst_monotonicity_violation(&self) -> f64 {
        self.success_rates()
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Seed of trial `t` at ratio index `i`.
pub fn trial_seed(base_seed: u64, ratio_index: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(base_seed, ratio_index as u64), trial as u64)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub d: usize,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub bias_lambda: f64,
    pub sigma: f64,
    pub base_seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

/// Runs `trials` independent generate → initialize → solve pipelines per
/// ratio. A trial succeeds when its final relative error is at most
/// `config.success_tol`; divergent trials count as failures.
pub fn run_success_sweep(spec: &SweepSpec, config: &SolverConfig) -> Result<SweepResult> {
    if spec.ratios.is_empty() {
        return Err(Error::invalid("ratios must not be empty"));
    }
    if spec.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if spec.d == 0 {
        return Err(Error::invalid("d must be positive"));
    }
    config.validate()?;
    let ms: Vec<usize> = spec
        .ratios
        .iter()
        .map(|r| {
            if !(*r > 0.0) || !r.is_finite() {
                return Err(Error::invalid(format!("ratio must be positive, got {r}")));
            }
            Ok(((r * spec.d as f64).round() as usize).max(1))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.ratios.len())
        .flat_map(|i| (0..spec.trials).map(move |t| (i, t)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(i, t)| {
                let seed = trial_seed(spec.base_seed, i, t);
                let inst = generate_instance(&InstanceParams::new(
                    spec.d,
                    ms[i],
                    spec.bias_lambda,
                    spec.sigma,
                    seed,
                ))?;
                let cfg = SolverConfig {
                    init: InitMode::RandomInBall { seed },
                    record_trace: false,
                    ..config.clone()
                };
                match gradient_descent_traced(&inst, &cfg) {
                    Ok(tr) => Ok((
                        tr.diverged_at.is_none() && tr.final_rel_error <= config.success_tol,
                        tr.final_rel_error,
                        tr.diverged_at.is_some(),
                    )),
                    Err(e @ Error::InvalidArgument(_)) => Err(e),
                    Err(_) => Ok((false, f64::NAN, false)),
                }
            })
            .collect::<Result<Vec<_>>>()
    };
    let outcomes = if spec.jobs == 0 { run()? } else { pool(spec.jobs)?.install(run)? };

    let mut successes = vec![0; spec.ratios.len()];
    let mut failures = Vec::new();
    for (&(i, t), (ok, err, diverged)) in jobs.iter().zip(outcomes) {
        if ok {
            successes[i] += 1;
        } else {
            failures.push(FailedTrial {
                ratio: spec.ratios[i],
                trial: t,
                seed: trial_seed(spec.base_seed, i, t),
                final_rel_error: err,
                diverged,
            });
        }
    }
    Ok(SweepResult {
        d: spec.d,
        ratios: spec.ratios.clone(),
        ms,
        trials_per_ratio: spec.trials,
        successes,
        step_policy: config.step.to_string(),
        base_seed: spec.base_seed,
        bias_lambda: spec.bias_lambda,
        sigma: spec.sigma,
        max_iters: config.max_iters,
        measurement_convention: "unit-modulus".into(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub d: usize,
    pub m: usize,
    pub sigma: f64,
    pub bias_lambda: f64,
    pub seed: u64,
    pub step_policy: String,
    pub mu_used: f64,
    pub iters: Vec<usize>,
    pub rel_errors: Vec<f64>,
    pub losses: Vec<f64>,
    pub iters_run: usize,
    pub final_rel_error: f64,
    pub fitted_rate: Option<f64>,
    pub fit_r_squared: Option<f64>,
    /// Median relative error over the last 10% of recorded iterations (noisy runs).
    pub plateau: Option<f64>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSpec {
    pub d: usize,
    pub m: usize,
    pub sigma: f64,
    pub bias_lambda: f64,
    pub seed: u64,
}

/// Median of the last tenth of `values` (at least one element).
pub fn tail_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = (values.len() / 10).max(1);
    let mut tail = values[values.len() - n..].to_vec();
    tail.sort_by(f64::total_cmp);
    let mid = tail.len() / 2;
    Some(if tail.len() % 2 == 0 {
        0.5 * (tail[mid - 1] + tail[mid])
    } else {
        tail[mid]
    })
}

/// One instrumented solve with the full trace. Divergence is recorded in the
/// result rather than returned as an error.
pub fn run_convergence_experiment(
    spec: &ConvergenceSpec,
    config: &SolverConfig,
) -> Result<ConvergenceResult> {
    let inst = generate_instance(&InstanceParams::new(
        spec.d,
        spec.m,
        spec.bias_lambda,
        spec.sigma,
        spec.seed,
    ))?;
    let cfg = SolverConfig {
        record_trace: true,
        init: match &config.init {
            InitMode::RandomInBall { .. } => InitMode::RandomInBall { seed: spec.seed },
            user => user.clone(),
        },
        ..config.clone()
    };
    let trace = gradient_descent_traced(&inst, &cfg)?;
    let fit = fit_convergence_rate(&trace.iters, &trace.rel_errors).ok();
    let plateau = if spec.sigma > 0.0 {
        tail_median(&trace.rel_errors)
    } else {
        None
    };
    Ok(ConvergenceResult {
        d: spec.d,
        m: spec.m,
        sigma: spec.sigma,
        bias_lambda: spec.bias_lambda,
        seed: spec.seed,
        step_policy: cfg.step.to_string(),
        mu_used: trace.mu_used,
        iters: trace.iters,
        rel_errors: trace.rel_errors,
        losses: trace.losses,
        iters_run: trace.iters_run,
        final_rel_error: trace.final_rel_error,
        fitted_rate: fit.map(|f| f.rate),
        fit_r_squared: fit.map(|f| f.r_squared),
        plateau,
        diverged_at: trace.diverged_at,
    })
}

/// Something that can be written as CSV and SVG.
pub trait Report {
    fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()>;
    fn render_svg(&self) -> String;
}

impl Report for SweepResult {
    fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "ratio,trials,successes,success_rate")?;
        for ((r, s), rate) in self.ratios.iter().zip(&self.successes).zip(self.success_rates()) {
            writeln!(out, "{r:?},{},{s},{rate:?}", self.trials_per_ratio)?;
        }
        Ok(())
    }

    fn render_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self.ratios.iter().copied().zip(self.success_rates()).collect();
        plot::line_plot(
            &pts,
            &plot::Labels {
                title: &format!("Empirical success rate, d = {}", self.d),
                x: "m / d",
                y: "success rate",
            },
            Some((0.0, 1.0)),
        )
    }
}

impl Report for ConvergenceResult {
    fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "iter,rel_error")?;
        for (k, e) in self.iters.iter().zip(&self.rel_errors) {
            writeln!(out, "{k},{e:?}")?;
        }
        Ok(())
    }

    fn render_svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .iters
            .iter()
            .zip(&self.rel_errors)
            .filter(|(_, e)| **e > 0.0 && e.is_finite())
            .map(|(k, e)| (*k as f64, e.log10()))
            .collect();
        plot::line_plot(
            &pts,
            &plot::Labels {
                title: &format!("Relative error, d = {}, m = {}, sigma = {}", self.d, self.m, self.sigma),
                x: "iteration",
                y: "log10 relative error",
            },
            None,
        )
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn csv_string(result: &dyn Report) -> String {
    let mut buf = Vec::new();
    result.write_csv(&mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn emit_csv(result: &dyn Report, path: &Path) -> Result<()> {
    write_file(path, csv_string(result).as_bytes())
}

pub fn emit_plot(result: &dyn Report, path: &Path) -> Result<()> {
    write_file(path, result.render_svg().as_bytes())
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    write_file(path, format!("{text}\n").as_bytes())
}

/// Row of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize) -> std::result::Result<T, String> {
    field
        .ok_or_else(|| format!("line {line}: missing column"))?
        .parse()
        .map_err(|_| format!("line {line}: malformed value"))
}

pub fn parse_sweep_csv(text: &str) -> std::result::Result<Vec<SweepRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("ratio,trials,successes,success_rate") {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut f = l.split(',');
            Ok(SweepRow {
                ratio: parse_field(f.next(), i + 2)?,
                trials: parse_field(f.next(), i + 2)?,
                successes: parse_field(f.next(), i + 2)?,
                success_rate: parse_field(f.next(), i + 2)?,
            })
        })
        .collect()
}

pub fn parse_convergence_csv(text: &str) -> std::result::Result<Vec<(usize, f64)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("iter,rel_error") {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let mut f = l.split(',');
            Ok((parse_field(f.next(), i + 2)?, parse_field(f.next(), i + 2)?))
        })
        .collect()
}

#[cfg(test)]
mod tests;
