//! Empirical checks of the structural claims: curvature bounded below by
//! `(1.96 c0² − 4.4) ‖x‖²`, the `R₀` sandwich, the intensity difference
//! inequality, and a batch harness for the derivative oracles.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::model::{self, generate_instance, InstanceParams, ProblemInstance};
use crate::objective;
use crate::rng::{stream, RngSpec};
use crate::solver::{compute_r0, uniform_in_ball};

/// `(1.96 c0² − 4.4) ‖x‖²`.
pub fn beta_theory(c0_hat: f64, x_norm: f64) -> f64 {
    (1.96 * c0_hat * c0_hat - 4.4) * x_norm * x_norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityProbe {
    pub num_points: usize,
    /// Points are drawn from `‖z‖ ≤ ball_radius_mult · ‖x‖`.
    pub ball_radius_mult: f64,
    /// Pass requires the smallest eigenvalue to reach `slack · beta_theory`.
    pub slack: f64,
    /// Random unit directions evaluated per point for `min_quadform_sampled`.
    pub directions_per_point: usize,
}

impl Default for ConvexityProbe {
    fn default() -> Self {
        Self {
            num_points: 20,
            ball_radius_mult: 10.0,
            slack: 0.5,
            directions_per_point: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub num_points: usize,
    pub min_quadform_sampled: f64,
    pub min_eig_real_hessian: f64,
    /// Smallest eigenvalue at each probe point, in draw order.
    pub point_min_eigs: Vec<f64>,
    pub positive_points: usize,
    pub beta_theory: f64,
    pub c0_hat: f64,
    pub bias_conditions_satisfied: bool,
    pub ball_radius: f64,
    pub slack: f64,
    pub pass: bool,
}

fn random_unit(rng: &mut impl Rng, d: usize) -> CVector {
    loop {
        let v: CVector = (0..d)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let n = linalg::norm(&v);
        if n > 0.0 {
            return linalg::scale(&v, 1.0 / n);
        }
    }
}

struct PointResult {
    min_eig: f64,
    min_quadform: f64,
}

fn probe_point(
    instance: &ProblemInstance,
    index: usize,
    radius: f64,
    directions: usize,
    rng: &RngSpec,
) -> Result<PointResult> {
    let d = instance.d();
    let mut g = rng.rng();
    let z = uniform_in_ball(&mut g, radius, d);
    let h = objective::assemble_real_hessian(instance, &z)?;
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000).ok_or_else(|| Error::Numerical {
        index,
        reason: "symmetric eigensolver did not converge".into(),
    })?;
    let min_eig = eig.eigenvalues.min();
    if !min_eig.is_finite() {
        return Err(Error::Numerical {
            index,
            reason: "non-finite eigenvalue".into(),
        });
    }
    let mut min_quadform = f64::INFINITY;
    for _ in 0..directions {
        let v = random_unit(&mut g, d);
        min_quadform = min_quadform.min(objective::hessian_quadratic_form(instance, &z, &v)?);
    }
    Ok(PointResult {
        min_eig,
        min_quadform,
    })
}

/// Samples points in a ball around the origin and reports the smallest
/// eigenvalue of the real Hessian over them.
pub fn probe_strong_convexity(
    instance: &ProblemInstance,
    probe: &ConvexityProbe,
    rng: &RngSpec,
) -> Result<ConvexityReport> {
    if probe.num_points == 0 {
        return Err(Error::invalid("num_points must be at least 1"));
    }
    if !(probe.ball_radius_mult > 0.0) {
        return Err(Error::invalid("ball_radius_mult must be positive"));
    }
    let order = 2 * instance.d();
    if order > objective::MAX_DENSE_ORDER {
        return Err(Error::ResourceLimit {
            order,
            limit: objective::MAX_DENSE_ORDER,
        });
    }
    let x_norm = instance.signal_norm();
    let bias = model::check_bias_conditions(instance)?;
    if !bias.satisfied {
        warn!(
            "bias conditions not satisfied (c0_hat = {:.4}); the probe cannot pass",
            bias.c0_hat
        );
    }
    let radius = probe.ball_radius_mult * x_norm;
    let root = rng.child(stream::PROBE);
    let points = (0..probe.num_points)
        .into_par_iter()
        .map(|i| probe_point(instance, i, radius, probe.directions_per_point, &root.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let point_min_eigs: Vec<f64> = points.iter().map(|p| p.min_eig).collect();
    let min_eig = point_min_eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let min_quadform = points
        .iter()
        .map(|p| p.min_quadform)
        .fold(f64::INFINITY, f64::min);
    let beta = beta_theory(bias.c0_hat, x_norm);
    let pass = bias.satisfied && min_eig >= probe.slack * beta;
    Ok(ConvexityReport {
        num_points: probe.num_points,
        min_quadform_sampled: min_quadform,
        min_eig_real_hessian: min_eig,
        positive_points: point_min_eigs.iter().filter(|e| **e > 0.0).count(),
        point_min_eigs,
        beta_theory: beta,
        c0_hat: bias.c0_hat,
        bias_conditions_satisfied: bias.satisfied,
        ball_radius: radius,
        slack: probe.slack,
        pass,
    })
}

/// Smallest eigenvalue of a symmetric matrix by power iteration on
/// `s I − H`, where `s` is the Gershgorin bound on the spectrum.
pub fn smallest_eigenvalue_shifted_power(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let shift = (0..n)
        .map(|i| h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut rng = RngSpec::new(0xB0B).rng();
    let start: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let est = linalg::power_iteration(
        &start,
        |v| {
            let dv = DVector::from_column_slice(v);
            let hv = h * &dv;
            v.iter().zip(hv.iter()).map(|(a, b)| shift * a - b).collect()
        },
        30,
        50_000,
        1e-14,
    );
    shift - est.value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub trials: usize,
    pub holds: usize,
    pub fraction: f64,
    /// Instance seeds of trials where `R₀/3 ≤ ‖x‖ ≤ R₀` failed.
    pub failing_seeds: Vec<u64>,
}

/// Whether `R₀/3 ≤ ‖x‖ ≤ R₀` on one instance.
pub fn r0_sandwich_holds(instance: &ProblemInstance) -> bool {
    match compute_r0(instance) {
        Ok(r0) => {
            let x = instance.signal_norm();
            r0 / 3.0 <= x && x <= r0
        }
        Err(_) => false,
    }
}

/// Fraction of noiseless random instances satisfying the `R₀` sandwich.
pub fn probe_r0_sandwich(
    d: usize,
    m: usize,
    bias_lambda: f64,
    trials: usize,
    rng: &RngSpec,
) -> Result<SandwichReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = rng.child(t as u64).seed;
            let inst = generate_instance(&InstanceParams::new(d, m, bias_lambda, 0.0, seed))?;
            Ok((seed, r0_sandwich_holds(&inst)))
        })
        .collect::<Result<Vec<_>>>()?;
    let failing_seeds: Vec<u64> = outcomes.iter().filter(|o| !o.1).map(|o| o.0).collect();
    let holds = trials - failing_seeds.len();
    Ok(SandwichReport {
        trials,
        holds,
        fraction: holds as f64 / trials as f64,
        failing_seeds,
    })
}

/// Both sides of
/// `(1/m) Σ ||a_j^* z + b_j|² − |a_j^* w + b_j|²| ≤ (3/2)(‖z‖ + ‖w‖ + 2‖b‖/√m) ‖z − w‖`.
pub fn difference_inequality_sides(
    instance: &ProblemInstance,
    z: &[Complex64],
    w: &[Complex64],
) -> Result<(f64, f64)> {
    instance.check_dim(z)?;
    instance.check_dim(w)?;
    let m = instance.m() as f64;
    let lhs = instance
        .residual_fields(z)
        .iter()
        .zip(instance.residual_fields(w))
        .map(|(rz, rw)| (rz.norm_sqr() - rw.norm_sqr()).abs())
        .sum::<f64>()
        / m;
    let rhs = 1.5
        * (linalg::norm(z) + linalg::norm(w) + 2.0 * linalg::norm(&instance.b) / m.sqrt())
        * linalg::distance(z, w);
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceReport {
    pub pairs: usize,
    pub holds: usize,
    pub fraction: f64,
    /// Largest observed `lhs / rhs` over pairs with `rhs > 0`.
    pub max_ratio: f64,
}

/// Checks the difference inequality on random pairs with `‖z‖, ‖w‖ ≤ 10‖x‖`.
pub fn probe_difference_inequality(
    d: usize,
    m: usize,
    bias_lambda: f64,
    pairs: usize,
    rng: &RngSpec,
) -> Result<DifferenceReport> {
    if pairs == 0 {
        return Err(Error::invalid("pairs must be at least 1"));
    }
    if m < 8 * d {
        warn!("m = {m} < 8d = {}: the inequality may fail", 8 * d);
    }
    let inst = generate_instance(&InstanceParams::new(d, m, bias_lambda, 0.0, rng.child(0).seed))?;
    let radius = 10.0 * inst.signal_norm();
    let sides = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut g = rng.child(1 + i as u64).rng();
            let z = uniform_in_ball(&mut g, radius, d);
            let w = uniform_in_ball(&mut g, radius, d);
            difference_inequality_sides(&inst, &z, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    let holds = sides.iter().filter(|(l, r)| l <= r).count();
    let max_ratio = sides
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|(l, r)| l / r)
        .fold(0.0, f64::max);
    Ok(DifferenceReport {
        pairs,
        holds,
        fraction: holds as f64 / pairs as f64,
        max_ratio,
    })
}

/// Tolerances of [`run_derivative_checks`].
pub const GRADIENT_TOL: f64 = 1e-6;
pub const CURVATURE_FD_TOL: f64 = 1e-5;
pub const CURVATURE_DENSE_TOL: f64 = 1e-10;
/// Largest measurement count drawn by the harness.
pub const DERIVATIVE_CHECK_MAX_M: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCase {
    pub seed: u64,
    pub d: usize,
    pub m: usize,
    pub gradient_dev: f64,
    pub curvature_fd_dev: f64,
    pub curvature_dense_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheckReport {
    pub cases: usize,
    pub max_gradient_dev: f64,
    pub max_curvature_fd_dev: f64,
    pub max_curvature_dense_dev: f64,
    /// Seeds of cases exceeding a tolerance.
    pub failing_seeds: Vec<u64>,
    pub pass: bool,
}

/// Compares analytic derivatives with their oracles at one `(z, v)`.
pub fn check_derivatives_at(
    instance: &ProblemInstance,
    z: &[Complex64],
    v: &[Complex64],
) -> Result<(f64, f64, f64)> {
    let g = objective::wirtinger_gradient(instance, z)?;
    let analytic = 2.0 * linalg::inner(&g, v).re;
    let fd = objective::directional_derivative_fd(
        instance,
        z,
        v,
        objective::first_difference_step(z, v),
    )?;
    let gradient_dev = (fd - analytic).abs() / (1.0 + analytic.abs());

    let q = objective::hessian_quadratic_form(instance, z, v)?;
    let fd2 = objective::second_directional_fd(instance, z, v, objective::second_difference_step(z, v))?;
    let curvature_fd_dev = (fd2 - q).abs() / q.abs().max(1.0);

    let h = objective::assemble_real_hessian(instance, z)?;
    let delta = DVector::from_vec(linalg::to_real(v));
    let dense = delta.dot(&(&h * &delta));
    let curvature_dense_dev = (dense - q).abs() / q.abs().max(1.0);
    Ok((gradient_dev, curvature_fd_dev, curvature_dense_dev))
}

/// Draws `num_cases` small random instances and points and checks the
/// gradient and curvature against the finite-difference and dense oracles.
pub fn run_derivative_checks(num_cases: usize, max_d: usize, rng: &RngSpec) -> Result<DerivativeCheckReport> {
    if num_cases == 0 {
        return Err(Error::invalid("num_cases must be at least 1"));
    }
    if max_d == 0 {
        return Err(Error::invalid("max_d must be at least 1"));
    }
    let cases = (0..num_cases)
        .into_par_iter()
        .map(|i| {
            let seed = rng.child(i as u64).seed;
            let mut g = RngSpec::new(seed).rng();
            let d = g.random_range(1..=max_d);
            let m_hi = DERIVATIVE_CHECK_MAX_M.max(d);
            let m = g.random_range(d.max(2)..=m_hi);
            let bias_lambda = g.random_range(0.5..5.0);
            let inst = generate_instance(&InstanceParams::new(d, m, bias_lambda, 0.0, seed))?;
            let x_norm = inst.signal_norm();
            let z = uniform_in_ball(&mut g, 3.0 * x_norm, d);
            let v = random_unit(&mut g, d);
            let (gd, cf, cd) = check_derivatives_at(&inst, &z, &v)?;
            Ok(DerivativeCase {
                seed,
                d,
                m,
                gradient_dev: gd,
                curvature_fd_dev: cf,
                curvature_dense_dev: cd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_of = |f: fn(&DerivativeCase) -> f64| cases.iter().map(f).fold(0.0, f64::max);
    let failing_seeds: Vec<u64> = cases
        .iter()
        .filter(|c| {
            !(c.gradient_dev <= GRADIENT_TOL
                && c.curvature_fd_dev <= CURVATURE_FD_TOL
                && c.curvature_dense_dev <= CURVATURE_DENSE_TOL)
        })
        .map(|c| c.seed)
        .collect();
    Ok(DerivativeCheckReport {
        cases: num_cases,
        max_gradient_dev: max_of(|c| c.gradient_dev),
        max_curvature_fd_dev: max_of(|c| c.curvature_fd_dev),
        max_curvature_dense_dev: max_of(|c| c.curvature_dense_dev),
        pass: failing_seeds.is_empty(),
        failing_seeds,
    })
}
