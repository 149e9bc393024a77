//! Problem instances and their random generation.

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CVector, ComplexMatrix};
use crate::rng::{stream, RngSpec};

/// Variance convention for complex Gaussian draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianConvention {
    /// Real and imaginary parts each N(0, 1/2), so E|a|² = 1. Used for measurement rows.
    UnitModulus,
    /// Real and imaginary parts each N(0, 1), so E|a|² = 2. Used for the signal.
    UnitComponents,
}

impl GaussianConvention {
    fn component_std(self) -> f64 {
        match self {
            GaussianConvention::UnitModulus => std::f64::consts::FRAC_1_SQRT_2,
            GaussianConvention::UnitComponents => 1.0,
        }
    }
}

pub(crate) fn draw_complex<R: Rng>(rng: &mut R, n: usize, std: f64) -> CVector {
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(std * re, std * im)
        })
        .collect()
}

/// Draws `n` i.i.d. complex Gaussian entries.
pub fn sample_complex_gaussian(
    n: usize,
    rng: &RngSpec,
    convention: GaussianConvention,
) -> Result<CVector> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    Ok(draw_complex(&mut rng.rng(), n, convention.component_std()))
}

/// Parameters that fully determine a generated instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d: usize,
    pub m: usize,
    pub bias_lambda: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl InstanceParams {
    pub fn new(d: usize, m: usize, bias_lambda: f64, sigma: f64, seed: u64) -> Self {
        Self {
            d,
            m,
            bias_lambda,
            sigma,
            seed,
        }
    }
}

/// Measurements `y_j = |a_j^* x + b_j|² + η_j`.
///
/// Row `j` of `a` stores the conjugated measurement vector `a_j^*`, so the
/// measurement map is a plain matrix-vector product `A z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub a: ComplexMatrix,
    pub b: CVector,
    pub x: CVector,
    pub y: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn new(
        a: ComplexMatrix,
        b: CVector,
        x: CVector,
        y: Vec<f64>,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let (m, d) = (a.rows(), a.cols());
        if m == 0 || d == 0 {
            return Err(Error::invalid("instance needs m >= 1 and d >= 1"));
        }
        if b.len() != m || y.len() != m {
            return Err(Error::invalid(format!(
                "bias has {} and observations {} entries, expected m = {m}",
                b.len(),
                y.len()
            )));
        }
        if x.len() != d {
            return Err(Error::invalid(format!(
                "signal has length {}, expected d = {d}",
                x.len()
            )));
        }
        if !(sigma >= 0.0) {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        Ok(Self {
            a,
            b,
            x,
            y,
            sigma,
            seed,
        })
    }

    /// Noiseless instance whose observations are computed from `x`.
    pub fn noiseless(a: ComplexMatrix, b: CVector, x: CVector, seed: u64) -> Result<Self> {
        if a.rows() != b.len() || a.cols() != x.len() {
            return Err(Error::invalid("measurement matrix does not match b and x"));
        }
        let y = intensities(&a, &b, &x);
        Self::new(a, b, x, y, 0.0, seed)
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// `r_j = a_j^* z + b_j`.
    pub fn residual_fields(&self, z: &[Complex64]) -> CVector {
        self.a
            .row_iter()
            .zip(&self.b)
            .map(|(row, bj)| linalg::dot_plain(row, z) + bj)
            .collect()
    }

    pub fn check_dim(&self, z: &[Complex64]) -> Result<()> {
        if z.len() != self.d() {
            return Err(Error::invalid(format!(
                "point has dimension {}, instance has d = {}",
                z.len(),
                self.d()
            )));
        }
        Ok(())
    }

    pub fn signal_norm(&self) -> f64 {
        linalg::norm(&self.x)
    }

    /// `(1/m) Σ y_j`.
    pub fn mean_observation(&self) -> f64 {
        linalg::compensated_sum(self.y.iter().copied()) / self.m() as f64
    }
}

/// `|a_j^* z + b_j|²` for every row.
pub fn intensities(a: &ComplexMatrix, b: &[Complex64], z: &[Complex64]) -> Vec<f64> {
    a.row_iter()
        .zip(b)
        .map(|(row, bj)| (linalg::dot_plain(row, z) + bj).norm_sqr())
        .collect()
}

/// Draws a random instance: unit-modulus Gaussian measurement rows, a
/// unit-component Gaussian signal, a real Gaussian bias scaled by
/// `bias_lambda·‖x‖` and additive N(0, sigma²) noise on the intensities.
pub fn generate_instance(params: &InstanceParams) -> Result<ProblemInstance> {
    let InstanceParams {
        d,
        m,
        bias_lambda,
        sigma,
        seed,
    } = *params;
    if d == 0 || m == 0 {
        return Err(Error::invalid("d and m must be positive"));
    }
    if !(bias_lambda >= 0.0) || !bias_lambda.is_finite() {
        return Err(Error::invalid("bias_lambda must be finite and nonnegative"));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma must be finite and nonnegative"));
    }
    if m < d {
        warn!("m = {m} < d = {d}: the signal is not identifiable");
    }
    let root = RngSpec::new(seed);
    let a_data = sample_complex_gaussian(
        m * d,
        &root.child(stream::MEASUREMENTS),
        GaussianConvention::UnitModulus,
    )?;
    let a = ComplexMatrix::from_row_major(m, d, a_data)?;
    let x = sample_complex_gaussian(d, &root.child(stream::SIGNAL), GaussianConvention::UnitComponents)?;
    let bias_scale = bias_lambda * linalg::norm(&x);
    let mut bias_rng = root.child(stream::BIAS).rng();
    let b: CVector = (0..m)
        .map(|_| {
            let g: f64 = bias_rng.sample(StandardNormal);
            Complex64::new(bias_scale * g, 0.0)
        })
        .collect();
    let mut y = intensities(&a, &b, &x);
    if sigma > 0.0 {
        let mut noise_rng = root.child(stream::NOISE).rng();
        for yj in &mut y {
            let eta: f64 = noise_rng.sample(StandardNormal);
            *yj += sigma * eta;
        }
    }
    ProblemInstance::new(a, b, x, y, sigma, seed)
}

/// Threshold on `c0` above which the strong-convexity bound is positive.
pub fn c0_threshold() -> f64 {
    (4.4_f64 / 1.96).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasConditionReport {
    /// `‖b‖ / (√m ‖x‖)`
    pub c0_hat: f64,
    /// `Σ|b_j|⁴ / (m ‖x‖⁴)`
    pub fourth_moment_ratio: f64,
    /// `‖b‖_∞ / (√(log m) ‖x‖)`
    pub infnorm_ratio: f64,
    pub satisfied: bool,
}

pub fn check_bias_conditions(instance: &ProblemInstance) -> Result<BiasConditionReport> {
    bias_conditions(&instance.b, linalg::norm(&instance.x))
}

/// Bias ratios for a given `b` and `‖x‖`.
pub fn bias_conditions(b: &[Complex64], x_norm: f64) -> Result<BiasConditionReport> {
    let m = b.len();
    if x_norm <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    if m < 2 {
        return Err(Error::invalid("bias conditions need m >= 2"));
    }
    let mf = m as f64;
    let c0_hat = linalg::norm(b) / (mf.sqrt() * x_norm);
    let fourth: f64 = b.iter().map(|c| c.norm_sqr() * c.norm_sqr()).sum();
    let fourth_moment_ratio = fourth / (mf * x_norm.powi(4));
    let infnorm_ratio = linalg::norm_inf(b) / (mf.ln().sqrt() * x_norm);
    let satisfied =
        c0_hat > c0_threshold() && fourth_moment_ratio.is_finite() && infnorm_ratio.is_finite();
    if satisfied && c0_hat < 1.5 {
        warn!("c0_hat = {c0_hat:.4} lies between sqrt(4.4/1.96) and 3/2");
    }
    Ok(BiasConditionReport {
        c0_hat,
        fourth_moment_ratio,
        infnorm_ratio,
        satisfied,
    })
}
