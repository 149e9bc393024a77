use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CVector = Vec<Complex64>;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.cols)
    }

    /// `A v`.
    pub fn apply(&self, v: &[Complex64]) -> CVector {
        debug_assert_eq!(v.len(), self.cols);
        self.row_iter().map(|row| dot_plain(row, v)).collect()
    }

    /// `A^H w`.
    pub fn adjoint_apply(&self, w: &[Complex64]) -> CVector {
        debug_assert_eq!(w.len(), self.rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (row, wj) in self.row_iter().zip(w) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * wj;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.is_finite())
    }
}

/// `Σ u_k v_k` without conjugation.
pub fn dot_plain(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `u^* v`.
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

pub fn norm(v: &[Complex64]) -> f64 {
    norm_sqr(v).sqrt()
}

pub fn norm_inf(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

pub fn distance(u: &[Complex64], v: &[Complex64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `u + t v`.
pub fn axpy(u: &[Complex64], t: f64, v: &[Complex64]) -> CVector {
    u.iter().zip(v).map(|(a, b)| a + b * t).collect()
}

pub fn scale(v: &[Complex64], t: f64) -> CVector {
    v.iter().map(|c| c * t).collect()
}

pub fn all_finite(v: &[Complex64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Neumaier compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Stacks a complex vector as `(Re v, Im v)`.
pub fn to_real(v: &[Complex64]) -> Vec<f64> {
    v.iter().map(|c| c.re).chain(v.iter().map(|c| c.im)).collect()
}

/// Inverse of [`to_real`].
pub fn from_real(r: &[f64]) -> CVector {
    let d = r.len() / 2;
    (0..d).map(|k| Complex64::new(r[k], r[d + k])).collect()
}

/// Outcome of a power iteration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate {
    /// Rayleigh quotient at the final iterate.
    pub value: f64,
    pub iterations: usize,
}

/// Power iteration for a symmetric operator given as a matvec closure.
///
/// Runs at least `min_iters` and at most `max_iters` steps, stopping once the
/// Rayleigh quotient changes by less than `tol` relative. Returns the Rayleigh
/// quotient, which approximates the eigenvalue of largest magnitude.
pub fn power_iteration(
    start: &[f64],
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    min_iters: usize,
    max_iters: usize,
    tol: f64,
) -> PowerEstimate {
    let mut v = start.to_vec();
    let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n0 == 0.0 {
        return PowerEstimate {
            value: 0.0,
            iterations: 0,
        };
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut value = 0.0;
    for it in 1..=max_iters {
        let w = apply(&v);
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let settled = it > 1 && (rq - value).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE);
        value = rq;
        if nw == 0.0 {
            return PowerEstimate {
                value,
                iterations: it,
            };
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if settled && it >= min_iters {
            return PowerEstimate {
                value,
                iterations: it,
            };
        }
    }
    PowerEstimate {
        value,
        iterations: max_iters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn adjoint_is_consistent_with_apply() {
        let a = ComplexMatrix::from_row_major(
            2,
            2,
            vec![c(1.0, 2.0), c(0.0, -1.0), c(3.0, 0.5), c(-2.0, 1.0)],
        )
        .unwrap();
        let v = vec![c(0.3, -0.7), c(1.1, 0.2)];
        let w = vec![c(-0.4, 0.9), c(0.6, 0.6)];
        // <w, A v> = <A^H w, v>
        let lhs = inner(&w, &a.apply(&v));
        let rhs = inner(&a.adjoint_apply(&w), &v);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let s = compensated_sum([1e16, 1.0, -1e16]);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn power_iteration_finds_dominant_eigenvalue() {
        // diag(3, -1, 0.5)
        let diag = [3.0, -1.0, 0.5];
        let est = power_iteration(
            &[1.0, 1.0, 1.0],
            |v| v.iter().zip(&diag).map(|(a, b)| a * b).collect(),
            30,
            500,
            1e-14,
        );
        assert!((est.value - 3.0).abs() < 1e-10);
        assert!(est.iterations >= 30);
    }

    #[test]
    fn real_stacking_round_trips() {
        let v = vec![c(1.0, 2.0), c(-3.0, 4.0)];
        assert_eq!(to_real(&v), vec![1.0, -3.0, 2.0, 4.0]);
        assert_eq!(from_real(&to_real(&v)), v);
    }
}
