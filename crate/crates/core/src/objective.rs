//! The least-squares intensity loss
//! `f(z) = (1/2m) Σ (|a_j^* z + b_j|² − y_j)²`
//! with its Wirtinger gradient, Hessian quadratic form and real Hessian.
//!
//! Conventions: the gradient returned here is `∂f/∂z̄`, so for any direction
//! `v` the real directional derivative is `2 Re⟨∇f(z), v⟩`. The curvature
//! along `v` is the conjugate-pair form `(v, v̄)^* ∇²f (v, v̄)`, which equals
//! `δᵀ H δ` for the real Hessian `H` of `f(Re z, Im z)` and `δ = (Re v, Im v)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CVector};
use crate::model::ProblemInstance;

/// Largest real-Hessian order we are willing to materialize.
pub const MAX_DENSE_ORDER: usize = 4096;

fn check_pair(instance: &ProblemInstance, z: &[Complex64], v: &[Complex64]) -> Result<()> {
    instance.check_dim(z)?;
    if v.len() != z.len() {
        return Err(Error::invalid(format!(
            "direction has dimension {}, point has {}",
            v.len(),
            z.len()
        )));
    }
    Ok(())
}

pub fn loss(instance: &ProblemInstance, z: &[Complex64]) -> Result<f64> {
    instance.check_dim(z)?;
    Ok(loss_unchecked(instance, z))
}

pub(crate) fn loss_unchecked(instance: &ProblemInstance, z: &[Complex64]) -> f64 {
    let r = instance.residual_fields(z);
    let terms = r
        .iter()
        .zip(&instance.y)
        .map(|(rj, yj)| (rj.norm_sqr() - yj).powi(2));
    linalg::compensated_sum(terms) / (2.0 * instance.m() as f64)
}

pub fn wirtinger_gradient(instance: &ProblemInstance, z: &[Complex64]) -> Result<CVector> {
    instance.check_dim(z)?;
    Ok(loss_and_gradient(instance, z).1)
}

/// Loss and gradient from a single pass over the residuals.
pub(crate) fn loss_and_gradient(instance: &ProblemInstance, z: &[Complex64]) -> (f64, CVector) {
    let m = instance.m() as f64;
    let r = instance.residual_fields(z);
    let mut terms = Vec::with_capacity(r.len());
    let weighted: CVector = r
        .iter()
        .zip(&instance.y)
        .map(|(rj, yj)| {
            let e = rj.norm_sqr() - yj;
            terms.push(e * e);
            rj * (e / m)
        })
        .collect();
    let f = linalg::compensated_sum(terms) / (2.0 * m);
    (f, instance.a.adjoint_apply(&weighted))
}

/// Central difference `(f(z+hv) − f(z−hv)) / 2h`.
pub fn directional_derivative_fd(
    instance: &ProblemInstance,
    z: &[Complex64],
    v: &[Complex64],
    h: f64,
) -> Result<f64> {
    check_pair(instance, z, v)?;
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let fp = loss_unchecked(instance, &linalg::axpy(z, h, v));
    let fm = loss_unchecked(instance, &linalg::axpy(z, -h, v));
    Ok((fp - fm) / (2.0 * h))
}

/// Second difference `(f(z+hv) − 2f(z) + f(z−hv)) / h²`.
pub fn second_directional_fd(
    instance: &ProblemInstance,
    z: &[Complex64],
    v: &[Complex64],
    h: f64,
) -> Result<f64> {
    check_pair(instance, z, v)?;
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let fp = loss_unchecked(instance, &linalg::axpy(z, h, v));
    let f0 = loss_unchecked(instance, z);
    let fm = loss_unchecked(instance, &linalg::axpy(z, -h, v));
    Ok(linalg::compensated_sum([fp, -2.0 * f0, fm]) / (h * h))
}

/// Step for first-derivative differences: `ε^{1/3} (1 + ‖z‖) / ‖v‖`.
pub fn first_difference_step(z: &[Complex64], v: &[Complex64]) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + linalg::norm(z)) / direction_scale(v)
}

/// Step for second-derivative differences: `ε^{1/4} (1 + ‖z‖) / ‖v‖`.
pub fn second_difference_step(z: &[Complex64], v: &[Complex64]) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + linalg::norm(z)) / direction_scale(v)
}

fn direction_scale(v: &[Complex64]) -> f64 {
    let n = linalg::norm(v);
    if n > 0.0 {
        n
    } else {
        1.0
    }
}

/// `(v, v̄)^* ∇²f(z) (v, v̄)
///   = (2/m) Σ (2|r_j|² − y_j)|a_j^* v|² + (2/m) Σ Re[r_j² (v^* a_j)²]`
/// with `r_j = a_j^* z + b_j`. O(md).
pub fn hessian_quadratic_form(
    instance: &ProblemInstance,
    z: &[Complex64],
    v: &[Complex64],
) -> Result<f64> {
    check_pair(instance, z, v)?;
    let r = instance.residual_fields(z);
    let s = instance.a.apply(v);
    let terms = r.iter().zip(&s).zip(&instance.y).map(|((rj, sj), yj)| {
        let rr = rj.norm_sqr();
        (2.0 * rr - yj) * sj.norm_sqr() + (rj * rj * sj.conj() * sj.conj()).re
    });
    Ok(2.0 * linalg::compensated_sum(terms) / instance.m() as f64)
}

/// Real Hessian applied to `δ = (Re v, Im v)`, returned in complex form.
///
/// `H v = (2/m) Σ a_j [2 r_j Re(r̄_j s_j) + (|r_j|² − y_j) s_j]`, `s_j = a_j^* v`.
pub fn hessian_vector_product(
    instance: &ProblemInstance,
    z: &[Complex64],
    v: &[Complex64],
) -> Result<CVector> {
    check_pair(instance, z, v)?;
    let r = instance.residual_fields(z);
    Ok(hessian_vector_product_with(instance, &r, v))
}

pub(crate) fn hessian_vector_product_with(
    instance: &ProblemInstance,
    residuals: &[Complex64],
    v: &[Complex64],
) -> CVector {
    let scale = 2.0 / instance.m() as f64;
    let s = instance.a.apply(v);
    let w: CVector = residuals
        .iter()
        .zip(&s)
        .zip(&instance.y)
        .map(|((rj, sj), yj)| {
            let e = rj.norm_sqr() - yj;
            (rj * (2.0 * (rj.conj() * sj).re) + sj * e) * scale
        })
        .collect();
    instance.a.adjoint_apply(&w)
}

/// The `2d × 2d` Hessian of `f` as a function of `(Re z, Im z)`.
pub fn assemble_real_hessian(instance: &ProblemInstance, z: &[Complex64]) -> Result<DMatrix<f64>> {
    instance.check_dim(z)?;
    let d = instance.d();
    let n = 2 * d;
    if n > MAX_DENSE_ORDER {
        return Err(Error::ResourceLimit {
            order: n,
            limit: MAX_DENSE_ORDER,
        });
    }
    let r = instance.residual_fields(z);
    let inv_m = 1.0 / instance.m() as f64;
    // H = (1/m) Σ [4 u uᵀ + 2 e (α αᵀ + β βᵀ)], where in stacked real coordinates
    // u ~ r_j a_j, α ~ a_j, β ~ i a_j, and a_j is the conjugate of row j.
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut u = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for ((row, rj), yj) in instance.a.row_iter().zip(&r).zip(&instance.y) {
        let e = rj.norm_sqr() - yj;
        for (k, c) in row.iter().enumerate() {
            let aj = c.conj();
            let ua = rj * aj;
            u[k] = ua.re;
            u[d + k] = ua.im;
            alpha[k] = aj.re;
            alpha[d + k] = aj.im;
            let ia = Complex64::i() * aj;
            beta[k] = ia.re;
            beta[d + k] = ia.im;
        }
        let wu = 4.0 * inv_m;
        let we = 2.0 * e * inv_m;
        for col in 0..n {
            let (uc, ac, bc) = (u[col], alpha[col], beta[col]);
            for row_i in 0..=col {
                h[(row_i, col)] +=
                    wu * u[row_i] * uc + we * (alpha[row_i] * ac + beta[row_i] * bc);
            }
        }
    }
    for col in 0..n {
        for row_i in 0..col {
            h[(col, row_i)] = h[(row_i, col)];
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ComplexMatrix;
    use crate::model::{generate_instance, InstanceParams};
    use crate::rng::RngSpec;
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(b: Complex64, y: f64) -> ProblemInstance {
        let a = ComplexMatrix::from_row_major(1, 1, vec![c(1.0, 0.0)]).unwrap();
        ProblemInstance::new(a, vec![b], vec![c(1.0, 0.0)], vec![y], 0.0, 0).unwrap()
    }

    fn random_vec(rng: &mut impl Rng, d: usize, s: f64) -> CVector {
        (0..d)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                c(s * re, s * im)
            })
            .collect()
    }

    #[test]
    fn scalar_hand_values() {
        let inst = scalar(c(0.0, 0.0), 1.0);
        let z = [c(2.0, 0.0)];
        assert_eq!(loss(&inst, &z).unwrap(), 4.5);
        assert_eq!(wirtinger_gradient(&inst, &z).unwrap(), vec![c(6.0, 0.0)]);
        let fd = directional_derivative_fd(&inst, &z, &[c(1.0, 0.0)], 1e-5).unwrap();
        assert!((fd - 12.0).abs() < 1e-6);

        let inst = scalar(c(0.0, 1.0), 2.0);
        let z = [c(0.0, 0.0)];
        assert_eq!(loss(&inst, &z).unwrap(), 0.5);
        assert_eq!(wirtinger_gradient(&inst, &z).unwrap(), vec![c(0.0, -1.0)]);
    }

    #[test]
    fn scalar_curvature() {
        let inst = scalar(c(0.0, 0.0), 1.0);
        let z = [c(1.0, 0.0)];
        let v = [c(1.0, 0.0)];
        assert_eq!(hessian_quadratic_form(&inst, &z, &v).unwrap(), 4.0);
        let fd = second_directional_fd(&inst, &z, &v, 1e-3).unwrap();
        assert!((fd - 4.0).abs() < 1e-5);
        let h = assemble_real_hessian(&inst, &z).unwrap();
        assert!((h[(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn zero_direction_gives_zero() {
        let inst = generate_instance(&InstanceParams::new(3, 12, 5.0, 0.0, 4)).unwrap();
        let z = inst.x.iter().map(|c| c * 0.3).collect::<Vec<_>>();
        let v = vec![c(0.0, 0.0); 3];
        assert_eq!(directional_derivative_fd(&inst, &z, &v, 1e-4).unwrap(), 0.0);
        assert_eq!(second_directional_fd(&inst, &z, &v, 1e-4).unwrap(), 0.0);
        assert_eq!(hessian_quadratic_form(&inst, &z, &v).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let inst = generate_instance(&InstanceParams::new(3, 12, 5.0, 0.0, 4)).unwrap();
        let bad = vec![c(0.0, 0.0); 2];
        assert!(matches!(loss(&inst, &bad), Err(Error::InvalidArgument(_))));
        assert!(wirtinger_gradient(&inst, &bad).is_err());
        assert!(hessian_quadratic_form(&inst, &inst.x, &bad).is_err());
        assert!(assemble_real_hessian(&inst, &bad).is_err());
        assert!(directional_derivative_fd(&inst, &inst.x, &inst.x, 0.0).is_err());
    }

    #[test]
    fn dense_hessian_size_guard() {
        let d = MAX_DENSE_ORDER / 2 + 1;
        let a = ComplexMatrix::from_row_major(1, d, vec![c(1.0, 0.0); d]).unwrap();
        let inst =
            ProblemInstance::new(a, vec![c(0.0, 0.0)], vec![c(0.0, 0.0); d], vec![0.0], 0.0, 0)
                .unwrap();
        let z = vec![c(0.0, 0.0); d];
        assert!(matches!(
            assemble_real_hessian(&inst, &z),
            Err(Error::ResourceLimit { .. })
        ));
    }

    #[test]
    fn truth_is_a_zero_of_loss_and_gradient() {
        let inst = generate_instance(&InstanceParams::new(16, 128, 5.0, 0.0, 8)).unwrap();
        let scale = inst.signal_norm();
        assert!(loss(&inst, &inst.x).unwrap() <= 1e-20 * scale.powi(4));
        let g = wirtinger_gradient(&inst, &inst.x).unwrap();
        assert!(linalg::norm(&g) <= 1e-12 * scale.powi(3));
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = RngSpec::new(5).rng();
        for case in 0..20 {
            let d = 1 + case % 8;
            let inst = generate_instance(&InstanceParams::new(d, 6 * d, 5.0, 0.0, case as u64))
                .unwrap();
            let z = random_vec(&mut rng, d, 1.0);
            let v = random_vec(&mut rng, d, 1.0);
            let g = wirtinger_gradient(&inst, &z).unwrap();
            let analytic = 2.0 * linalg::inner(&g, &v).re;
            let fd = directional_derivative_fd(&inst, &z, &v, first_difference_step(&z, &v))
                .unwrap();
            assert!((fd - analytic).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn curvature_routes_agree() {
        let mut rng = RngSpec::new(6).rng();
        for case in 0..20 {
            let d = 1 + case % 8;
            let inst = generate_instance(&InstanceParams::new(d, 6 * d, 5.0, 0.0, case as u64))
                .unwrap();
            let z = random_vec(&mut rng, d, 1.0);
            let v = random_vec(&mut rng, d, 1.0);
            let q = hessian_quadratic_form(&inst, &z, &v).unwrap();
            let fd = second_directional_fd(&inst, &z, &v, second_difference_step(&z, &v)).unwrap();
            assert!((fd - q).abs() <= 1e-5 * (1.0 + q.abs()), "{fd} vs {q}");

            let h = assemble_real_hessian(&inst, &z).unwrap();
            let delta = DVector::from_vec(linalg::to_real(&v));
            let dense = (delta.transpose() * &h * &delta)[(0, 0)];
            assert!((dense - q).abs() <= 1e-10 * q.abs().max(1.0), "{dense} vs {q}");

            let hv = hessian_vector_product(&inst, &z, &v).unwrap();
            let dense_hv = &h * &delta;
            for (a, b) in linalg::to_real(&hv).iter().zip(dense_hv.iter()) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn real_and_imaginary_directions_differ() {
        let inst = generate_instance(&InstanceParams::new(4, 24, 5.0, 0.0, 2)).unwrap();
        let mut rng = RngSpec::new(3).rng();
        let z = random_vec(&mut rng, 4, 1.0);
        let v = random_vec(&mut rng, 4, 1.0);
        let iv: CVector = v.iter().map(|c| c * Complex64::i()).collect();
        let qv = hessian_quadratic_form(&inst, &z, &v).unwrap();
        let qiv = hessian_quadratic_form(&inst, &z, &iv).unwrap();
        assert!((qv - qiv).abs() > 1e-8 * qv.abs());
        for (dir, q) in [(&v, qv), (&iv, qiv)] {
            let fd = second_directional_fd(&inst, &z, dir, second_difference_step(&z, dir)).unwrap();
            assert!((fd - q).abs() <= 1e-5 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn real_hessian_is_symmetric() {
        let inst = generate_instance(&InstanceParams::new(6, 30, 5.0, 0.0, 12)).unwrap();
        let z = inst.x.iter().map(|c| c * 1.7).collect::<Vec<_>>();
        let h = assemble_real_hessian(&inst, &z).unwrap();
        let asym = (&h - h.transpose()).abs().max();
        assert!(asym <= 1e-10 * h.abs().max());
    }

    #[test]
    fn homogeneity_under_scaling() {
        let inst = generate_instance(&InstanceParams::new(5, 30, 5.0, 0.0, 13)).unwrap();
        let mut rng = RngSpec::new(14).rng();
        let z = random_vec(&mut rng, 5, 1.0);
        let v = random_vec(&mut rng, 5, 1.0);
        let f = loss(&inst, &z).unwrap();
        let q = hessian_quadratic_form(&inst, &z, &v).unwrap();
        let t = 1.9;
        let scaled = ProblemInstance::noiseless(
            inst.a.clone(),
            linalg::scale(&inst.b, t),
            linalg::scale(&inst.x, t),
            0,
        )
        .unwrap();
        let zt = linalg::scale(&z, t);
        let vt = linalg::scale(&v, t);
        let ft = loss(&scaled, &zt).unwrap();
        assert!((ft - t.powi(4) * f).abs() <= 1e-10 * ft);
        // degree 2 in (x, b, z), degree 2 in v
        let q_fixed_v = hessian_quadratic_form(&scaled, &zt, &v).unwrap();
        assert!((q_fixed_v - t * t * q).abs() <= 1e-10 * q_fixed_v.abs());
        let qt = hessian_quadratic_form(&scaled, &zt, &vt).unwrap();
        assert!((qt - t.powi(4) * q).abs() <= 1e-10 * qt.abs());
    }
}
