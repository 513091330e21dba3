use crate::asymptotic::SaddleSolution;
use crate::error::{Error, Result};
use crate::model::{moments, ActivationKind, TaskSpec};
use crate::quadrature;

/// Limiting training error: the optimal value minus the ridge term.
pub fn predict_train_error(spec: &TaskSpec, solution: &SaddleSolution) -> f64 {
    let (q, r) = (solution.q, solution.r);
    solution.objective - 0.5 * spec.lambda * (q * q + r * r)
}

/// Limiting generalization error for a predictor with overlaps `(q, r)`.
pub fn predict_gen_error(spec: &TaskSpec, q: f64, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !q.is_finite() || !r.is_finite() {
        return Err(Error::invalid(format!("overlaps must be finite with r >= 0 (got q={q}, r={r})")));
    }
    match (spec.phi, spec.phi_hat, spec.upsilon) {
        (_, ActivationKind::Identity, 0) => {
            let m = moments(spec.phi);
            Ok(m.v - 2.0 * m.c * q + q * q + r * r)
        }
        (ActivationKind::Sign, ActivationKind::Sign, 1) => sign_sign_error(q, r),
        _ => gen_error_quadrature(spec.phi, spec.phi_hat, spec.upsilon, q, r, quadrature::DEFAULT_ORDER),
    }
}

fn sign_sign_error(q: f64, r: f64) -> Result<f64> {
    let norm = q.hypot(r);
    if norm == 0.0 {
        return Err(Error::invalid("classification error undefined for q = r = 0"));
    }
    Ok((q / norm).clamp(-1.0, 1.0).acos() / std::f64::consts::PI)
}

/// `E[(φ(ν₁) − φ̂(ν₂))²] / 4^υ` with `ν₁ = z₁`, `ν₂ = q z₁ + r z₂` by nested
/// split quadrature; the inner integral over `z₂` is split where the
/// predictor's argument crosses its kink.
pub fn gen_error_quadrature(
    phi: ActivationKind,
    phi_hat: ActivationKind,
    upsilon: u8,
    q: f64,
    r: f64,
    order: usize,
) -> Result<f64> {
    if upsilon == 1 && q == 0.0 && r == 0.0 && phi_hat == ActivationKind::Sign {
        return Err(Error::invalid("classification error undefined for q = r = 0"));
    }
    let scale = 4f64.powi(upsilon as i32);
    let inner_kink = |z1: f64| match phi_hat.kink() {
        Some(k) if r > 0.0 => (k - q * z1) / r,
        _ => 0.0,
    };
    let mut failure = None;
    let total = quadrature::expect_split(
        |z1| {
            let y = phi.apply(z1);
            match quadrature::expect_split(|z2| (y - phi_hat.apply(q * z1 + r * z2)).powi(2), inner_kink(z1), order) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        phi.kink().unwrap_or(0.0),
        order,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(total? / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LossKind;

    fn sign_spec() -> TaskSpec {
        TaskSpec::sign_classification(4.0, 2.0, 0.5, 0.1, LossKind::logistic())
    }

    #[test]
    fn examples() {
        let s = sign_spec();
        assert!((predict_gen_error(&s, 0.7, 0.7).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(predict_gen_error(&s, 0.7, 0.0).unwrap(), 0.0);
        assert!(predict_gen_error(&s, 0.0, 0.0).is_err());
        let relu = TaskSpec::relu_regression(4.0, 2.0, 0.5, 0.1);
        assert!((predict_gen_error(&relu, 0.5, 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(predict_gen_error(&relu, 0.5, -0.1).is_err());
    }

    #[test]
    fn train_error_arithmetic() {
        let mut spec = sign_spec();
        spec.lambda = 0.3;
        let sol = SaddleSolution { q: 1.0, r: 1.0, sigma: 1.0, objective: 2.0, iterations: 0 };
        assert!((predict_train_error(&spec, &sol) - 1.7).abs() < 1e-15);
        spec.lambda = 0.0;
        assert_eq!(predict_train_error(&spec, &sol), 2.0);
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        for &(q, r) in &[(0.5, 0.25), (0.8, 0.1), (0.2, 1.3), (-0.4, 0.6), (1.0, 0.0)] {
            let relu = gen_error_quadrature(ActivationKind::ReLU, ActivationKind::Identity, 0, q, r, 60).unwrap();
            let m = moments(ActivationKind::ReLU);
            let closed = m.v - 2.0 * m.c * q + q * q + r * r;
            assert!((relu - closed).abs() < 1e-6, "relu {q} {r}: {relu} vs {closed}");
            if q.hypot(r) > 0.0 {
                let sign = gen_error_quadrature(ActivationKind::Sign, ActivationKind::Sign, 1, q, r, 60).unwrap();
                let closed = sign_sign_error(q, r).unwrap();
                assert!((sign - closed).abs() < 1e-6, "sign {q} {r}: {sign} vs {closed}");
            }
        }
    }

    #[test]
    fn classification_error_in_unit_interval() {
        for k in 0..50 {
            let q = -1.0 + 0.04 * k as f64;
            let e = predict_gen_error(&sign_spec(), q, 0.3).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
    }
}
