//! Squared loss at λ = 0: explicit overlaps and errors for the source and
//! hard-target problems.

use crate::model::Moments;

/// `β₁ = ρ q_s`, `β₂ = (1 − ρ²) q_s² + r_s²`: the target-frame overlap and
/// orthogonal energy of the source weights.
pub fn transfer_betas(rho: f64, q_s: f64, r_s: f64) -> (f64, f64) {
    (rho * q_s, (1.0 - rho * rho) * q_s * q_s + r_s * r_s)
}

/// `(q_s, r_s)` for `α_s > 1`.
pub fn source_overlaps(m: Moments, alpha_s: f64) -> Option<(f64, f64)> {
    (alpha_s > 1.0).then(|| (m.c, ((m.v - m.c * m.c) / (alpha_s - 1.0)).sqrt()))
}

/// `(q_t, r_t)` for hard transfer with `α_t + δ > 1`.
pub fn hard_overlaps(m: Moments, alpha_t: f64, delta: f64, beta1: f64, beta2: f64) -> Option<(f64, f64)> {
    let denom = alpha_t + delta - 1.0;
    if !(denom > 0.0) || !(0.0..=1.0).contains(&delta) {
        return None;
    }
    let (c, v) = (m.c, m.v);
    let q = (1.0 - delta) * c + delta * beta1;
    let inner = (delta - 1.0) * c * c + delta * beta1 * beta1 + delta * beta2 + v - 2.0 * delta * beta1 * c;
    let r2 = (1.0 - delta) / denom * inner
        + delta * beta2
        + delta * (1.0 - delta) * (c - beta1) * (c - beta1);
    Some((q, r2.max(0.0).sqrt()))
}

/// Generalization error of hard transfer with an identity predictor.
pub fn hard_test_error(m: Moments, alpha_t: f64, delta: f64, beta1: f64, beta2: f64) -> f64 {
    let (c, v) = (m.c, m.v);
    alpha_t / (alpha_t + delta - 1.0) * (delta * ((c - beta1).powi(2) + beta2) + (v - c * c))
}
