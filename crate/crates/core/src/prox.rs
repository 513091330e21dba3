//! Scalar proximal operators and Moreau envelopes
//! `M(a; b) = min_c ℓ(y; c) + (c − a)² / (2b)` for the supported losses.

use crate::error::{Error, Result};
use crate::model::{LossKind, LossVariant};

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeEval {
    pub value: f64,
    pub prox: f64,
    /// `∂M/∂a = (a − prox) / b`
    pub d_da: f64,
}

impl EnvelopeEval {
    /// `∂M/∂b = −(a − prox)² / (2b²)`
    pub fn d_db(&self) -> f64 {
        -0.5 * self.d_da * self.d_da
    }
}

fn check_step(a: f64, b: f64) -> Result<()> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("Moreau step must be positive and finite (got {b})")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("prox anchor"));
    }
    Ok(())
}

/// The unique minimizer of `ℓ(y; c) + (c − a)² / (2b)`.
pub fn prox(loss: LossKind, y: f64, a: f64, b: f64) -> Result<f64> {
    check_step(a, b)?;
    match loss.variant {
        LossVariant::Squared => Ok((a + b * y) / (1.0 + b)),
        LossVariant::Hinge => Ok(hinge_prox(y, a, b)),
        LossVariant::Logistic => logistic_prox(y, a, b),
    }
}

pub fn moreau(loss: LossKind, y: f64, a: f64, b: f64) -> Result<EnvelopeEval> {
    let c = prox(loss, y, a, b)?;
    let gap = c - a;
    Ok(EnvelopeEval {
        value: loss.eval(y, c) + gap * gap / (2.0 * b),
        prox: c,
        d_da: -gap / b,
    })
}

// max(0, 1 − yc): inactive, shifted along the subgradient, or pinned at yc = 1.
fn hinge_prox(y: f64, a: f64, b: f64) -> f64 {
    if y == 0.0 || y * a >= 1.0 {
        a
    } else if y * a + b * y * y <= 1.0 {
        a + b * y
    } else {
        1.0 / y
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// Root of c − a − b·y·σ(−yc) = 0, which lies between a and a + b·y.
fn logistic_prox(y: f64, a: f64, b: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok(a);
    }
    let (mut lo, mut hi) = if y > 0.0 { (a, a + b * y) } else { (a + b * y, a) };
    let residual = |c: f64| c - a - b * y * sigmoid(-y * c);
    let scale = 1.0 + a.abs() + (b * y).abs();
    let mut c = a;
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let r = residual(c);
        if r.abs() <= NEWTON_TOL * 1e-2 * scale {
            return Ok(c);
        }
        if r > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        let s = sigmoid(y * c);
        let slope = 1.0 + b * y * y * s * (1.0 - s);
        let mut next = c - r / slope;
        // Newton can cycle where the sigmoid changes curvature; bisect
        // whenever it leaves the bracket or stops halving the residual.
        if !(next > lo && next < hi) || r.abs() > 0.5 * last {
            next = 0.5 * (lo + hi);
        }
        last = r.abs();
        if (next - c).abs() <= f64::EPSILON * scale || hi - lo <= f64::EPSILON * scale {
            return Ok(next);
        }
        c = next;
    }
    let r = residual(c);
    if r.abs() <= NEWTON_TOL * scale {
        Ok(c)
    } else {
        Err(Error::NonConvergence {
            what: "logistic prox",
            iterations: NEWTON_MAX_ITER,
            residual: r.abs(),
        })
    }
}
