//! Scalar saddle objectives `F(q, r, s)` for the source, hard-target and
//! soft-target problems, with analytic partial derivatives.
//!
//! Every problem has the form
//!
//! ```text
//! F = λ/2 (q² + r²) + α E[M_ℓ(Y; rH + qS; b)] + K(q, r, s)
//! ```
//!
//! where `Y = φ(S)`, the Moreau step `b` and the coupling `K` depend on the
//! problem, and `s` is the inner variable (σ, or σ + μ_min for the soft
//! problem). `F` is concave in `s` and convex in `(q, r)` after the sup.

use crate::asymptotic::spectrum::Atoms;
use crate::error::{Error, Result};
use crate::model::{ActivationKind, LossKind};
use crate::prox::moreau;
use crate::quadrature;

/// Tensor grid for `E[f(H, S)]`: Gauss–Hermite in `H`, split Gauss–Legendre
/// in `S` so that a kink of the teacher link at the origin is resolved.
#[derive(Debug, Clone)]
pub(crate) struct GaussianGrid {
    h: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl GaussianGrid {
    pub fn new(phi: ActivationKind, hermite_order: usize, legendre_order: usize) -> Result<Self> {
        let hr = quadrature::rule(hermite_order)?;
        let sr = quadrature::split_rule(phi.kink().unwrap_or(0.0), legendre_order)?;
        let n = hr.nodes.len() * sr.nodes.len();
        let mut grid = GaussianGrid {
            h: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
        };
        for (&s, &ws) in sr.nodes.iter().zip(&sr.weights) {
            let y = phi.apply(s);
            for (&h, &wh) in hr.nodes.iter().zip(&hr.weights) {
                grid.h.push(h);
                grid.s.push(s);
                grid.y.push(y);
                grid.w.push(wh * ws);
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    /// `E[ℓ(Y; qS + rH)]`
    pub fn expected_loss(&self, loss: LossKind, q: f64, r: f64) -> f64 {
        (0..self.len())
            .map(|i| self.w[i] * loss.eval(self.y[i], q * self.s[i] + r * self.h[i]))
            .sum()
    }
}

/// Expectations of the envelope and its partials at `a = rH + qS`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EnvelopeMoments {
    pub value: f64,
    /// `E[∂M/∂a · S]`
    pub d_q: f64,
    /// `E[∂M/∂a · H]`
    pub d_r: f64,
    /// `E[∂M/∂b]`
    pub d_b: f64,
}

pub(crate) fn envelope_moments(
    grid: &GaussianGrid,
    loss: LossKind,
    q: f64,
    r: f64,
    b: f64,
) -> Result<EnvelopeMoments> {
    let mut m = EnvelopeMoments::default();
    for i in 0..grid.len() {
        let (h, s, w) = (grid.h[i], grid.s[i], grid.w[i]);
        let e = moreau(loss, grid.y[i], r * h + q * s, b)?;
        m.value += w * e.value;
        m.d_q += w * e.d_da * s;
        m.d_r += w * e.d_da * h;
        m.d_b += w * e.d_db();
    }
    if !(m.value.is_finite() && m.d_q.is_finite() && m.d_r.is_finite() && m.d_b.is_finite()) {
        return Err(Error::NonFinite("envelope expectation"));
    }
    Ok(m)
}

/// How the target problem is tied to the source solution.
#[derive(Debug, Clone)]
pub(crate) enum Coupling {
    Source,
    /// `0 ≤ δ < 1`
    Hard { delta: f64, beta1: f64, beta2: f64 },
    Soft { atoms: Atoms, beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Eval {
    pub value: f64,
    pub d_q: f64,
    pub d_r: f64,
    pub d_s: f64,
}

pub(crate) struct Problem<'g> {
    pub alpha: f64,
    pub lambda: f64,
    pub loss: LossKind,
    pub grid: &'g GaussianGrid,
    pub coupling: Coupling,
}

impl Problem<'_> {
    /// Maps the inner variable back to σ.
    pub fn sigma_of(&self, s: f64) -> f64 {
        match &self.coupling {
            Coupling::Soft { atoms, .. } => s - atoms.mu_min,
            _ => s,
        }
    }

    pub fn inner_of(&self, sigma: f64) -> f64 {
        match &self.coupling {
            Coupling::Soft { atoms, .. } => sigma + atoms.mu_min,
            _ => sigma,
        }
    }

    pub fn eval(&self, q: f64, r: f64, s: f64) -> Result<Eval> {
        // (b, ∂b/∂r, ∂b/∂s, K, ∂K/∂q, ∂K/∂r, ∂K/∂s)
        let (b, db_dr, db_ds, k, dk_dq, dk_dr, dk_ds) = match &self.coupling {
            Coupling::Source => (
                r / s,
                1.0 / s,
                -r / (s * s),
                -0.5 * r * s,
                0.0,
                -0.5 * s,
                -0.5 * r,
            ),
            &Coupling::Hard { delta, beta1, beta2 } => {
                let keep = 1.0 - delta;
                let dq = q - beta1;
                let coeff = 0.5 * delta * beta2 - 0.5 * r * r + 0.5 * delta * dq * dq / keep;
                (
                    keep / s,
                    0.0,
                    -keep / (s * s),
                    s * coeff,
                    s * delta * dq / keep,
                    -s * r,
                    coeff,
                )
            }
            Coupling::Soft { atoms, beta1, beta2 } => {
                let t = atoms.at_shifted(s);
                let sigma = s - atoms.mu_min;
                let dq = q - beta1;
                (
                    t.t1,
                    0.0,
                    t.dt1,
                    -0.5 * sigma * r * r + 0.5 * beta2 * t.t2 - 0.5 * dq * dq * t.gap,
                    -dq * t.gap,
                    -sigma * r,
                    -0.5 * r * r + 0.5 * beta2 * t.dt2
                        - 0.5 * dq * dq * (1.0 + t.dt1 / (t.t1 * t.t1)),
                )
            }
        };
        let m = envelope_moments(self.grid, self.loss, q, r, b)?;
        let a = self.alpha;
        let eval = Eval {
            value: 0.5 * self.lambda * (q * q + r * r) + a * m.value + k,
            d_q: self.lambda * q + a * m.d_q + dk_dq,
            d_r: self.lambda * r + a * m.d_r + a * m.d_b * db_dr + dk_dr,
            d_s: a * m.d_b * db_ds + dk_ds,
        };
        if eval.value.is_finite() && eval.d_s.is_finite() {
            Ok(eval)
        } else {
            Err(Error::NonFinite("saddle objective"))
        }
    }
}
