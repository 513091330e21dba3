//! Deterministic Gaussian expectations.
//!
//! Gauss–Hermite rules are normalized to the standard normal measure. Rules
//! come from the Golub–Welsch eigen-decomposition of the Jacobi matrix, then
//! the nodes are Newton-polished on the orthonormal three-term recurrence and
//! the weights recomputed as Christoffel numbers. Piecewise integrands (labels
//! `φ(S)` for ReLU or sign) are integrated per half-line with Gauss–Legendre.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 60;

/// Half-lines are truncated this many standard deviations from the origin;
/// the neglected normal mass is below 1e−32.
pub const TAIL: f64 = 12.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadRule {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Hermite,
    Legendre,
}

fn cache() -> &'static Mutex<HashMap<(Family, usize), Arc<QuadRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Arc<QuadRule>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached(family: Family, order: usize) -> Result<Arc<QuadRule>> {
    if order == 0 {
        return Err(Error::invalid("quadrature order must be at least 1"));
    }
    let mut map = cache().lock().unwrap_or_else(|e| e.into_inner());
    if let Some(rule) = map.get(&(family, order)) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(match family {
        // Probabilists' Hermite: off-diagonal sqrt(k), total mass 1.
        Family::Hermite => gauss_rule(order, |k| (k as f64).sqrt(), 1.0),
        Family::Legendre => gauss_rule(
            order,
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            2.0,
        ),
    });
    map.insert((family, order), rule.clone());
    Ok(rule)
}

/// Gauss–Hermite rule for `E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn rule(order: usize) -> Result<Arc<QuadRule>> {
    cached(Family::Hermite, order)
}

/// Gauss–Legendre rule on `[-1, 1]` (weights sum to 2).
pub fn legendre(order: usize) -> Result<Arc<QuadRule>> {
    cached(Family::Legendre, order)
}

// Symmetric weight with zero recurrence diagonal and off-diagonal `beta(k)`.
fn gauss_rule(n: usize, beta: impl Fn(usize) -> f64, mu0: f64) -> QuadRule {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        jacobi[(k, k - 1)] = beta(k);
        jacobi[(k - 1, k)] = beta(k);
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let orthonormal = |x: f64| -> (f64, f64, f64) {
        // Returns (p_n(x), p_n'(x), Σ_{k<n} p_k(x)²).
        let mut p_prev = 0.0;
        let mut d_prev = 0.0;
        let mut p = 1.0 / mu0.sqrt();
        let mut d = 0.0;
        let mut sum_sq = 0.0;
        for k in 0..n {
            sum_sq += p * p;
            let b_next = beta(k + 1);
            let b_cur = if k == 0 { 0.0 } else { beta(k) };
            let p_next = (x * p - b_cur * p_prev) / b_next;
            let d_next = (p + x * d - b_cur * d_prev) / b_next;
            p_prev = p;
            d_prev = d;
            p = p_next;
            d = d_next;
        }
        (p, d, sum_sq)
    };

    let mut weights = vec![0.0; n];
    for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..3 {
            let (p, d, _) = orthonormal(*x);
            if d != 0.0 && d.is_finite() {
                *x -= p / d;
            }
        }
        *w = 1.0 / orthonormal(*x).2;
    }

    // Exact reflection symmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= mu0 / total;
    }
    QuadRule { nodes, weights, order: n }
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite("quadrature integrand"))
    }
}

/// Tensor-product estimate of `E[f(H, S)]` for independent standard normals.
pub fn expect2(mut f: impl FnMut(f64, f64) -> f64, order: usize) -> Result<f64> {
    let r = rule(order)?;
    let mut total = 0.0;
    for (&h, &wh) in r.nodes.iter().zip(&r.weights) {
        for (&s, &ws) in r.nodes.iter().zip(&r.weights) {
            total += wh * ws * finite(f(h, s))?;
        }
    }
    Ok(total)
}

/// Nodes and weights (normal density folded in) for `E[f(S)]` when `f` has a
/// single kink or jump at `kink`. Each side of the kink gets its own
/// Gauss–Legendre rule of the given order.
pub fn split_rule(kink: f64, order: usize) -> Result<QuadRule> {
    let gl = legendre(order)?;
    let k = kink.clamp(-TAIL, TAIL);
    let mut nodes = Vec::with_capacity(2 * order);
    let mut weights = Vec::with_capacity(2 * order);
    for (lo, hi) in [(-TAIL, k), (k, TAIL)] {
        if hi - lo <= 0.0 {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
            let s = mid + half * t;
            nodes.push(s);
            weights.push(w * half * INV_SQRT_2PI * (-0.5 * s * s).exp());
        }
    }
    let order = nodes.len();
    Ok(QuadRule { nodes, weights, order })
}

pub fn expect_split(mut f: impl FnMut(f64) -> f64, kink: f64, order: usize) -> Result<f64> {
    let r = split_rule(kink, order)?;
    let mut total = 0.0;
    for (&s, &w) in r.nodes.iter().zip(&r.weights) {
        total += w * finite(f(s))?;
    }
    Ok(total)
}
