//! Finite-size empirical risk minimization
//!
//! ```text
//! min_w (1/p) Σ ℓ(y_i; a_iᵀw) + λ/2 ‖w‖² + ½ Σ_j Λ_j (w_j − w_ref_j)²
//! ```
//!
//! optionally with a subset of coordinates frozen to given values. Frozen
//! coordinates enter only through a per-sample offset `o = A_frozen w_frozen`.
//! Squared loss is solved by conjugate gradients on the normal equations;
//! logistic and hinge by Chambolle–Pock with the per-sample prox.

use crate::empirical::data::{dot, norm, Dataset};
use crate::error::{Error, Result};
use crate::model::{LossKind, LossVariant};
use crate::prox::prox;

/// Diagonal quadratic pull towards `w_ref` with weights `lambda_diag = Λ`.
#[derive(Debug, Clone, Copy)]
pub struct Penalty<'a> {
    pub lambda_diag: &'a [f64],
    pub w_ref: &'a [f64],
}

/// `mask[j]` true freezes `w_j = values[j]`.
#[derive(Debug, Clone, Copy)]
pub struct Frozen<'a> {
    pub mask: &'a [bool],
    pub values: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub kkt_tol: f64,
    /// Relative normal-equation residual for squared loss.
    pub cg_tol: f64,
    pub max_iter: usize,
    pub power_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            kkt_tol: 1e-8,
            cg_tol: 1e-10,
            max_iter: 200_000,
            power_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub w: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Value of the full objective at `w`.
pub fn erm_objective(loss: LossKind, data: &Dataset, lambda: f64, penalty: Option<Penalty>, w: &[f64]) -> f64 {
    let mut z = vec![0.0; data.n];
    data.mul(w, &mut z);
    let fit: f64 = z.iter().zip(&data.labels).map(|(&zi, &y)| loss.eval(y, zi)).sum::<f64>() / data.p as f64;
    let ridge = 0.5 * lambda * dot(w, w);
    let pull = penalty.map_or(0.0, |pen| {
        0.5 * w
            .iter()
            .zip(pen.w_ref)
            .zip(pen.lambda_diag)
            .map(|((&wj, &rj), &lj)| lj * (wj - rj) * (wj - rj))
            .sum::<f64>()
    });
    fit + ridge + pull
}

pub fn fit_erm(
    loss: LossKind,
    data: &Dataset,
    lambda: f64,
    penalty: Option<Penalty>,
    frozen: Option<Frozen>,
) -> Result<FitOutcome> {
    fit_erm_with(loss, data, lambda, penalty, frozen, &FitOptions::default())
}

// Problem restricted to the free coordinates; frozen entries of every
// p-vector are kept at zero.
struct Reduced<'a> {
    data: &'a Dataset,
    loss: LossKind,
    free: Option<Vec<bool>>,
    offset: Option<Vec<f64>>,
    /// `λ + Λ_j` on free coordinates.
    diag: Vec<f64>,
    /// `Λ_j w_ref_j` on free coordinates.
    lin: Vec<f64>,
}

impl Reduced<'_> {
    fn mask(&self, v: &mut [f64]) {
        if let Some(free) = &self.free {
            for (x, &f) in v.iter_mut().zip(free) {
                if !f {
                    *x = 0.0;
                }
            }
        }
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        self.data.mul(x, out);
    }

    fn mul_t(&self, u: &[f64], out: &mut [f64]) {
        self.data.mul_t(u, out);
        self.mask(out);
    }

    fn off(&self, i: usize) -> f64 {
        self.offset.as_ref().map_or(0.0, |o| o[i])
    }

    fn grad_g(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = self.diag[j] * x[j] - self.lin[j];
        }
        self.mask(out);
    }

    fn strong_convexity(&self) -> f64 {
        let free = |j: usize| self.free.as_ref().map_or(true, |f| f[j]);
        (0..self.diag.len()).filter(|&j| free(j)).map(|j| self.diag[j]).fold(f64::INFINITY, f64::min)
    }

    /// Relative KKT residual of the pair `(x, u)` with `kx = A x`, `ktu = Aᵀu`.
    fn kkt(&self, x: &[f64], u: &[f64], kx: &[f64], ktu: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; x.len()];
        self.grad_g(x, &mut g);
        let stat: f64 = ktu.iter().zip(&g).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
        let r1 = stat / (1.0 + norm(&g) + norm(ktu));
        let p = self.data.p as f64;
        let mut gap = 0.0;
        for i in 0..self.data.n {
            let o = self.off(i);
            let back = prox(self.loss, self.data.labels[i], kx[i] + p * u[i] + o, 1.0)? - o;
            gap += (kx[i] - back) * (kx[i] - back);
        }
        let r2 = gap.sqrt() / (1.0 + norm(kx));
        Ok(r1.max(r2))
    }
}

pub fn fit_erm_with(
    loss: LossKind,
    data: &Dataset,
    lambda: f64,
    penalty: Option<Penalty>,
    frozen: Option<Frozen>,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    let p = data.p;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative (got {lambda})")));
    }
    if let Some(pen) = penalty {
        if pen.lambda_diag.len() != p || pen.w_ref.len() != p {
            return Err(Error::invalid("penalty vectors must have length p"));
        }
        if pen.lambda_diag.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::invalid("penalty weights must be non-negative and finite"));
        }
    }
    if let Some(fr) = frozen {
        if fr.mask.len() != p || fr.values.len() != p {
            return Err(Error::invalid("frozen mask and values must have length p"));
        }
    }
    // An all-zero penalty or an empty frozen set is the plain problem.
    let penalty = penalty.filter(|pen| pen.lambda_diag.iter().any(|&l| l != 0.0));
    let frozen = frozen.filter(|fr| fr.mask.iter().any(|&m| m));

    if let Some(fr) = frozen {
        if fr.mask.iter().all(|&m| m) {
            return Ok(FitOutcome {
                w: fr.values.to_vec(),
                iterations: 0,
                kkt_residual: 0.0,
            });
        }
    }

    let offset = frozen.map(|fr| {
        let held: Vec<f64> = fr.mask.iter().zip(fr.values).map(|(&m, &v)| if m { v } else { 0.0 }).collect();
        let mut o = vec![0.0; data.n];
        data.mul(&held, &mut o);
        o
    });
    let (diag, lin) = match penalty {
        Some(pen) => (
            pen.lambda_diag.iter().map(|&l| lambda + l).collect(),
            pen.lambda_diag.iter().zip(pen.w_ref).map(|(&l, &r)| l * r).collect(),
        ),
        None => (vec![lambda; p], vec![0.0; p]),
    };
    let mut red = Reduced {
        data,
        loss,
        free: frozen.map(|fr| fr.mask.iter().map(|&m| !m).collect()),
        offset,
        diag,
        lin,
    };
    red.mask_setup();

    let (x, iterations, kkt_residual) = match loss.variant {
        LossVariant::Squared => conjugate_gradient(&red, opts)?,
        _ => chambolle_pock(&red, opts)?,
    };
    let w = match frozen {
        Some(fr) => x
            .iter()
            .zip(fr.mask.iter().zip(fr.values))
            .map(|(&xj, (&m, &v))| if m { v } else { xj })
            .collect(),
        None => x,
    };
    Ok(FitOutcome {
        w,
        iterations,
        kkt_residual,
    })
}

impl Reduced<'_> {
    fn mask_setup(&mut self) {
        let (mut d, mut l) = (std::mem::take(&mut self.diag), std::mem::take(&mut self.lin));
        self.mask(&mut d);
        self.mask(&mut l);
        self.diag = d;
        self.lin = l;
    }
}

// Normal equations ((1/p) AᵀA + D) x = (1/p) Aᵀ(y − o) + l on free coordinates.
fn conjugate_gradient(red: &Reduced, opts: &FitOptions) -> Result<(Vec<f64>, usize, f64)> {
    let data = red.data;
    let (n, p) = (data.n, data.p);
    let inv_p = 1.0 / p as f64;
    let mut tmp_n = vec![0.0; n];
    let apply = |v: &[f64], out: &mut [f64], tmp_n: &mut [f64]| {
        red.mul(v, tmp_n);
        red.mul_t(tmp_n, out);
        for j in 0..p {
            out[j] = out[j] * inv_p + red.diag[j] * v[j];
        }
    };
    let resid: Vec<f64> = (0..n).map(|i| data.labels[i] - red.off(i)).collect();
    let mut rhs = vec![0.0; p];
    red.mul_t(&resid, &mut rhs);
    for j in 0..p {
        rhs[j] = rhs[j] * inv_p + red.lin[j];
    }
    let rhs_norm = norm(&rhs);
    let mut x = vec![0.0; p];
    let mut iterations = 0;
    let mut ax = vec![0.0; p];
    let mut true_res = rhs_norm;
    // Restart from the current iterate if the recursive residual drifts.
    for _ in 0..5 {
        apply(&x, &mut ax, &mut tmp_n);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        red.mask(&mut r);
        true_res = norm(&r);
        if true_res <= opts.cg_tol * rhs_norm {
            break;
        }
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        let mut ad = vec![0.0; p];
        while iterations < opts.max_iter {
            apply(&d, &mut ad, &mut tmp_n);
            let step = rr / dot(&d, &ad);
            for j in 0..p {
                x[j] += step * d[j];
                r[j] -= step * ad[j];
            }
            iterations += 1;
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= 0.5 * opts.cg_tol * rhs_norm {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for j in 0..p {
                d[j] = r[j] + beta * d[j];
            }
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    if !(true_res <= opts.cg_tol * rhs_norm) {
        apply(&x, &mut ax, &mut tmp_n);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        red.mask(&mut r);
        true_res = norm(&r);
        if !(true_res <= opts.cg_tol * rhs_norm) {
            return Err(Error::NonConvergence {
                what: "conjugate gradient",
                iterations,
                residual: true_res / rhs_norm.max(f64::MIN_POSITIVE),
            });
        }
    }
    // Exact dual for squared loss: u = (Ax + o − y)/p.
    let mut kx = vec![0.0; n];
    red.mul(&x, &mut kx);
    let u: Vec<f64> = (0..n).map(|i| (kx[i] + red.off(i) - data.labels[i]) * inv_p).collect();
    let mut ktu = vec![0.0; p];
    red.mul_t(&u, &mut ktu);
    let kkt = red.kkt(&x, &u, &kx, &ktu)?;
    Ok((x, iterations, kkt))
}

// Largest singular value of A restricted to the free columns.
fn operator_norm(red: &Reduced, iters: usize) -> f64 {
    let p = red.data.p;
    let mut v = vec![1.0; p];
    red.mask(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut av = vec![0.0; red.data.n];
    let mut w = vec![0.0; p];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        red.mul(&v, &mut av);
        red.mul_t(&av, &mut w);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        est = nw.sqrt();
        for (vj, wj) in v.iter_mut().zip(&w) {
            *vj = wj / nw;
        }
    }
    est
}

const RESTART_FACTOR: f64 = 0.5;

fn chambolle_pock(red: &Reduced, opts: &FitOptions) -> Result<(Vec<f64>, usize, f64)> {
    let data = red.data;
    let (n, p) = (data.n, data.p);
    let pf = p as f64;
    let gamma = red.strong_convexity();
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!(
            "{} loss needs lambda > 0 or a positive penalty on every free coordinate",
            red.loss.name()
        )));
    }
    // Power iteration underestimates the norm slightly; pad it.
    let l = 1.05 * operator_norm(red, opts.power_iters);
    if l == 0.0 {
        return Err(Error::invalid("design matrix is zero on the free coordinates"));
    }
    // Logistic ℓ'' ≤ 1/4 makes f* strongly convex with modulus 4p; hinge is
    // not smooth, so only the primal side is accelerated.
    let smooth_dual = match red.loss.variant {
        LossVariant::Logistic => Some(4.0 * pf),
        _ => None,
    };
    let (mut tau, mut sigma, fixed_theta) = match smooth_dual {
        Some(delta) => {
            let mu = 2.0 * (gamma * delta).sqrt() / l;
            (mu / (2.0 * gamma), mu / (2.0 * delta), Some(1.0 / (1.0 + mu)))
        }
        None => (1.0 / l, 1.0 / l, None),
    };

    let mut x = vec![0.0; p];
    let mut x_new = vec![0.0; p];
    let mut u = vec![0.0; n];
    let mut kx = vec![0.0; n];
    let mut kx_new = vec![0.0; n];
    let mut kxbar = vec![0.0; n];
    let mut ktu = vec![0.0; p];
    let mut residual = f64::INFINITY;
    // Primal weight: ratio of dual to primal step, re-estimated at restarts.
    let mut omega = 1.0f64;
    let mut anchor = f64::INFINITY;
    let mut x_anchor = x.clone();
    let mut u_anchor = u.clone();

    for it in 1..=opts.max_iter {
        let b = 1.0 / (pf * sigma);
        for i in 0..n {
            let v = u[i] + sigma * kxbar[i];
            let o = red.off(i);
            let z = prox(red.loss, data.labels[i], v / sigma + o, b)? - o;
            u[i] = v - sigma * z;
        }
        red.mul_t(&u, &mut ktu);
        for j in 0..p {
            x_new[j] = (x[j] - tau * ktu[j] + tau * red.lin[j]) / (1.0 + tau * red.diag[j]);
        }
        red.mask(&mut x_new);
        red.mul(&x_new, &mut kx_new);

        let theta = match fixed_theta {
            Some(t) => t,
            None => {
                let t = 1.0 / (1.0 + 2.0 * gamma * tau).sqrt();
                tau *= t;
                sigma /= t;
                t
            }
        };
        for i in 0..n {
            kxbar[i] = kx_new[i] + theta * (kx_new[i] - kx[i]);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut kx, &mut kx_new);

        residual = red.kkt(&x, &u, &kx, &ktu)?;
        if !residual.is_finite() {
            return Err(Error::NonFinite("primal-dual iterate"));
        }
        if residual <= opts.kkt_tol {
            return Ok((x, it, residual));
        }
        // Without dual smoothness the shrinking steps stall. Restarting them
        // whenever the residual halves, with the primal weight rebalanced
        // from how far each side moved, gives a linear rate on piecewise
        // linear-quadratic problems.
        if fixed_theta.is_none() && residual <= RESTART_FACTOR * anchor {
            anchor = residual;
            let dx = x.iter().zip(&x_anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let du = u.iter().zip(&u_anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dx > 0.0 && du > 0.0 {
                omega = (0.5 * (du / dx).ln() + 0.5 * omega.ln()).exp();
            }
            x_anchor.copy_from_slice(&x);
            u_anchor.copy_from_slice(&u);
            tau = 1.0 / (omega * l);
            sigma = omega / l;
            kxbar.copy_from_slice(&kx);
        } else if anchor.is_infinite() {
            anchor = residual;
        }
    }
    Err(Error::NonConvergence {
        what: "primal-dual ERM solver",
        iterations: opts.max_iter,
        residual,
    })
}
