//! Inner sup over `s` by root-finding on the monotone derivative, outer min
//! over `(q, r)` by projected Newton on the Danskin gradient, with a joint
//! Newton polish for saddles whose inner sup is attained on a plateau.

use nalgebra::{Matrix3, Vector3};

use crate::asymptotic::objective::{Eval, Problem};
use crate::error::{Error, Result};

pub(crate) const S_MIN: f64 = 1e-8;
pub(crate) const S_MAX: f64 = 1e8;

/// Lower bound kept on `r`; the source Moreau step `r/σ` must stay positive.
pub(crate) const R_FLOOR: f64 = 1e-12;

/// Gradient norm accepted when the line search can make no further progress.
pub(crate) const STALL_GRAD_TOL: f64 = 1e-8;

const INNER_MAX_ITER: usize = 200;
const INNER_XTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerSolution {
    pub s: f64,
    pub eval: Eval,
}

/// Supremum over `s ∈ [S_MIN, S_MAX]` of a concave objective. `None` means
/// the derivative is still positive at `S_MAX`: the sup is unbounded and
/// `(q, r)` is outside the effective domain.
pub(crate) fn inner_sup(p: &Problem, q: f64, r: f64, hint: f64) -> Result<Option<InnerSolution>> {
    let at = |x: f64| -> Result<(f64, Eval)> {
        let s = x.exp();
        Ok((s, p.eval(q, r, s)?))
    };
    let (x_min, x_max) = (S_MIN.ln(), S_MAX.ln());
    let x0 = hint.clamp(S_MIN, S_MAX).ln();
    let (s0, e0) = at(x0)?;
    if e0.d_s == 0.0 {
        return Ok(Some(InnerSolution { s: s0, eval: e0 }));
    }

    // Expand geometrically from the hint until the derivative changes sign.
    let mut step = 1e-3;
    let (mut xa, mut ea) = (x0, e0);
    let (xb, eb) = loop {
        let xn = if e0.d_s > 0.0 { (xa + step).min(x_max) } else { (xa - step).max(x_min) };
        let (_, en) = at(xn)?;
        if (en.d_s <= 0.0) == (e0.d_s > 0.0) {
            break (xn, en);
        }
        if xn >= x_max {
            return Ok(None);
        }
        if xn <= x_min {
            // Sup attained at the lower edge.
            return Ok(Some(InnerSolution { s: S_MIN, eval: en }));
        }
        xa = xn;
        ea = en;
        step *= 4.0;
    };
    let x = brent(|x| Ok(at(x)?.1.d_s), xa, ea.d_s, xb, eb.d_s)?;
    let (s, eval) = at(x)?;
    Ok(Some(InnerSolution { s, eval }))
}

// Brent's method on a bracketing interval [a, b] with f(a)·f(b) ≤ 0.
fn brent(mut f: impl FnMut(f64) -> Result<f64>, a: f64, fa: f64, b: f64, fb: f64) -> Result<f64> {
    let (mut a, mut fa, mut b, mut fb) = (a, fa, b, fb);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket(format!("no sign change on [{a}, {b}]")));
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..INNER_MAX_ITER {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * INNER_XTOL;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut pp, mut qq);
            if a == c {
                pp = 2.0 * m * s;
                qq = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                pp = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                qq = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if pp > 0.0 {
                qq = -qq;
            } else {
                pp = -pp;
            }
            if 2.0 * pp < (3.0 * m * qq - (tol * qq).abs()).min((e * qq).abs()) {
                e = d;
                d = pp / qq;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::NonConvergence {
        what: "inner sigma root",
        iterations: INNER_MAX_ITER,
        residual: fb.abs(),
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct OuterOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

/// A point of the reduced objective `V(q, r) = sup_s F(q, r, s)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Point {
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub value: f64,
    pub grad: [f64; 2],
}

impl Point {
    // Projected gradient: drop the r-component when r sits on its floor and
    // the gradient pushes it further down.
    fn projected(&self) -> [f64; 2] {
        let gr = if self.r <= R_FLOOR && self.grad[1] > 0.0 { 0.0 } else { self.grad[1] };
        [self.grad[0], gr]
    }

    pub fn grad_norm(&self) -> f64 {
        let g = self.projected();
        g[0].hypot(g[1])
    }
}

pub(crate) fn reduced(p: &Problem, q: f64, r: f64, hint: f64) -> Result<Option<Point>> {
    Ok(inner_sup(p, q, r, hint)?.map(|inner| Point {
        q,
        r,
        s: inner.s,
        value: inner.eval.value,
        grad: [inner.eval.d_q, inner.eval.d_r],
    }))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Minimum {
    pub point: Point,
    pub iterations: usize,
}

/// Projected Newton with a finite-difference Hessian of the Danskin gradient
/// and Armijo backtracking; falls back to steepest descent when the Hessian
/// estimate is not positive definite.
pub(crate) fn minimize(p: &Problem, start: (f64, f64), opts: OuterOptions) -> Result<Minimum> {
    let (q0, mut r0) = (start.0, start.1.max(R_FLOOR));
    let mut cur = None;
    for _ in 0..80 {
        if let Some(pt) = reduced(p, q0, r0, 1.0)? {
            cur = Some(pt);
            break;
        }
        r0 *= 2.0;
    }
    let Some(mut cur) = cur else {
        return Err(Error::Bracket("no start point with a bounded inner sup".into()));
    };

    let mut prev: Option<Point> = None;
    let mut tiny_moves = 0;
    let mut polished = false;
    for it in 0..opts.max_iter {
        let g = cur.projected();
        let gnorm = g[0].hypot(g[1]);
        if gnorm <= opts.grad_tol {
            return Ok(Minimum { point: cur, iterations: it });
        }
        // (q, r) no longer moves but the gradient does not vanish: the
        // inner sup sits on a plateau of s and V has a kink at its minimum.
        if tiny_moves >= 2 && !polished {
            polished = true;
            if let Some(pt) = polish_joint(p, &cur, prev.map(|pt| pt.s), opts) {
                return Ok(Minimum { point: pt, iterations: it });
            }
        }
        let dir = newton_direction(p, &cur, g)?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let q = cur.q + t * dir[0];
            let r = (cur.r + t * dir[1]).max(R_FLOOR);
            if let Some(next) = reduced(p, q, r, cur.s)? {
                let decrease = g[0] * (q - cur.q) + g[1] * (r - cur.r);
                let armijo = next.value <= cur.value + 1e-4 * decrease;
                let flat = next.value <= cur.value + 1e-14 * (1.0 + cur.value.abs())
                    && next.grad_norm() < gnorm;
                if armijo || flat {
                    accepted = Some(next);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                let moved = (next.q - cur.q).hypot(next.r - cur.r);
                tiny_moves = if moved <= 1e-9 * (1.0 + cur.q.hypot(cur.r)) { tiny_moves + 1 } else { 0 };
                prev = Some(cur);
                cur = next;
                if moved <= 1e-15 * (1.0 + cur.q.hypot(cur.r)) && cur.grad_norm() <= STALL_GRAD_TOL {
                    return Ok(Minimum { point: cur, iterations: it + 1 });
                }
            }
            None if gnorm <= STALL_GRAD_TOL => {
                return Ok(Minimum { point: cur, iterations: it });
            }
            None => {
                if let Some(pt) = polish_joint(p, &cur, prev.map(|pt| pt.s), opts) {
                    return Ok(Minimum { point: pt, iterations: it });
                }
                return Err(Error::NonConvergence {
                    what: "outer saddle search (line search)",
                    iterations: it,
                    residual: gnorm,
                })
            }
        }
    }
    let gnorm = cur.grad_norm();
    if gnorm <= STALL_GRAD_TOL {
        Ok(Minimum { point: cur, iterations: opts.max_iter })
    } else if let Some(pt) = polish_joint(p, &cur, prev.map(|pt| pt.s), opts) {
        Ok(Minimum { point: pt, iterations: opts.max_iter })
    } else {
        Err(Error::NonConvergence {
            what: "outer saddle search",
            iterations: opts.max_iter,
            residual: gnorm,
        })
    }
}

fn newton_direction(p: &Problem, cur: &Point, g: [f64; 2]) -> Result<[f64; 2]> {
    let r_free = g[1] != 0.0 || cur.r > R_FLOOR;
    let mut hess = [[0.0; 2]; 2];
    let coords: &[usize] = if r_free { &[0, 1] } else { &[0] };
    for &j in coords {
        let x = if j == 0 { cur.q } else { cur.r };
        let h = 1e-6 * x.abs().max(1.0);
        let (q, r) = if j == 0 { (cur.q + h, cur.r) } else { (cur.q, cur.r + h) };
        let Some(pt) = reduced(p, q, r, cur.s)? else {
            return Ok(steepest(g));
        };
        for i in 0..2 {
            hess[i][j] = (pt.grad[i] - cur.grad[i]) / h;
        }
    }
    if !r_free {
        return Ok(if hess[0][0] > 0.0 { [-g[0] / hess[0][0], 0.0] } else { steepest(g) });
    }
    let off = 0.5 * (hess[0][1] + hess[1][0]);
    let det = hess[0][0] * hess[1][1] - off * off;
    if hess[0][0] > 0.0 && det > 0.0 && det.is_finite() {
        let dq = -(hess[1][1] * g[0] - off * g[1]) / det;
        let dr = -(hess[0][0] * g[1] - off * g[0]) / det;
        let scale = 1.0 + cur.q.hypot(cur.r);
        let len = dq.hypot(dr);
        let cap = if len > 10.0 * scale { 10.0 * scale / len } else { 1.0 };
        Ok([dq * cap, dr * cap])
    } else {
        Ok(steepest(g))
    }
}

/// Damped Newton on the full stationarity system `∇F(q, r, s) = 0`, which
/// pins `s` when `F` is flat in `s` along the inner sup. Starts from the `s`
/// whose gradient is smallest on the segment between the current maximizer
/// and `other_s`. Returns `None` unless the root is found and its `s` attains
/// the inner sup.
fn polish_joint(p: &Problem, cur: &Point, other_s: Option<f64>, opts: OuterOptions) -> Option<Point> {
    let mut s = cur.s;
    if let Some(s2) = other_s.filter(|&s2| s2 != cur.s) {
        let e2 = p.eval(cur.q, cur.r, s2).ok()?;
        let d = [e2.d_q - cur.grad[0], e2.d_r - cur.grad[1]];
        let dd = d[0] * d[0] + d[1] * d[1];
        if dd > 0.0 {
            let t = -(cur.grad[0] * d[0] + cur.grad[1] * d[1]) / dd;
            s = cur.s + t * (s2 - cur.s);
        }
    }
    let residual = |e: &Eval| Vector3::new(e.d_q, e.d_r, e.d_s);
    let mut x = Vector3::new(cur.q, cur.r, s.clamp(S_MIN, S_MAX));
    let mut e = p.eval(x[0], x[1], x[2]).ok()?;
    for _ in 0..50 {
        let g = residual(&e);
        if g.norm() <= opts.grad_tol {
            break;
        }
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let h = 1e-6 * x[j].abs().max(1e-2);
            let mut y = x;
            y[j] += h;
            let ej = p.eval(y[0], y[1], y[2]).ok()?;
            jac.set_column(j, &((residual(&ej) - g) / h));
        }
        let jac = 0.5 * (jac + jac.transpose());
        let dx = jac.lu().solve(&(-g))?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let y = Vector3::new(
                x[0] + t * dx[0],
                (x[1] + t * dx[1]).max(R_FLOOR),
                (x[2] + t * dx[2]).clamp(S_MIN, S_MAX),
            );
            if let Ok(ey) = p.eval(y[0], y[1], y[2]) {
                if residual(&ey).norm() < g.norm() {
                    next = Some((y, ey));
                    break;
                }
            }
            t *= 0.5;
        }
        let (y, ey) = next?;
        x = y;
        e = ey;
    }
    if residual(&e).norm() > opts.grad_tol {
        return None;
    }
    let inner = inner_sup(p, x[0], x[1], x[2]).ok()??;
    if inner.eval.value > e.value + 1e-10 * (1.0 + e.value.abs()) {
        return None;
    }
    Some(Point {
        q: x[0],
        r: x[1],
        s: x[2],
        value: e.value,
        grad: [e.d_q, e.d_r],
    })
}

fn steepest(g: [f64; 2]) -> [f64; 2] {
    [-g[0], -g[1]]
}
