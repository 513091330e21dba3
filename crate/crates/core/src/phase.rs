//! Phase boundaries of hard transfer: the critical similarity for
//! regression, the sufficient threshold and cubic for sign classification,
//! and numerical optimal-rate curves.

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotic::{closed_form, predict_gen_error, AsymptoticSolver, SaddleSolution};
use crate::error::{Error, Result};
use crate::model::{moments, ActivationKind, LossVariant, TaskSpec, Transfer};

pub const DEFAULT_DELTA_POINTS: usize = 201;

/// Distance from `ρ_c` inside which the regression rate is reported as a tie.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseBoundary {
    pub rho_c: f64,
    pub regime_below: &'static str,
    pub regime_above: &'static str,
}

impl PhaseBoundary {
    /// `ρ_c > 1`: transfer cannot help at any similarity.
    pub fn never_transfer(&self) -> bool {
        self.rho_c > 1.0
    }
}

fn check_ratios(alpha_s: f64, alpha_t: f64) -> Result<()> {
    if alpha_s > 1.0 && alpha_t > 1.0 && alpha_s.is_finite() && alpha_t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sampling ratios must exceed 1 (got alpha_s={alpha_s}, alpha_t={alpha_t})"
        )))
    }
}

pub fn rho_c(phi: ActivationKind, alpha_s: f64, alpha_t: f64) -> Result<PhaseBoundary> {
    check_ratios(alpha_s, alpha_t)?;
    let m = moments(phi);
    let rho_c = 1.0 - (m.v - m.c * m.c) / (2.0 * m.c * m.c) * (1.0 / (alpha_t - 1.0) - 1.0 / (alpha_s - 1.0));
    Ok(PhaseBoundary {
        rho_c,
        regime_below: "negative transfer",
        regime_above: "positive transfer",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalRate {
    Zero,
    One,
    /// `ρ = ρ_c`: every rate gives the same error.
    Boundary,
}

impl OptimalRate {
    /// Numeric rate with boundary ties resolved to no transfer.
    pub fn delta(self) -> f64 {
        match self {
            OptimalRate::One => 1.0,
            _ => 0.0,
        }
    }
}

fn check_closed_form_regime(spec: &TaskSpec) -> Result<()> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidSpec(v));
    }
    if spec.loss.variant != LossVariant::Squared || spec.lambda != 0.0 {
        return Err(Error::invalid("closed-form phase analysis needs squared loss with lambda = 0"));
    }
    check_ratios(spec.alpha_s, spec.alpha_t)
}

/// `Z_t = (α_t − 1){(c − β₁)² + β₂} − (v − c²)`: the sign of the slope of
/// the regression test error in δ.
pub fn z_t(spec: &TaskSpec) -> Result<f64> {
    check_closed_form_regime(spec)?;
    let m = moments(spec.phi);
    let (qs, rs) = closed_form::source_overlaps(m, spec.alpha_s).expect("alpha_s > 1");
    let (b1, b2) = closed_form::transfer_betas(spec.rho, qs, rs);
    Ok((spec.alpha_t - 1.0) * ((m.c - b1).powi(2) + b2) - (m.v - m.c * m.c))
}

/// Optimal hard-transfer rate for regression with an identity predictor.
pub fn delta_star_regression(spec: &TaskSpec) -> Result<OptimalRate> {
    check_closed_form_regime(spec)?;
    if spec.phi_hat != ActivationKind::Identity || spec.upsilon != 0 {
        return Err(Error::invalid("regression phase analysis needs an identity predictor"));
    }
    let boundary = rho_c(spec.phi, spec.alpha_s, spec.alpha_t)?;
    if (spec.rho - boundary.rho_c).abs() <= BOUNDARY_TOL {
        return Ok(OptimalRate::Boundary);
    }
    let z = z_t(spec)?;
    Ok(if z > 0.0 {
        OptimalRate::Zero
    } else if z < 0.0 {
        OptimalRate::One
    } else {
        OptimalRate::Boundary
    })
}

/// Sufficient similarity threshold for positive hard transfer in sign
/// classification.
pub fn g_threshold(alpha_t: f64, alpha_s: f64) -> Result<f64> {
    check_ratios(alpha_s, alpha_t)?;
    let k = 1.0 - 2.0 / std::f64::consts::PI;
    let num = k * alpha_t * (alpha_s - alpha_t);
    let den = (alpha_s - 1.0)
        * (4.0 / std::f64::consts::PI * (alpha_t - 1.0) * alpha_t + 2.0 * k * (alpha_t - 1.0));
    Ok(1.0 - num / den)
}

/// Cubic whose sign on `(0, 1)` is the sign of the derivative of the
/// cosine between the hard-transfer solution and the target teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassCubic {
    pub a_coef: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
    pub z4: f64,
    pub alpha_t: f64,
    pub c: f64,
}

impl ClassCubic {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        check_closed_form_regime(spec)?;
        if spec.phi != ActivationKind::Sign || spec.phi_hat != ActivationKind::Sign {
            return Err(Error::invalid("the classification cubic needs a sign teacher and predictor"));
        }
        Ok(Self::from_params(spec.rho, spec.alpha_t, spec.alpha_s))
    }

    pub fn from_params(rho: f64, alpha_t: f64, alpha_s: f64) -> Self {
        let m = moments(ActivationKind::Sign);
        let (c, v) = (m.c, m.v);
        let c2 = c * c;
        let a = rho * c - c;
        let k1 = -2.0 * c2 + 2.0 * c2 * rho;
        let k2 = alpha_t * (v - c2) / (alpha_s - 1.0) + 4.0 * c2 - 2.0 * c2 * rho - v;
        let k3 = (alpha_t - 2.0) * c2 + v;
        let at1 = alpha_t - 1.0;
        ClassCubic {
            a_coef: a,
            k1,
            k2,
            k3,
            z1: a * k1,
            z2: 2.0 * a * k2 - c * k1,
            z3: 3.0 * a * k3 + a * at1 * k2 - 2.0 * c * at1 * k1,
            z4: (2.0 * at1 * a + c) * k3 - c * at1 * k2,
            alpha_t,
            c,
        }
    }

    pub fn h(&self, delta: f64) -> f64 {
        ((self.z1 * delta + self.z2) * delta + self.z3) * delta + self.z4
    }

    /// Cosine between the hard-transfer weights and the target teacher.
    pub fn g(&self, delta: f64) -> f64 {
        let norm2 = (self.k1 * delta + self.k2) * delta + self.k3;
        (self.a_coef * delta + self.c) * (delta + self.alpha_t - 1.0).sqrt() / norm2.sqrt()
    }
}

/// Predicted test error over a uniform δ grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCurve {
    pub delta_star: f64,
    pub e_star: f64,
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
}

pub fn delta_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn delta_star_numeric(
    solver: &AsymptoticSolver,
    spec: &TaskSpec,
    source: &SaddleSolution,
    points: usize,
) -> Result<DeltaCurve> {
    if points < 2 {
        return Err(Error::invalid("delta grid needs at least two points"));
    }
    let deltas = delta_grid(points);
    let errors = deltas
        .par_iter()
        .map(|&delta| {
            let s = spec.clone().with_transfer(Transfer::Hard { delta });
            solver
                .solve_hard(&s, source)
                .and_then(|sol| predict_gen_error(&s, sol.q, sol.r))
                .map_err(|e| Error::AtDelta { delta, source: Box::new(e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    // Strict comparison keeps the smallest δ among ties.
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best] {
            best = i;
        }
    }
    Ok(DeltaCurve {
        delta_star: deltas[best],
        e_star: errors[best],
        deltas,
        errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseRow {
    pub alpha_t: f64,
    pub alpha_s: f64,
    pub rho: f64,
    pub delta_star: f64,
    pub e_test_star: f64,
    pub e_test_zero: f64,
    pub e_test_one: f64,
    /// `ρ_c` for regression or the sufficient threshold for sign
    /// classification, when both ratios exceed 1.
    pub analytic_threshold: Option<f64>,
}

pub fn phase_row(
    solver: &AsymptoticSolver,
    template: &TaskSpec,
    rho: f64,
    alpha_t: f64,
    alpha_s: f64,
    points: usize,
) -> Result<PhaseRow> {
    let mut spec = template.clone();
    spec.rho = rho;
    spec.alpha_t = alpha_t;
    spec.alpha_s = alpha_s;
    let spec = spec.with_transfer(Transfer::Hard { delta: 0.0 }).validate()?;
    let source = solver.solve_source(&spec)?;
    let curve = delta_star_numeric(solver, &spec, &source, points)?;
    let analytic_threshold = match (spec.phi, spec.phi_hat) {
        (ActivationKind::Sign, ActivationKind::Sign) => g_threshold(alpha_t, alpha_s).ok(),
        (_, ActivationKind::Identity) => rho_c(spec.phi, alpha_s, alpha_t).ok().map(|b| b.rho_c),
        _ => None,
    };
    Ok(PhaseRow {
        alpha_t,
        alpha_s,
        rho,
        delta_star: curve.delta_star,
        e_test_star: curve.e_star,
        e_test_zero: curve.errors[0],
        e_test_one: *curve.errors.last().expect("non-empty grid"),
        analytic_threshold,
    })
}

/// One row per `(ρ, (α_t, α_s))` combination, ρ varying fastest.
pub fn boundary_sweep(
    solver: &AsymptoticSolver,
    template: &TaskSpec,
    rho_grid: &[f64],
    alpha_grid: &[(f64, f64)],
    points: usize,
) -> Result<Vec<PhaseRow>> {
    alpha_grid
        .iter()
        .flat_map(|&(at, as_)| rho_grid.iter().map(move |&rho| (rho, at, as_)))
        .map(|(rho, at, as_)| phase_row(solver, template, rho, at, as_, points))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotic::default_solver;
    use crate::model::LossKind;

    const PI: f64 = std::f64::consts::PI;

    fn relu(rho: f64) -> TaskSpec {
        TaskSpec::relu_regression(4.0, 2.0, rho, 0.0)
    }

    #[test]
    fn rho_c_examples() {
        let b = rho_c(ActivationKind::ReLU, 4.0, 2.0).unwrap();
        assert!((b.rho_c - 2.0 / 3.0).abs() < 1e-15);
        assert!(!b.never_transfer());
        assert_eq!(rho_c(ActivationKind::Sign, 3.0, 3.0).unwrap().rho_c, 1.0);
        assert!(rho_c(ActivationKind::ReLU, 2.0, 4.0).unwrap().never_transfer());
        assert!(rho_c(ActivationKind::ReLU, 1.0, 2.0).is_err());
        assert!(rho_c(ActivationKind::ReLU, 4.0, 0.5).is_err());
    }

    #[test]
    fn rho_c_monotone() {
        for &at in &[1.5, 2.0, 3.0, 5.0] {
            for &as_ in &[2.0, 4.0, 8.0] {
                let base = rho_c(ActivationKind::Sign, as_, at).unwrap().rho_c;
                assert!(rho_c(ActivationKind::Sign, as_, at + 1e-3).unwrap().rho_c > base);
                assert!(rho_c(ActivationKind::Sign, as_ + 1e-3, at).unwrap().rho_c < base);
            }
        }
    }

    #[test]
    fn delta_star_regression_examples() {
        assert_eq!(delta_star_regression(&relu(0.5)).unwrap(), OptimalRate::Zero);
        assert_eq!(delta_star_regression(&relu(0.9)).unwrap(), OptimalRate::One);
        assert_eq!(delta_star_regression(&relu(2.0 / 3.0)).unwrap(), OptimalRate::Boundary);
        assert!(delta_star_regression(&TaskSpec::relu_regression(4.0, 2.0, 0.5, 0.1)).is_err());
    }

    #[test]
    fn z_t_sign_matches_rho_c() {
        let rc = rho_c(ActivationKind::ReLU, 4.0, 2.0).unwrap().rho_c;
        for k in 0..20 {
            let rho = -0.95 + 0.1 * k as f64;
            let z = z_t(&relu(rho)).unwrap();
            assert_eq!(z > 0.0, rc - rho > 0.0, "rho = {rho}");
        }
    }

    #[test]
    fn g_threshold_examples() {
        let g = g_threshold(2.0, 4.0).unwrap();
        let oracle = 1.0 - 4.0 * (1.0 - 2.0 / PI) / (3.0 * (8.0 / PI + 2.0 - 4.0 / PI));
        assert!((g - oracle).abs() < 1e-15);
        assert!((g - 0.85198).abs() < 1e-4);
        assert_eq!(g_threshold(3.0, 3.0).unwrap(), 1.0);
        assert!(g_threshold(1.0, 3.0).is_err());
        for &(at, as_) in &[(1.2, 1.5), (2.0, 9.0), (5.0, 5.5)] {
            assert!(g_threshold(at, as_).unwrap() <= 1.0);
        }
    }

    #[test]
    fn cubic_identities() {
        let cu = ClassCubic::from_params(1.0, 2.0, 4.0);
        assert_eq!((cu.a_coef, cu.k1), (0.0, 0.0));
        // Z4 is increasing in ρ and vanishes at the threshold.
        let g = g_threshold(2.0, 4.0).unwrap();
        assert!(ClassCubic::from_params(g, 2.0, 4.0).z4.abs() < 1e-12);
        assert!(ClassCubic::from_params(g + 1e-3, 2.0, 4.0).z4 > 0.0);
        assert!(ClassCubic::from_params(g - 1e-3, 2.0, 4.0).z4 < 0.0);
    }

    #[test]
    fn cubic_sign_matches_cosine_slope() {
        for &rho in &[0.3, 0.8, 0.9, 0.97] {
            let cu = ClassCubic::from_params(rho, 2.0, 4.0);
            for k in 1..20 {
                let d = k as f64 / 20.0;
                let h = 1e-6;
                let slope = cu.g(d + h) - cu.g(d - h);
                let hv = cu.h(d);
                if hv.abs() > 1e-8 && slope.abs() > 1e-12 {
                    assert_eq!(hv > 0.0, slope > 0.0, "rho={rho} delta={d}");
                }
            }
        }
    }

    #[test]
    fn cubic_cosine_matches_solver() {
        let spec = TaskSpec::sign_classification(4.0, 2.0, 0.8, 0.0, LossKind::squared());
        let src = default_solver().solve_source(&spec).unwrap();
        let cu = ClassCubic::new(&spec).unwrap();
        for &d in &[0.0, 0.3, 0.7, 1.0] {
            let s = spec.clone().with_transfer(Transfer::Hard { delta: d });
            let sol = default_solver().solve_hard(&s, &src).unwrap();
            let cos = sol.q / sol.q.hypot(sol.r);
            assert!((cos - cu.g(d)).abs() < 1e-12, "{d}: {cos} vs {}", cu.g(d));
        }
    }

    #[test]
    fn numeric_curve_matches_closed_form() {
        let spec = relu(0.5);
        let src = default_solver().solve_source(&spec).unwrap();
        let curve = delta_star_numeric(default_solver(), &spec, &src, 21).unwrap();
        let m = moments(ActivationKind::ReLU);
        let (b1, b2) = closed_form::transfer_betas(0.5, src.q, src.r);
        for (&d, &e) in curve.deltas.iter().zip(&curve.errors) {
            let exact = closed_form::hard_test_error(m, 2.0, d, b1, b2);
            assert!((e - exact).abs() < 1e-6, "{d}: {e} vs {exact}");
        }
        assert_eq!(curve.delta_star, 0.0);
        let hi = relu(0.95);
        let src = default_solver().solve_source(&hi).unwrap();
        assert_eq!(delta_star_numeric(default_solver(), &hi, &src, 21).unwrap().delta_star, 1.0);
    }

    #[test]
    fn sweep_rows_are_consistent() {
        let rows = boundary_sweep(default_solver(), &relu(0.0), &[0.6, 0.7], &[(2.0, 4.0)], 11).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].delta_star, 0.0);
        assert_eq!(rows[1].delta_star, 1.0);
        for r in rows {
            assert!(r.e_test_star <= r.e_test_zero.min(r.e_test_one));
            assert!((r.analytic_threshold.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sign_curve_decreases_at_zero_above_threshold() {
        let g = g_threshold(2.0, 4.0).unwrap();
        let spec = TaskSpec::sign_classification(4.0, 2.0, (g + 1.0) / 2.0, 0.0, LossKind::squared());
        let src = default_solver().solve_source(&spec).unwrap();
        let curve = delta_star_numeric(default_solver(), &spec, &src, 101).unwrap();
        assert!(curve.errors[1] < curve.errors[0]);
        assert!(curve.delta_star > 0.0);
    }
}
