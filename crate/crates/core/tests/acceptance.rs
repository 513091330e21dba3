//! Acceptance criteria, run sequentially so that timings are not skewed by
//! other tests. Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use transfer_phase::asymptotic::{
    closed_form, predict_gen_error, AsymptoticSolver, SaddleSolution, SolverConfig, SpectralDist,
};
use transfer_phase::empirical::{
    fit_erm_with, gen_dataset, gen_teachers, overlaps, run_group_trials, source_stage, target_stage, FitOptions,
    Frozen, Penalty, StageRng, Stream, TrialSummary,
};
use transfer_phase::experiment::commands::point_seed;
use transfer_phase::model::{moments, ActivationKind, LossKind, LossVariant, Moments, TaskSpec, Transfer};
use transfer_phase::phase::{delta_star_numeric, g_threshold, rho_c, ClassCubic, DEFAULT_DELTA_POINTS};
use transfer_phase::prox::moreau;
use transfer_phase::quadrature;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn numeric_solver() -> AsymptoticSolver {
    AsymptoticSolver::new(SolverConfig {
        closed_form: false,
        ..SolverConfig::default()
    })
}

/// Ordinary least squares on `(1 − δ)p` free coordinates with the rest held
/// at the source weights: the free part is `c ξ` plus isotropic error of
/// energy `σ² (1 − δ) / (α_t + δ − 1)`.
fn ols_overlaps(m: Moments, alpha_t: f64, delta: f64, beta1: f64, beta2: f64) -> (f64, f64) {
    let (c, v) = (m.c, m.v);
    let noise = (v - c * c) + delta * ((c - beta1).powi(2) + beta2);
    let err = noise * (1.0 - delta) / (alpha_t + delta - 1.0);
    let q = (1.0 - delta) * c + delta * beta1;
    let norm2 = c * c * (1.0 - delta) + err + delta * (beta1 * beta1 + beta2);
    (q, (norm2 - q * q).sqrt())
}

fn closed_form_equivalence() -> Outcome {
    let solver = numeric_solver();
    let m = moments(ActivationKind::ReLU);
    let start = Instant::now();
    let worst = single_threaded(|| -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        for &alpha_t in &linspace(1.5, 4.0, 5) {
            let alpha_s = 2.0 * alpha_t;
            let (q_s, r_s) = ols_overlaps(m, alpha_s, 0.0, 0.0, 0.0);
            for &rho in &linspace(0.0, 1.0, 5) {
                let base = TaskSpec::relu_regression(alpha_s, alpha_t, rho, 1e-8);
                let source = solver.solve_source(&base).map_err(|e| e.to_string())?;
                worst = worst.max((source.q - q_s).abs()).max((source.r - r_s).abs());
                let (b1, b2) = (rho * q_s, (1.0 - rho * rho) * q_s * q_s + r_s * r_s);
                for &delta in &linspace(0.0, 0.9, 5) {
                    let spec = base.clone().with_transfer(Transfer::Hard { delta });
                    let t = solver.solve_hard(&spec, &source).map_err(|e| e.to_string())?;
                    let (q, r) = ols_overlaps(m, alpha_t, delta, b1, b2);
                    let err = (t.q - q).abs().max((t.r - r).abs());
                    ensure(err <= 1e-5, || {
                        format!("alpha_t={alpha_t} rho={rho} delta={delta}: ({}, {}) vs ({q}, {r})", t.q, t.r)
                    })?;
                    worst = worst.max(err);
                }
            }
        }
        Ok(worst)
    })?;
    let took = start.elapsed();
    ensure(took <= Duration::from_secs(60), || format!("took {took:.1?} single-threaded"))?;
    Ok(format!("125 points, max deviation {worst:.2e}, {took:.1?} single-threaded"))
}

fn regression_boundary() -> Outcome {
    let solver = numeric_solver();
    let start = Instant::now();
    let m = moments(ActivationKind::ReLU);
    let (at, as_) = (2.0, 4.0);
    let formula = 1.0 - (m.v - m.c * m.c) * (1.0 / (at - 1.0) - 1.0 / (as_ - 1.0)) / (2.0 * m.c * m.c);
    let analytic = rho_c(ActivationKind::ReLU, as_, at).map_err(|e| e.to_string())?.rho_c;
    ensure((analytic - formula).abs() <= 1e-12, || format!("rho_c {analytic} vs {formula}"))?;
    let mut stars = Vec::new();
    for rho in [0.6660, 0.6673] {
        let spec = TaskSpec::relu_regression(as_, at, rho, 0.0);
        let source = solver.solve_source(&spec).map_err(|e| e.to_string())?;
        let curve = delta_star_numeric(&solver, &spec, &source, DEFAULT_DELTA_POINTS).map_err(|e| e.to_string())?;
        stars.push(curve.delta_star);
    }
    ensure(stars == [0.0, 1.0], || format!("delta* at 0.6660, 0.6673 = {stars:?}"))?;
    let took = start.elapsed();
    ensure(took <= Duration::from_secs(120), || format!("took {took:.1?}"))?;
    Ok(format!("delta* 0 -> 1, rho_c = {analytic:.15}, {took:.1?}"))
}

fn classification_boundary() -> Outcome {
    let g = g_threshold(2.0, 4.0).map_err(|e| e.to_string())?;
    ensure((g - 0.85198).abs() <= 1e-4, || format!("g(2, 4) = {g}"))?;
    let mut rng = StageRng::new(3, Stream::Probe);
    let mut checked = 0;
    for _ in 0..20 {
        let at = 1.0 + 9.0 * rng.uniform();
        let as_ = at + (10.0 - at) * rng.uniform();
        let g = g_threshold(at, as_).map_err(|e| e.to_string())?;
        for k in 0..40 {
            let rho = (k as f64 + 0.5) / 40.0;
            let z4 = ClassCubic::from_params(rho, at, as_).z4;
            ensure(z4.signum() == (rho - g).signum(), || {
                format!("alpha_t={at} alpha_s={as_} rho={rho}: Z4={z4}, g={g}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("g(2, 4) = {g:.6}, {checked} sign checks"))
}

struct Comparison {
    label: &'static str,
    alpha_t: f64,
    predicted: f64,
    summary: TrialSummary,
}

impl Comparison {
    fn z(&self) -> f64 {
        let se = self.summary.gen_error.std_error.unwrap_or(f64::NAN);
        (self.summary.gen_error.mean - self.predicted) / se
    }
}

fn theory_vs_simulation(
    base: &TaskSpec,
    alpha_ratio: f64,
    alphas: &[f64],
    modes: &[(&'static str, Transfer)],
    p: usize,
    trials: usize,
) -> Result<Vec<Comparison>, String> {
    let solver = AsymptoticSolver::default();
    let mut out = Vec::new();
    for (i, &at) in alphas.iter().enumerate() {
        let mut spec = base.clone();
        spec.alpha_t = at;
        spec.alpha_s = alpha_ratio * at;
        let specs: Vec<TaskSpec> = modes.iter().map(|(_, t)| spec.clone().with_transfer(t.clone())).collect();
        let seed = point_seed(1, i, trials);
        let summaries =
            run_group_trials(&specs, p, trials, seed, &FitOptions::default()).map_err(|e| e.to_string())?;
        for ((label, _), (s, summary)) in modes.iter().zip(specs.iter().zip(summaries)) {
            let predicted = solver.predict(s).map_err(|e| format!("{label} at {at}: {e}"))?.gen_error;
            out.push(Comparison { label, alpha_t: at, predicted, summary });
        }
    }
    Ok(out)
}

fn within_three_se(rows: &[Comparison]) -> Result<String, String> {
    let worst = rows.iter().max_by(|a, b| a.z().abs().total_cmp(&b.z().abs())).unwrap();
    let bad: Vec<String> = rows
        .iter()
        .filter(|c| !(c.z().abs() <= 3.0))
        .map(|c| {
            format!(
                "{} at alpha_t={}: empirical {:.5} vs predicted {:.5} (z = {:.2})",
                c.label,
                c.alpha_t,
                c.summary.gen_error.mean,
                c.predicted,
                c.z()
            )
        })
        .collect();
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!(
        "{} comparisons, max |z| = {:.2} ({} at alpha_t={})",
        rows.len(),
        worst.z().abs(),
        worst.label,
        worst.alpha_t
    ))
}

fn regression_simulation() -> Outcome {
    let start = Instant::now();
    let base = TaskSpec::relu_regression(1.0, 1.0, 0.75, 0.2);
    let modes = [
        ("none", Transfer::NoTransfer),
        ("hard 0.5", Transfer::Hard { delta: 0.5 }),
        ("soft identity", Transfer::Soft { spectrum: SpectralDist::identity(1.0) }),
        ("full", Transfer::Hard { delta: 1.0 }),
    ];
    let rows = theory_vs_simulation(&base, 12.0, &[0.5, 1.0, 1.5, 2.0, 3.0], &modes, 1000, 50)?;
    let msg = within_three_se(&rows)?;
    Ok(format!("{msg}, {:.1?}", start.elapsed()))
}

fn classification_simulation() -> Outcome {
    let start = Instant::now();
    let base = TaskSpec::sign_classification(1.0, 1.0, 0.85, 0.3, LossKind::logistic());
    let modes = [
        ("none", Transfer::NoTransfer),
        ("hard 0.5", Transfer::Hard { delta: 0.5 }),
        ("soft identity", Transfer::Soft { spectrum: SpectralDist::identity(0.2) }),
        ("full", Transfer::Hard { delta: 1.0 }),
    ];
    let alphas = [0.5, 1.0, 2.0, 3.0, 4.0];
    let rows = theory_vs_simulation(&base, 10.0, &alphas, &modes, 500, 50)?;
    let msg = within_three_se(&rows)?;
    let find = |label: &str, at: f64| rows.iter().find(|c| c.label == label && c.alpha_t == at).unwrap();
    for (at, hard_better) in [(alphas[0], true), (alphas[4], false)] {
        let (hard, none) = (find("hard 0.5", at), find("none", at));
        for (what, h, n) in [
            ("predicted", hard.predicted, none.predicted),
            ("empirical", hard.summary.gen_error.mean, none.summary.gen_error.mean),
        ] {
            ensure((h < n) == hard_better, || {
                format!("{what} ordering at alpha_t={at}: hard {h:.5}, none {n:.5}")
            })?;
        }
    }
    Ok(format!("{msg}; hard beats none at alpha_t=0.5 and loses at 4, {:.1?}", start.elapsed()))
}

fn random_loss(rng: &mut StageRng) -> LossKind {
    match (rng.uniform() * 3.0) as usize {
        0 => LossKind::squared(),
        1 => LossKind::logistic(),
        _ => LossKind::hinge(),
    }
}

fn moreau_properties() -> Result<usize, String> {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (0usize..3, prop::bool::ANY, -4.0f64..4.0, -10.0f64..10.0, -3.0f64..1.0);
    runner
        .run(&strategy, |(which, sign, y_reg, a, log_b)| {
            let loss = [LossKind::squared(), LossKind::logistic(), LossKind::hinge()][which];
            let y = match loss.variant {
                LossVariant::Squared => y_reg,
                _ if sign => 1.0,
                _ => -1.0,
            };
            let b = 10f64.powf(log_b);
            let e = moreau(loss, y, a, b).unwrap();
            prop_assert!(e.value <= loss.eval(y, a) + 1e-12, "dominance");
            prop_assert!(moreau(loss, y, a, 1.5 * b).unwrap().value <= e.value + 1e-12, "monotone in b");
            let kinked = loss.variant == LossVariant::Hinge
                && ((y * a - 1.0).abs() < 1e-3 || (y * a - (1.0 - b)).abs() < 1e-3);
            if !kinked {
                let h = 1e-5;
                let fd = (moreau(loss, y, a + h, b).unwrap().value - moreau(loss, y, a - h, b).unwrap().value)
                    / (2.0 * h);
                prop_assert!(
                    (fd - e.d_da).abs() <= 1e-5 * e.d_da.abs().max(1.0),
                    "d/da {} vs {}",
                    e.d_da,
                    fd
                );
            }
            Ok(())
        })
        .map_err(|e| format!("moreau: {e}"))?;
    Ok(10_000)
}

fn double_factorial(k: usize) -> f64 {
    (1..=k).rev().step_by(2).map(|x| x as f64).product()
}

fn quadrature_degrees() -> Result<usize, String> {
    let mut checks = 0;
    for n in [2usize, 3, 5, 8, 13, 20] {
        let rule = quadrature::rule(n).map_err(|e| e.to_string())?;
        for k in 0..=2 * n {
            let exact = if k % 2 == 1 { 0.0 } else if k == 0 { 1.0 } else { double_factorial(k - 1) };
            let got = rule.integrate(|z| z.powi(k as i32));
            let scale = rule.integrate(|z| z.abs().powi(k as i32));
            let err = (got - exact).abs() / scale;
            if k < 2 * n {
                ensure(err <= 1e-11, || format!("hermite n={n} degree {k}: {got} vs {exact}"))?;
            } else {
                ensure(err > 1e-6, || format!("hermite n={n} unexpectedly exact at degree {k}"))?;
            }
            checks += 1;
        }
        let leg = quadrature::legendre(n).map_err(|e| e.to_string())?;
        for k in 0..2 * n {
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let got = leg.integrate(|x| x.powi(k as i32));
            ensure((got - exact).abs() <= 1e-13, || format!("legendre n={n} degree {k}: {got} vs {exact}"))?;
            checks += 1;
        }
    }
    Ok(checks)
}

fn random_fits() -> Result<usize, String> {
    let opts = FitOptions::default();
    for seed in 0..100u64 {
        let mut rng = StageRng::new(seed, Stream::Probe);
        let p = 2 + (rng.uniform() * 49.0) as usize;
        let n = 1 + (rng.uniform() * 3.0 * p as f64) as usize;
        let loss = random_loss(&mut rng);
        let phi = if loss.variant == LossVariant::Squared { ActivationKind::ReLU } else { ActivationKind::Sign };
        let teachers = gen_teachers(p, 2.0 * rng.uniform() - 1.0, seed).map_err(|e| e.to_string())?;
        let data = gen_dataset(n, &teachers.xi_t, phi, seed).map_err(|e| e.to_string())?;
        let lambda = 10f64.powf(-3.0 + 3.0 * rng.uniform());
        let reference: Vec<f64> = (0..p).map(|_| rng.gaussian()).collect();
        let diag: Vec<f64> = (0..p).map(|_| rng.uniform()).collect();
        let mask: Vec<bool> = (0..p).map(|_| rng.uniform() < 0.4).collect();
        let (pen, frozen) = match seed % 3 {
            0 => (None, None),
            1 => (Some(Penalty { lambda_diag: &diag, w_ref: &reference }), None),
            _ => (None, Some(Frozen { mask: &mask, values: &reference })),
        };
        let fit = fit_erm_with(loss, &data, lambda, pen, frozen, &opts)
            .map_err(|e| format!("seed {seed} ({} p={p} n={n}): {e}", loss.name()))?;
        ensure(fit.kkt_residual <= 1e-8, || format!("seed {seed}: KKT residual {:e}", fit.kkt_residual))?;
        let (q, r) = overlaps(&fit.w, &teachers.xi_t);
        let norm2: f64 = fit.w.iter().map(|w| w * w).sum();
        ensure((q * q + r * r - norm2).abs() <= 1e-10 * norm2.max(1.0), || {
            format!("seed {seed}: q^2 + r^2 = {} vs |w|^2 = {norm2}", q * q + r * r)
        })?;
        if frozen.is_some() {
            for j in (0..p).filter(|&j| mask[j]) {
                ensure(fit.w[j].to_bits() == reference[j].to_bits(), || {
                    format!("seed {seed}: frozen coordinate {j} changed")
                })?;
            }
        }
    }
    Ok(100)
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let moreau_cases = moreau_properties()?;
    let quad = quadrature_degrees()?;
    let fits = random_fits()?;
    let took = start.elapsed();
    ensure(took <= Duration::from_secs(60), || format!("took {took:.1?}"))?;
    Ok(format!(
        "{moreau_cases} envelope points, {quad} quadrature degrees, {fits} random fits, {took:.1?}"
    ))
}

fn random_spec(rng: &mut StageRng) -> TaskSpec {
    let alpha_t = 0.5 + 3.0 * rng.uniform();
    let alpha_s = 0.5 + 6.0 * rng.uniform();
    let rho = 2.0 * rng.uniform() - 1.0;
    let lambda = 0.05 + rng.uniform();
    match random_loss(rng) {
        l if l.variant == LossVariant::Squared => TaskSpec::relu_regression(alpha_s, alpha_t, rho, lambda),
        l => TaskSpec::sign_classification(alpha_s, alpha_t, rho, lambda, l),
    }
}

fn reduction_identities() -> Outcome {
    let solver = AsymptoticSolver::default();
    let opts = FitOptions::default();
    let mut rng = StageRng::new(77, Stream::Probe);
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let spec = random_spec(&mut rng);
        let tag = || format!("spec {k} ({}, rho={:.3})", spec.loss.name(), spec.rho);
        let with = |t: Transfer| spec.clone().with_transfer(t);
        let zero_soft = with(Transfer::Soft { spectrum: SpectralDist::PointMass { mu0: 0.0 } });
        let hard0 = with(Transfer::Hard { delta: 0.0 });
        let hard1 = with(Transfer::Hard { delta: 1.0 });

        let source = solver.solve_source(&spec).map_err(|e| format!("{}: {e}", tag()))?;
        let plain = solver.solve_no_transfer(&spec).map_err(|e| format!("{}: {e}", tag()))?;
        let gap = |a: &SaddleSolution, b: &SaddleSolution| (a.q - b.q).abs().max((a.r - b.r).abs());
        for s in [&zero_soft, &hard0] {
            let t = solver.solve_target(s, &source).map_err(|e| format!("{}: {e}", tag()))?;
            let d = gap(&t, &plain);
            ensure(d <= 1e-9, || format!("{} {}: |delta (q, r)| = {d:e}", tag(), s.transfer.mode_name()))?;
            worst = worst.max(d);
        }
        let copy = solver.solve_target(&hard1, &source).map_err(|e| format!("{}: {e}", tag()))?;
        let (b1, b2) = (spec.rho * source.q, (1.0 - spec.rho.powi(2)) * source.q.powi(2) + source.r.powi(2));
        let d = (copy.q - b1).abs().max((copy.r - b2.sqrt()).abs());
        ensure(d <= 1e-9, || format!("{} full copy: {d:e}", tag()))?;
        worst = worst.max(d);

        let p = 40;
        let src = source_stage(&spec, p, k, &opts).map_err(|e| format!("{}: {e}", tag()))?;
        let none = target_stage(&with(Transfer::NoTransfer), p, k, &src, &opts).map_err(|e| e.to_string())?;
        for s in [&zero_soft, &hard0] {
            let mut rec = target_stage(s, p, k, &src, &opts).map_err(|e| e.to_string())?;
            rec.transfer_fraction = None;
            ensure(rec == none, || format!("{} {} record differs empirically", tag(), s.transfer.mode_name()))?;
        }
        let rec = target_stage(&hard1, p, k, &src, &opts).map_err(|e| e.to_string())?;
        let (q, r) = overlaps(&src.w, &src.teachers.xi_t);
        ensure(rec.q_hat.to_bits() == q.to_bits() && rec.r_hat.to_bits() == r.to_bits(), || {
            format!("{} full copy is not the source weights", tag())
        })?;
        let e = predict_gen_error(&spec, q, r).map_err(|e| e.to_string())?;
        ensure(rec.gen_error.to_bits() == e.to_bits(), || format!("{} full copy error differs", tag()))?;
    }
    Ok(format!("10 random specs, bitwise empirically, max asymptotic gap {worst:.1e}"))
}

fn full_transfer_monotonicity() -> Outcome {
    let solver = AsymptoticSolver::default();
    let mut last = f64::INFINITY;
    let mut errors = Vec::new();
    for k in 1..=50 {
        let rho = k as f64 / 51.0;
        let spec = TaskSpec::relu_regression(4.0, 2.0, rho, 0.0).with_transfer(Transfer::Hard { delta: 1.0 });
        let e = solver.predict(&spec).map_err(|e| e.to_string())?.gen_error;
        ensure(e < last, || format!("E_test not decreasing at rho={rho}: {e} >= {last}"))?;
        last = e;
        errors.push(e);
    }
    // Independent check against the copy-limit expression.
    let m = moments(ActivationKind::ReLU);
    let (q_s, r_s) = closed_form::source_overlaps(m, 4.0).unwrap();
    let rho = 25.0 / 51.0;
    let (q, r2) = (rho * q_s, (1.0 - rho * rho) * q_s * q_s + r_s * r_s);
    let spec = TaskSpec::relu_regression(4.0, 2.0, rho, 0.0);
    let direct = predict_gen_error(&spec, q, r2.sqrt()).map_err(|e| e.to_string())?;
    ensure((direct - errors[24]).abs() <= 1e-12, || format!("{direct} vs {}", errors[24]))?;
    Ok(format!("50 points, E_test from {:.6} down to {:.6}", errors[0], errors[49]))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "closed-form equivalence", closed_form_equivalence),
        (2, "regression phase boundary", regression_boundary),
        (3, "classification phase boundary", classification_boundary),
        (4, "theory vs simulation, regression", regression_simulation),
        (5, "theory vs simulation, classification", classification_simulation),
        (6, "property suites", property_suites),
        (7, "reduction identities", reduction_identities),
        (8, "full-transfer monotonicity", full_transfer_monotonicity),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
