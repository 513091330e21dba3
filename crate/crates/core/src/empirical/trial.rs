use std::io::Write;

use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotic::{predict_gen_error, SpectralDist};
use crate::empirical::data::{dot, gen_dataset_with, gen_teachers, sample_count, Dataset, TeacherPair};
use crate::empirical::fit::{fit_erm_with, FitOptions, FitOutcome, Frozen, Penalty};
use crate::empirical::rng::{StageRng, Stream};
use crate::error::{Error, Result};
use crate::model::{TaskSpec, Transfer};

/// Ridge used in place of an exact zero so that every fit stays strongly convex.
pub const LAMBDA_FLOOR: f64 = 1e-8;

pub const CSV_HEADER: &str = "seed,q_hat,r_hat,train_error,gen_error,solver_iters,kkt_residual";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub train_error: f64,
    pub gen_error: f64,
    pub solver_iters: usize,
    pub kkt_residual: f64,
    /// Realized share of frozen coordinates under hard transfer.
    #[serde(skip)]
    pub transfer_fraction: Option<f64>,
}

/// Source teacher, fitted source weights and the source-task record.
#[derive(Debug, Clone)]
pub struct SourceStage {
    pub teachers: TeacherPair,
    pub w: Vec<f64>,
    pub record: TrialRecord,
}

fn stage<T>(seed: u64, stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Trial {
        seed,
        stage,
        source: Box::new(e),
    })
}

fn effective_lambda(spec: &TaskSpec) -> f64 {
    if spec.lambda == 0.0 {
        LAMBDA_FLOOR
    } else {
        spec.lambda
    }
}

/// `q̂ = ξᵀw`, `r̂ = ‖w − q̂ξ‖`.
pub fn overlaps(w: &[f64], teacher: &[f64]) -> (f64, f64) {
    let q = dot(w, teacher);
    let r = w.iter().zip(teacher).map(|(wj, tj)| (wj - q * tj).powi(2)).sum::<f64>().sqrt();
    (q, r)
}

fn data_fit(spec: &TaskSpec, data: &Dataset, w: &[f64]) -> f64 {
    let mut z = vec![0.0; data.n];
    data.mul(w, &mut z);
    z.iter().zip(&data.labels).map(|(&zi, &y)| spec.loss.eval(y, zi)).sum::<f64>() / data.p as f64
}

fn record(
    spec: &TaskSpec,
    seed: u64,
    data: &Dataset,
    fit: &FitOutcome,
    pull: f64,
    transfer_fraction: Option<f64>,
) -> Result<TrialRecord> {
    let (q_hat, r_hat) = overlaps(&fit.w, &data.teacher);
    Ok(TrialRecord {
        seed,
        q_hat,
        r_hat,
        train_error: data_fit(spec, data, &fit.w) + pull,
        gen_error: predict_gen_error(spec, q_hat, r_hat)?,
        solver_iters: fit.iterations,
        kkt_residual: fit.kkt_residual,
        transfer_fraction,
    })
}

fn check(spec: &TaskSpec, p: usize) -> Result<()> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidSpec(v));
    }
    if p < 2 {
        return Err(Error::invalid(format!("dimension must be at least 2 (got {p})")));
    }
    Ok(())
}

pub fn source_stage(spec: &TaskSpec, p: usize, seed: u64, opts: &FitOptions) -> Result<SourceStage> {
    check(spec, p)?;
    let teachers = stage(seed, "teachers", gen_teachers(p, spec.rho, seed))?;
    let n = stage(seed, "source data", sample_count(spec.alpha_s, p))?;
    let mut rng = StageRng::new(seed, Stream::SourceData);
    let data = stage(seed, "source data", gen_dataset_with(n, &teachers.xi_s, spec.phi, &mut rng))?;
    let fit = stage(
        seed,
        "source fit",
        fit_erm_with(spec.loss, &data, effective_lambda(spec), None, None, opts),
    )?;
    let record = stage(seed, "source record", record(spec, seed, &data, &fit, 0.0, None))?;
    Ok(SourceStage {
        teachers,
        w: fit.w,
        record,
    })
}

/// Source fit only; overlaps are taken against the source teacher.
pub fn run_source(spec: &TaskSpec, p: usize, seed: u64) -> Result<(Vec<f64>, TrialRecord)> {
    let s = source_stage(spec, p, seed, &FitOptions::default())?;
    Ok((s.w, s.record))
}

/// `Λ_jj = Σ_jj²` with `Σ_jj = √β_t V_j`. For the random variants the draws
/// of `V` are rescaled so that their sample mean is exactly one.
pub fn sample_penalty(spectrum: &SpectralDist, p: usize, seed: u64) -> Result<Vec<f64>> {
    spectrum.check().map_err(Error::InvalidArgument)?;
    let mut rng = StageRng::new(seed, Stream::Spectrum);
    let scaled = |beta: f64, v: Vec<f64>| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| beta * (x / mean).powi(2)).collect()
    };
    Ok(match spectrum {
        SpectralDist::PointMass { mu0 } => vec![*mu0; p],
        SpectralDist::ScaledSquaredUniform { beta_t } => scaled(*beta_t, (0..p).map(|_| rng.uniform()).collect()),
        SpectralDist::ScaledSquaredBeta { beta_t, shape_a, shape_b } => {
            let law = Beta::new(*shape_a, *shape_b).map_err(|e| Error::invalid(format!("beta law: {e}")))?;
            scaled(*beta_t, (0..p).map(|_| law.sample(rng.raw())).collect())
        }
        SpectralDist::Empirical { eigenvalues } => (0..p)
            .map(|_| {
                let k = ((rng.uniform() * eigenvalues.len() as f64) as usize).min(eigenvalues.len() - 1);
                eigenvalues[k]
            })
            .collect(),
    })
}

/// Target fit for one transfer mode, reusing a source stage.
pub fn target_stage(spec: &TaskSpec, p: usize, seed: u64, src: &SourceStage, opts: &FitOptions) -> Result<TrialRecord> {
    check(spec, p)?;
    let n = stage(seed, "target data", sample_count(spec.alpha_t, p))?;
    let mut rng = StageRng::new(seed, Stream::TargetData);
    let data = stage(seed, "target data", gen_dataset_with(n, &src.teachers.xi_t, spec.phi, &mut rng))?;
    let lambda = effective_lambda(spec);
    match &spec.transfer {
        Transfer::NoTransfer => {
            let fit = stage(seed, "target fit", fit_erm_with(spec.loss, &data, lambda, None, None, opts))?;
            stage(seed, "target record", record(spec, seed, &data, &fit, 0.0, None))
        }
        Transfer::Hard { delta } => {
            let mut mask_rng = StageRng::new(seed, Stream::Mask);
            let mask: Vec<bool> = (0..p).map(|_| mask_rng.uniform() < *delta).collect();
            let fraction = mask.iter().filter(|&&m| m).count() as f64 / p as f64;
            let frozen = Frozen { mask: &mask, values: &src.w };
            let fit = stage(
                seed,
                "target fit",
                fit_erm_with(spec.loss, &data, lambda, None, Some(frozen), opts),
            )?;
            stage(seed, "target record", record(spec, seed, &data, &fit, 0.0, Some(fraction)))
        }
        Transfer::Soft { spectrum } => {
            let diag = stage(seed, "penalty", sample_penalty(spectrum, p, seed))?;
            let pen = Penalty { lambda_diag: &diag, w_ref: &src.w };
            let fit = stage(
                seed,
                "target fit",
                fit_erm_with(spec.loss, &data, lambda, Some(pen), None, opts),
            )?;
            let pull = 0.5
                * fit.w.iter().zip(&src.w).zip(&diag).map(|((w, s), l)| l * (w - s) * (w - s)).sum::<f64>();
            stage(seed, "target record", record(spec, seed, &data, &fit, pull, None))
        }
    }
}

/// Teachers, source fit, target data and target fit for one seed.
pub fn run_transfer_trial(spec: &TaskSpec, p: usize, seed: u64) -> Result<TrialRecord> {
    let opts = FitOptions::default();
    let src = source_stage(spec, p, seed, &opts)?;
    target_stage(spec, p, seed, &src, &opts)
}

fn same_source(a: &TaskSpec, b: &TaskSpec) -> bool {
    a.alpha_s == b.alpha_s
        && a.rho == b.rho
        && a.lambda == b.lambda
        && a.loss == b.loss
        && a.phi == b.phi
        && a.phi_hat == b.phi_hat
        && a.upsilon == b.upsilon
}

/// Several target modes on one seed sharing a single source fit. Identical
/// to running each spec separately, because every stage owns its stream.
pub fn run_trial_group(specs: &[TaskSpec], p: usize, seed: u64, opts: &FitOptions) -> Result<Vec<TrialRecord>> {
    let Some(first) = specs.first() else {
        return Ok(Vec::new());
    };
    if specs.iter().any(|s| !same_source(first, s)) {
        return Err(Error::invalid("grouped specs must share the source task"));
    }
    let src = source_stage(first, p, seed, opts)?;
    specs.iter().map(|s| target_stage(s, p, seed, &src, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Absent for a single trial.
    pub std_error: Option<f64>,
}

impl Stat {
    pub fn of(xs: impl Iterator<Item = f64> + Clone) -> Stat {
        let n = xs.clone().count();
        let mean = xs.clone().sum::<f64>() / n as f64;
        let std_error = (n > 1).then(|| {
            let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Stat { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub n_trials: usize,
    pub q_hat: Stat,
    pub r_hat: Stat,
    pub train_error: Stat,
    pub gen_error: Stat,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

impl TrialSummary {
    pub fn from_records(records: Vec<TrialRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no trials to summarize"));
        }
        Ok(TrialSummary {
            n_trials: records.len(),
            q_hat: Stat::of(records.iter().map(|r| r.q_hat)),
            r_hat: Stat::of(records.iter().map(|r| r.r_hat)),
            train_error: Stat::of(records.iter().map(|r| r.train_error)),
            gen_error: Stat::of(records.iter().map(|r| r.gen_error)),
            records,
        })
    }
}

/// Seed of trial `i` under `master_seed`.
pub fn trial_seed(master_seed: u64, i: usize) -> u64 {
    master_seed.wrapping_add(i as u64)
}

/// Runs trials in parallel on the current rayon pool. The first failing
/// trial in index order is reported, carrying its seed.
pub fn run_group_trials(
    specs: &[TaskSpec],
    p: usize,
    n_trials: usize,
    master_seed: u64,
    opts: &FitOptions,
) -> Result<Vec<TrialSummary>> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be at least 1"));
    }
    let results: Vec<Result<Vec<TrialRecord>>> = (0..n_trials)
        .into_par_iter()
        .map(|i| run_trial_group(specs, p, trial_seed(master_seed, i), opts))
        .collect();
    let mut per_spec: Vec<Vec<TrialRecord>> = vec![Vec::with_capacity(n_trials); specs.len()];
    for r in results {
        for (k, rec) in r?.into_iter().enumerate() {
            per_spec[k].push(rec);
        }
    }
    per_spec.into_iter().map(TrialSummary::from_records).collect()
}

pub fn run_trials(spec: &TaskSpec, p: usize, n_trials: usize, master_seed: u64) -> Result<TrialSummary> {
    let mut out = run_group_trials(std::slice::from_ref(spec), p, n_trials, master_seed, &FitOptions::default())?;
    Ok(out.remove(0))
}

pub fn write_records_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
