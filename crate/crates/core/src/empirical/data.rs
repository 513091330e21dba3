use crate::empirical::rng::{StageRng, Stream};
use crate::error::{Error, Result};
use crate::model::ActivationKind;

/// Unit-norm target and source teachers with inner product exactly `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPair {
    pub xi_t: Vec<f64>,
    pub xi_s: Vec<f64>,
}

/// Features stored row-major, `n × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub p: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub teacher: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    for x in v {
        *x /= n;
    }
}

fn unit_vector(p: usize, rng: &mut StageRng) -> Vec<f64> {
    let mut v = vec![0.0; p];
    rng.fill_gaussian(&mut v);
    normalize(&mut v);
    v
}

pub fn gen_teachers(p: usize, rho: f64, seed: u64) -> Result<TeacherPair> {
    if p < 2 {
        return Err(Error::invalid(format!("teachers need p >= 2 (got {p})")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho out of range [-1, 1] (got {rho})")));
    }
    let mut rng = StageRng::new(seed, Stream::Teachers);
    let xi_t = unit_vector(p, &mut rng);
    let mut xi_r = unit_vector(p, &mut rng);
    // Two Gram–Schmidt passes leave |ξ_tᵀξ_r| at rounding level.
    for _ in 0..2 {
        let proj = dot(&xi_t, &xi_r);
        for (r, t) in xi_r.iter_mut().zip(&xi_t) {
            *r -= proj * t;
        }
        normalize(&mut xi_r);
    }
    let perp = (1.0 - rho * rho).sqrt();
    let xi_s = xi_t.iter().zip(&xi_r).map(|(t, r)| rho * t + perp * r).collect();
    Ok(TeacherPair { xi_t, xi_s })
}

pub(crate) fn gen_dataset_with(n: usize, teacher: &[f64], phi: ActivationKind, rng: &mut StageRng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    let p = teacher.len();
    let mut features = vec![0.0; n * p];
    rng.fill_gaussian(&mut features);
    let labels = features.chunks_exact(p).map(|row| phi.apply(dot(row, teacher))).collect();
    Ok(Dataset {
        n,
        p,
        features,
        labels,
        teacher: teacher.to_vec(),
    })
}

/// Standalone generator on the target-data stream of `seed`.
pub fn gen_dataset(n: usize, teacher: &[f64], phi: ActivationKind, seed: u64) -> Result<Dataset> {
    gen_dataset_with(n, teacher, phi, &mut StageRng::new(seed, Stream::TargetData))
}

/// `n = round(α p)`.
pub fn sample_count(alpha: f64, p: usize) -> Result<usize> {
    let n = (alpha * p as f64).round();
    if n < 1.0 {
        Err(Error::invalid("empty dataset"))
    } else {
        Ok(n as usize)
    }
}

impl Dataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    /// `out = A x`
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.features.chunks_exact(self.p)) {
            *o = dot(row, x);
        }
    }

    /// `out = Aᵀ u`
    pub fn mul_t(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&ui, row) in u.iter().zip(self.features.chunks_exact(self.p)) {
            if ui != 0.0 {
                for (o, a) in out.iter_mut().zip(row) {
                    *o += ui * a;
                }
            }
        }
    }
}
