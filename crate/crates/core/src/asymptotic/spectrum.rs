use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Nodes used to integrate over the base density of the scaled-squared spectra.
pub const SPECTRUM_NODES: usize = 200;

/// Limiting eigenvalue distribution of `Λ = ΣᵀΣ` for the soft penalty.
///
/// The scaled-squared variants follow the diagonal construction
/// `Σ = √β_t · V` with `V` drawn from a base law rescaled to unit mean, so
/// that `μ = β_t V²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SpectralDist {
    PointMass { mu0: f64 },
    /// `V ~ Uniform(0, 2)`.
    ScaledSquaredUniform { beta_t: f64 },
    /// `V = X (a + b) / a` with `X ~ Beta(a, b)`.
    ScaledSquaredBeta { beta_t: f64, shape_a: f64, shape_b: f64 },
    /// Equal mass on each listed eigenvalue.
    Empirical { eigenvalues: Vec<f64> },
}

/// Discrete representation `Σ w_i δ(μ_i)` used to evaluate the transforms.
#[derive(Debug, Clone)]
pub(crate) struct Atoms {
    pub mu_min: f64,
    /// `(μ − μ_min, μ, weight)`
    atoms: Vec<(f64, f64, f64)>,
}

/// `T₁`, `T₂` and their σ-derivatives at one point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TValues {
    pub t1: f64,
    pub t2: f64,
    pub dt1: f64,
    pub dt2: f64,
    /// `σ − 1/T₁(σ)`
    pub gap: f64,
}

impl Atoms {
    /// Evaluate at the shifted variable `s = σ + μ_min > 0`.
    pub fn at_shifted(&self, s: f64) -> TValues {
        let sigma = s - self.mu_min;
        let (mut t1, mut t2, mut dt1, mut dt2) = (0.0, 0.0, 0.0, 0.0);
        for &(excess, mu, w) in &self.atoms {
            let d = excess + s;
            t1 += w / d;
            dt1 -= w / (d * d);
            t2 += w * mu * sigma / d;
            dt2 += w * mu * mu / (d * d);
        }
        TValues {
            t1,
            t2,
            dt1,
            dt2,
            gap: sigma - 1.0 / t1,
        }
    }
}

impl SpectralDist {
    /// `Σ = √β_t I`.
    pub fn identity(beta_t: f64) -> Self {
        SpectralDist::PointMass { mu0: beta_t }
    }

    /// Two-point law `(1 − δ)·δ₀ + δ·δ_B` on a grid of `denominator` atoms.
    pub fn two_point(delta_numerator: usize, denominator: usize, big: f64) -> Self {
        let mut eigenvalues = vec![0.0; denominator];
        for e in eigenvalues.iter_mut().take(delta_numerator) {
            *e = big;
        }
        SpectralDist::Empirical { eigenvalues }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match self {
            SpectralDist::PointMass { mu0 } if !ok(*mu0) => {
                Err(format!("point-mass eigenvalue must be non-negative (got {mu0})"))
            }
            SpectralDist::ScaledSquaredUniform { beta_t } if !ok(*beta_t) => {
                Err(format!("beta_t must be non-negative (got {beta_t})"))
            }
            SpectralDist::ScaledSquaredBeta { beta_t, shape_a, shape_b } => {
                if !ok(*beta_t) {
                    Err(format!("beta_t must be non-negative (got {beta_t})"))
                } else if !(*shape_a > 0.0 && *shape_b > 0.0) {
                    Err(format!("beta shapes must be positive (got {shape_a}, {shape_b})"))
                } else {
                    Ok(())
                }
            }
            SpectralDist::Empirical { eigenvalues } => {
                if eigenvalues.is_empty() {
                    Err("empirical spectrum is empty".into())
                } else if eigenvalues.iter().any(|&m| !ok(m)) {
                    Err("empirical eigenvalues must be non-negative and finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn mu_min(&self) -> f64 {
        match self {
            SpectralDist::PointMass { mu0 } => *mu0,
            SpectralDist::ScaledSquaredUniform { .. } | SpectralDist::ScaledSquaredBeta { .. } => 0.0,
            SpectralDist::Empirical { eigenvalues } => {
                eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn mu_max(&self) -> f64 {
        match self {
            SpectralDist::PointMass { mu0 } => *mu0,
            SpectralDist::ScaledSquaredUniform { beta_t } => 4.0 * beta_t,
            SpectralDist::ScaledSquaredBeta { beta_t, shape_a, shape_b } => {
                let scale = (shape_a + shape_b) / shape_a;
                beta_t * scale * scale
            }
            SpectralDist::Empirical { eigenvalues } => {
                eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Scale parameter, where the variant has one.
    pub fn beta_t(&self) -> Option<f64> {
        match self {
            SpectralDist::PointMass { mu0 } => Some(*mu0),
            SpectralDist::ScaledSquaredUniform { beta_t } => Some(*beta_t),
            SpectralDist::ScaledSquaredBeta { beta_t, .. } => Some(*beta_t),
            SpectralDist::Empirical { .. } => None,
        }
    }

    pub fn with_beta_t(&self, beta: f64) -> Option<Self> {
        let mut out = self.clone();
        match &mut out {
            SpectralDist::PointMass { mu0 } => *mu0 = beta,
            SpectralDist::ScaledSquaredUniform { beta_t } => *beta_t = beta,
            SpectralDist::ScaledSquaredBeta { beta_t, .. } => *beta_t = beta,
            SpectralDist::Empirical { .. } => return None,
        }
        Some(out)
    }

    /// True when every eigenvalue is zero (the penalty vanishes).
    pub fn is_zero(&self) -> bool {
        self.mu_max() == 0.0
    }

    pub(crate) fn atoms(&self) -> Result<Atoms> {
        self.check().map_err(Error::InvalidArgument)?;
        let mu_min = self.mu_min();
        let raw: Vec<(f64, f64)> = match self {
            SpectralDist::PointMass { mu0 } => vec![(*mu0, 1.0)],
            SpectralDist::Empirical { eigenvalues } => {
                let w = 1.0 / eigenvalues.len() as f64;
                eigenvalues.iter().map(|&m| (m, w)).collect()
            }
            SpectralDist::ScaledSquaredUniform { beta_t } => {
                let gl = quadrature::legendre(SPECTRUM_NODES)?;
                // V = 1 + t on [0, 2] with density 1/2.
                gl.nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(&t, &w)| (beta_t * (1.0 + t).powi(2), 0.5 * w))
                    .collect()
            }
            SpectralDist::ScaledSquaredBeta { beta_t, shape_a, shape_b } => {
                let gl = quadrature::legendre(SPECTRUM_NODES)?;
                let scale = (shape_a + shape_b) / shape_a;
                let mut pts: Vec<(f64, f64)> = gl
                    .nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(&t, &w)| {
                        let x = 0.5 * (1.0 + t);
                        let dens = x.powf(shape_a - 1.0) * (1.0 - x).powf(shape_b - 1.0);
                        (beta_t * (scale * x).powi(2), w * dens)
                    })
                    .collect();
                let total: f64 = pts.iter().map(|p| p.1).sum();
                for p in &mut pts {
                    p.1 /= total;
                }
                pts
            }
        };
        Ok(Atoms {
            mu_min,
            atoms: raw.into_iter().map(|(mu, w)| (mu - mu_min, mu, w)).collect(),
        })
    }
}

/// `T₁(σ) = E_μ[1/(μ+σ)]` and `T₂(σ) = E_μ[μσ/(μ+σ)]`.
pub fn spectral_t(dist: &SpectralDist, sigma: f64) -> Result<(f64, f64)> {
    let mu_min = dist.mu_min();
    if !(sigma > -mu_min) {
        return Err(Error::invalid(format!(
            "sigma must exceed -mu_min = {} (got {sigma})",
            -mu_min
        )));
    }
    let t = dist.atoms()?.at_shifted(sigma + mu_min);
    Ok((t.t1, t.t2))
}
