//! Experiment vocabulary: activations, losses, task specifications and the
//! Gaussian moments `c = E[z φ(z)]`, `v = E[φ(z)²]` of the teacher link.

use serde::{Deserialize, Serialize};

use crate::asymptotic::SpectralDist;
use crate::error::{Error, Result};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    #[serde(rename = "relu")]
    ReLU,
    Sign,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::ReLU => x.max(0.0),
            // sign(0) := +1
            ActivationKind::Sign => {
                if x >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Location of the single non-smooth point, if any.
    pub fn kink(self) -> Option<f64> {
        match self {
            ActivationKind::Identity => None,
            ActivationKind::ReLU | ActivationKind::Sign => Some(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::ReLU => "relu",
            ActivationKind::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Squared,
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    Regression,
    Classification,
}

/// A convex loss `ℓ(y; x)`.
///
/// Squared loss is always `½(y − x)²`; for labels in {−1, +1} this coincides
/// with the classification form `½(1 − yx)²`. Logistic and hinge are only
/// defined in classification form, `ℓ̂(yx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossKind {
    pub variant: LossVariant,
    pub form: LossForm,
}

impl LossKind {
    pub const fn squared() -> Self {
        LossKind {
            variant: LossVariant::Squared,
            form: LossForm::Regression,
        }
    }

    pub const fn logistic() -> Self {
        LossKind {
            variant: LossVariant::Logistic,
            form: LossForm::Classification,
        }
    }

    pub const fn hinge() -> Self {
        LossKind {
            variant: LossVariant::Hinge,
            form: LossForm::Classification,
        }
    }

    pub fn eval(&self, y: f64, x: f64) -> f64 {
        match self.variant {
            LossVariant::Squared => 0.5 * (y - x) * (y - x),
            LossVariant::Logistic => softplus(-y * x),
            LossVariant::Hinge => (1.0 - y * x).max(0.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            LossVariant::Squared => "squared",
            LossVariant::Logistic => "logistic",
            LossVariant::Hinge => "hinge",
        }
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// How the target task uses the source solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Transfer {
    #[serde(rename = "none")]
    NoTransfer,
    /// Freeze a Bernoulli(delta) subset of the target weights to the source values.
    Hard { delta: f64 },
    /// Quadratic penalty `½‖Σ(w − ŵ_s)‖²` with `ΣᵀΣ` distributed as `spectrum`.
    Soft { spectrum: SpectralDist },
}

impl Transfer {
    pub fn mode_name(&self) -> &'static str {
        match self {
            Transfer::NoTransfer => "none",
            Transfer::Hard { .. } => "hard",
            Transfer::Soft { .. } => "soft",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub rho: f64,
    pub lambda: f64,
    pub loss: LossKind,
    pub phi: ActivationKind,
    pub phi_hat: ActivationKind,
    pub upsilon: u8,
    pub transfer: Transfer,
}

impl TaskSpec {
    /// Nonlinear regression: ReLU teacher, identity predictor, squared loss.
    pub fn relu_regression(alpha_s: f64, alpha_t: f64, rho: f64, lambda: f64) -> Self {
        TaskSpec {
            alpha_s,
            alpha_t,
            rho,
            lambda,
            loss: LossKind::squared(),
            phi: ActivationKind::ReLU,
            phi_hat: ActivationKind::Identity,
            upsilon: 0,
            transfer: Transfer::NoTransfer,
        }
    }

    /// Binary classification: sign teacher and sign predictor.
    pub fn sign_classification(
        alpha_s: f64,
        alpha_t: f64,
        rho: f64,
        lambda: f64,
        loss: LossKind,
    ) -> Self {
        TaskSpec {
            alpha_s,
            alpha_t,
            rho,
            lambda,
            loss,
            phi: ActivationKind::Sign,
            phi_hat: ActivationKind::Sign,
            upsilon: 1,
            transfer: Transfer::NoTransfer,
        }
    }

    pub fn with_transfer(mut self, transfer: Transfer) -> Self {
        self.transfer = transfer;
        self
    }

    pub fn is_classification(&self) -> bool {
        self.upsilon == 1
    }

    /// Returns the spec unchanged if every invariant holds, otherwise the
    /// full list of violations.
    pub fn validate(self) -> Result<Self> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(violations))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.alpha_s.is_finite() && self.alpha_s > 0.0) {
            errs.push(format!("alpha_s must be positive (got {})", self.alpha_s));
        }
        if !(self.alpha_t.is_finite() && self.alpha_t > 0.0) {
            errs.push(format!("alpha_t must be positive (got {})", self.alpha_t));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            errs.push(format!("rho out of range [-1, 1] (got {})", self.rho));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            errs.push(format!("lambda must be non-negative (got {})", self.lambda));
        }
        if self.upsilon > 1 {
            errs.push(format!("upsilon must be 0 or 1 (got {})", self.upsilon));
        }
        match (self.upsilon, self.phi, self.phi_hat) {
            (0, ActivationKind::Identity | ActivationKind::ReLU, ActivationKind::Identity) => {}
            (1, ActivationKind::Sign, ActivationKind::Sign) => {}
            _ => errs.push(format!(
                "unsupported activation pairing (phi={}, phi_hat={}, upsilon={})",
                self.phi.name(),
                self.phi_hat.name(),
                self.upsilon
            )),
        }
        if self.loss.variant != LossVariant::Squared {
            if self.loss.form != LossForm::Classification {
                errs.push(format!("{} loss requires classification form", self.loss.name()));
            }
            if self.upsilon != 1 {
                errs.push(format!("{} loss requires binary labels (upsilon = 1)", self.loss.name()));
            }
            if self.lambda == 0.0 {
                errs.push(format!("lambda must be positive for {} loss", self.loss.name()));
            }
        }
        match &self.transfer {
            Transfer::NoTransfer => {}
            Transfer::Hard { delta } => {
                if !(0.0..=1.0).contains(delta) {
                    errs.push(format!("delta out of range [0, 1] (got {delta})"));
                }
            }
            Transfer::Soft { spectrum } => {
                if let Err(e) = spectrum.check() {
                    errs.push(e);
                }
            }
        }
        errs
    }
}

/// Gaussian moments of the teacher link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `E[z φ(z)]`
    pub c: f64,
    /// `E[φ(z)²]`
    pub v: f64,
}

pub fn moments(phi: ActivationKind) -> Moments {
    match phi {
        ActivationKind::Identity => Moments { c: 1.0, v: 1.0 },
        ActivationKind::ReLU => Moments { c: 0.5, v: 0.5 },
        ActivationKind::Sign => Moments {
            c: (2.0 / std::f64::consts::PI).sqrt(),
            v: 1.0,
        },
    }
}

/// Same moments by split Gauss–Legendre quadrature; used as a self-check.
pub fn moments_by_quadrature(phi: ActivationKind, order: usize) -> Result<Moments> {
    let kink = phi.kink().unwrap_or(0.0);
    let c = quadrature::expect_split(|s| s * phi.apply(s), kink, order)?;
    let v = quadrature::expect_split(|s| phi.apply(s).powi(2), kink, order)?;
    Ok(Moments { c, v })
}
