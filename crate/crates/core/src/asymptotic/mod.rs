//! Deterministic scalar limits of the source, hard-target and soft-target
//! problems, and the training and generalization errors they predict.

pub mod closed_form;
mod objective;
mod predict;
mod saddle;
mod spectrum;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{moments, ActivationKind, LossVariant, TaskSpec, Transfer};
use objective::{Coupling, GaussianGrid, Problem};
use saddle::{OuterOptions, R_FLOOR};

pub use predict::{gen_error_quadrature, predict_gen_error, predict_train_error};
pub use spectrum::{spectral_t, SpectralDist, SPECTRUM_NODES};

/// Optimal overlaps, inner maximizer and optimal value of one scalar problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    /// Overlap with the teacher of the task being solved.
    pub q: f64,
    /// Norm of the component orthogonal to that teacher.
    pub r: f64,
    /// Inner maximizer. Infinite for the full-copy limit of hard transfer.
    pub sigma: f64,
    pub objective: f64,
    /// Outer iterations of the best start; zero for closed forms.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub hermite_order: usize,
    /// Per half-line, in the teacher variable.
    pub legendre_order: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub multi_start: bool,
    /// Use the squared-loss, λ = 0 closed forms when they apply.
    pub closed_form: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            hermite_order: 60,
            legendre_order: 60,
            grad_tol: 1e-10,
            max_iter: 100,
            multi_start: true,
            closed_form: true,
        }
    }
}

/// Stationarity diagnostics for a returned solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Derivative of the objective in σ at the solution.
    pub inner_derivative: f64,
    /// Smallest change of the reduced objective over ±1e−4 moves of q and r.
    pub outer_gain: f64,
}

impl Certificate {
    pub const INNER_TOL: f64 = 1e-7;
    pub const OUTER_TOL: f64 = 1e-9;
    pub const STEP: f64 = 1e-4;

    pub fn holds(&self) -> bool {
        self.inner_derivative.abs() <= Self::INNER_TOL && self.outer_gain >= -Self::OUTER_TOL
    }
}

/// Source solution, target solution and predicted errors for one spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source: SaddleSolution,
    pub target: SaddleSolution,
    pub train_error: f64,
    pub gen_error: f64,
}

#[derive(Clone, Copy)]
enum Stage<'a> {
    Source,
    NoTransfer,
    Target(&'a SaddleSolution),
}

/// Reentrant solver; quadrature grids are built once per teacher link.
pub struct AsymptoticSolver {
    config: SolverConfig,
    grids: Mutex<HashMap<ActivationKind, Arc<GaussianGrid>>>,
}

impl Default for AsymptoticSolver {
    fn default() -> Self {
        Self::new(SolverConfig::default())
    }
}

pub fn default_solver() -> &'static AsymptoticSolver {
    static SOLVER: OnceLock<AsymptoticSolver> = OnceLock::new();
    SOLVER.get_or_init(AsymptoticSolver::default)
}

pub fn solve_source(spec: &TaskSpec) -> Result<SaddleSolution> {
    default_solver().solve_source(spec)
}

pub fn solve_hard(spec: &TaskSpec, source: &SaddleSolution) -> Result<SaddleSolution> {
    default_solver().solve_hard(spec, source)
}

pub fn solve_soft(spec: &TaskSpec, source: &SaddleSolution) -> Result<SaddleSolution> {
    default_solver().solve_soft(spec, source)
}

fn check(spec: &TaskSpec) -> Result<()> {
    let v = spec.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(v))
    }
}

impl AsymptoticSolver {
    pub fn new(config: SolverConfig) -> Self {
        AsymptoticSolver {
            config,
            grids: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn grid(&self, phi: ActivationKind) -> Result<Arc<GaussianGrid>> {
        let mut map = self.grids.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(g) = map.get(&phi) {
            return Ok(g.clone());
        }
        let g = Arc::new(GaussianGrid::new(phi, self.config.hermite_order, self.config.legendre_order)?);
        map.insert(phi, g.clone());
        Ok(g)
    }

    /// Source problem on `α_s` source samples.
    pub fn solve_source(&self, spec: &TaskSpec) -> Result<SaddleSolution> {
        check(spec)?;
        self.solve_stage(spec, Stage::Source)
    }

    /// Target problem without transfer: the source problem at `α_t`.
    pub fn solve_no_transfer(&self, spec: &TaskSpec) -> Result<SaddleSolution> {
        check(spec)?;
        self.solve_stage(spec, Stage::NoTransfer)
    }

    pub fn solve_hard(&self, spec: &TaskSpec, source: &SaddleSolution) -> Result<SaddleSolution> {
        check(spec)?;
        match spec.transfer {
            Transfer::Hard { .. } => self.solve_stage(spec, Stage::Target(source)),
            _ => Err(Error::invalid("solve_hard needs a hard-transfer spec")),
        }
    }

    pub fn solve_soft(&self, spec: &TaskSpec, source: &SaddleSolution) -> Result<SaddleSolution> {
        check(spec)?;
        match spec.transfer {
            Transfer::Soft { .. } => self.solve_stage(spec, Stage::Target(source)),
            _ => Err(Error::invalid("solve_soft needs a soft-transfer spec")),
        }
    }

    /// Dispatches on the spec's transfer mode.
    pub fn solve_target(&self, spec: &TaskSpec, source: &SaddleSolution) -> Result<SaddleSolution> {
        check(spec)?;
        match spec.transfer {
            Transfer::NoTransfer => self.solve_stage(spec, Stage::NoTransfer),
            _ => self.solve_stage(spec, Stage::Target(source)),
        }
    }

    pub fn predict(&self, spec: &TaskSpec) -> Result<Prediction> {
        let source = self.solve_source(spec)?;
        let target = self.solve_target(spec, &source)?;
        Ok(Prediction {
            source,
            target,
            train_error: predict_train_error(spec, &target),
            gen_error: predict_gen_error(spec, target.q, target.r)?,
        })
    }

    /// `None` marks the full-copy limit, which has no saddle.
    fn coupling(&self, spec: &TaskSpec, stage: Stage) -> Result<Option<(f64, Coupling)>> {
        let betas = |src: &SaddleSolution| closed_form::transfer_betas(spec.rho, src.q, src.r);
        Ok(match stage {
            Stage::Source => Some((spec.alpha_s, Coupling::Source)),
            Stage::NoTransfer => Some((spec.alpha_t, Coupling::Source)),
            Stage::Target(src) => match &spec.transfer {
                Transfer::NoTransfer => Some((spec.alpha_t, Coupling::Source)),
                Transfer::Hard { delta } if *delta >= 1.0 => None,
                &Transfer::Hard { delta } => {
                    let (beta1, beta2) = betas(src);
                    Some((spec.alpha_t, Coupling::Hard { delta, beta1, beta2 }))
                }
                Transfer::Soft { spectrum } => {
                    let (beta1, beta2) = betas(src);
                    let atoms = spectrum.atoms()?;
                    Some((spec.alpha_t, Coupling::Soft { atoms, beta1, beta2 }))
                }
            },
        })
    }

    // Closed-form overlaps when the squared-loss, λ = 0 shortcut applies.
    fn closed_overlaps(&self, spec: &TaskSpec, stage: Stage) -> Option<(f64, f64)> {
        if !self.config.closed_form || spec.loss.variant != LossVariant::Squared || spec.lambda != 0.0 {
            return None;
        }
        let m = moments(spec.phi);
        match stage {
            Stage::Source => closed_form::source_overlaps(m, spec.alpha_s),
            Stage::NoTransfer => closed_form::source_overlaps(m, spec.alpha_t),
            Stage::Target(src) => match spec.transfer {
                Transfer::NoTransfer => closed_form::source_overlaps(m, spec.alpha_t),
                Transfer::Hard { delta } => {
                    let (b1, b2) = closed_form::transfer_betas(spec.rho, src.q, src.r);
                    closed_form::hard_overlaps(m, spec.alpha_t, delta, b1, b2)
                }
                Transfer::Soft { .. } => None,
            },
        }
    }

    fn solve_stage(&self, spec: &TaskSpec, stage: Stage) -> Result<SaddleSolution> {
        let grid = self.grid(spec.phi)?;
        let Some((alpha, coupling)) = self.coupling(spec, stage)? else {
            let Stage::Target(src) = stage else { unreachable!() };
            return self.copy_limit(spec, src, &grid);
        };
        let problem = Problem {
            alpha,
            lambda: spec.lambda,
            loss: spec.loss,
            grid: &grid,
            coupling,
        };
        if let Some((q, r)) = self.closed_overlaps(spec, stage) {
            let pt = saddle::reduced(&problem, q, r.max(R_FLOOR), 1.0)?
                .ok_or_else(|| Error::Bracket("closed-form point has an unbounded inner sup".into()))?;
            return Ok(SaddleSolution {
                q,
                r,
                sigma: problem.sigma_of(pt.s),
                objective: pt.value,
                iterations: 0,
            });
        }

        let m = moments(spec.phi);
        let starts: &[(f64, f64)] = if self.config.multi_start {
            &[(0.1, 0.1), (m.c, m.v.sqrt()), (1.0, 1.0)]
        } else {
            &[(m.c, m.v.sqrt())]
        };
        let opts = OuterOptions {
            grad_tol: self.config.grad_tol,
            max_iter: self.config.max_iter,
        };
        let mut best: Option<saddle::Minimum> = None;
        let mut first_err = None;
        for &start in starts {
            match saddle::minimize(&problem, start, opts) {
                Ok(min) => {
                    if best.map_or(true, |b| min.point.value < b.point.value) {
                        best = Some(min);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match best {
            Some(min) => Ok(SaddleSolution {
                q: min.point.q,
                r: min.point.r,
                sigma: problem.sigma_of(min.point.s),
                objective: min.point.value,
                iterations: min.iterations,
            }),
            None => Err(first_err.expect("at least one start")),
        }
    }

    // δ = 1: the target weights are the source weights.
    fn copy_limit(&self, spec: &TaskSpec, src: &SaddleSolution, grid: &GaussianGrid) -> Result<SaddleSolution> {
        let (q, b2) = closed_form::transfer_betas(spec.rho, src.q, src.r);
        let r = b2.max(0.0).sqrt();
        let objective = spec.alpha_t * grid.expected_loss(spec.loss, q, r) + 0.5 * spec.lambda * (q * q + r * r);
        Ok(SaddleSolution {
            q,
            r,
            sigma: f64::INFINITY,
            objective,
            iterations: 0,
        })
    }

    /// Checks inner stationarity and outer optimality of a source solution.
    pub fn certify_source(&self, spec: &TaskSpec, sol: &SaddleSolution) -> Result<Certificate> {
        self.certify(spec, Stage::Source, sol)
    }

    pub fn certify_target(
        &self,
        spec: &TaskSpec,
        source: &SaddleSolution,
        sol: &SaddleSolution,
    ) -> Result<Certificate> {
        self.certify(spec, Stage::Target(source), sol)
    }

    fn certify(&self, spec: &TaskSpec, stage: Stage, sol: &SaddleSolution) -> Result<Certificate> {
        check(spec)?;
        let grid = self.grid(spec.phi)?;
        let Some((alpha, coupling)) = self.coupling(spec, stage)? else {
            return Err(Error::invalid("the full-copy limit has no saddle to certify"));
        };
        let problem = Problem {
            alpha,
            lambda: spec.lambda,
            loss: spec.loss,
            grid: &grid,
            coupling,
        };
        let s = problem.inner_of(sol.sigma);
        let inner_derivative = problem.eval(sol.q, sol.r.max(R_FLOOR), s)?.d_s;
        let base = saddle::reduced(&problem, sol.q, sol.r.max(R_FLOOR), s)?
            .ok_or_else(|| Error::Bracket("solution has an unbounded inner sup".into()))?;
        let h = Certificate::STEP;
        let mut outer_gain = f64::INFINITY;
        for (dq, dr) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let r = sol.r + dr;
            if r < 0.0 {
                continue;
            }
            let gain = match saddle::reduced(&problem, sol.q + dq, r.max(R_FLOOR), s)? {
                Some(pt) => pt.value - base.value,
                None => f64::INFINITY,
            };
            outer_gain = outer_gain.min(gain);
        }
        Ok(Certificate {
            inner_derivative,
            outer_gain,
        })
    }
}
