use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TaskSpec, Transfer};
use crate::phase::DEFAULT_DELTA_POINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    AlphaT,
    Rho,
    Delta,
    Lambda,
    BetaT,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::AlphaT => "alpha_t",
            Axis::Rho => "rho",
            Axis::Delta => "delta",
            Axis::Lambda => "lambda",
            Axis::BetaT => "beta_t",
        }
    }
}

/// Inclusive uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn point(x: f64) -> Self {
        Grid { start: x, stop: x, count: 1 }
    }

    pub fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("grid count must be at least 1"));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start <= self.stop) {
            return Err(Error::invalid(format!(
                "grid needs finite start <= stop (got {} .. {})",
                self.start, self.stop
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.stop } else { self.start + step * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Predict,
    Simulate,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    pub p: usize,
    pub n_trials: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// Grids for the phase diagram. Absent grids fall back to the sweep grid
/// when it runs along that axis, otherwise to the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBlock {
    #[serde(default)]
    pub rho: Option<Grid>,
    #[serde(default)]
    pub alpha_t: Option<Grid>,
    #[serde(default)]
    pub alpha_s: Option<Grid>,
    #[serde(default = "default_delta_points")]
    pub delta_points: usize,
}

fn default_delta_points() -> usize {
    DEFAULT_DELTA_POINTS
}

impl Default for PhaseBlock {
    fn default() -> Self {
        PhaseBlock {
            rho: None,
            alpha_t: None,
            alpha_s: None,
            delta_points: DEFAULT_DELTA_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: TaskSpec,
    pub sweep_axis: Axis,
    pub grid: Grid,
    pub outputs: Vec<Output>,
    #[serde(default)]
    pub sim: Option<SimBlock>,
    #[serde(default)]
    pub phase: Option<PhaseBlock>,
    /// Keeps `alpha_s = ratio · alpha_t` while sweeping `alpha_t`.
    #[serde(default)]
    pub alpha_s_ratio: Option<f64>,
    pub out_path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub rho: Option<f64>,
    pub alpha_t: Option<f64>,
    pub alpha_s: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub p: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn requires(&self, out: Output) -> Result<()> {
        if self.outputs.contains(&out) {
            Ok(())
        } else {
            Err(Error::invalid(format!("config does not request the {out:?} output").to_lowercase()))
        }
    }

    /// Applies overrides. Overriding the swept quantity collapses the grid
    /// to that single value.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let swept = self.sweep_axis;
        let pin = |axis: Axis, v: f64, grid: &mut Grid| {
            if swept == axis {
                *grid = Grid::point(v);
            }
        };
        let mut grid = self.grid;
        if let Some(v) = o.rho {
            self.base.rho = v;
            pin(Axis::Rho, v, &mut grid);
        }
        if let Some(v) = o.alpha_t {
            self.base.alpha_t = v;
            pin(Axis::AlphaT, v, &mut grid);
        }
        if let Some(v) = o.alpha_s {
            self.base.alpha_s = v;
            self.alpha_s_ratio = None;
        }
        if let Some(v) = o.lambda {
            self.base.lambda = v;
            pin(Axis::Lambda, v, &mut grid);
        }
        if let Some(v) = o.delta {
            match self.base.transfer {
                Transfer::Hard { .. } | Transfer::NoTransfer => self.base.transfer = Transfer::Hard { delta: v },
                Transfer::Soft { .. } => return Err(Error::invalid("--delta needs hard transfer, base is soft")),
            }
            pin(Axis::Delta, v, &mut grid);
        }
        self.grid = grid;
        if o.p.is_some() || o.trials.is_some() || o.seed.is_some() {
            let sim = self.sim.get_or_insert(SimBlock { p: 0, n_trials: 0, master_seed: 0 });
            if let Some(p) = o.p {
                sim.p = p;
            }
            if let Some(t) = o.trials {
                sim.n_trials = t;
            }
            if let Some(s) = o.seed {
                sim.master_seed = s;
            }
        }
        if let Some(out) = &o.out {
            self.out_path = out.clone();
        }
        if let Some(f) = o.format {
            self.format = f;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        self.grid.check()?;
        if self.outputs.is_empty() {
            return Err(Error::invalid("outputs must name at least one of predict, simulate, phase"));
        }
        match (self.sweep_axis, &self.base.transfer) {
            (Axis::Delta, Transfer::Hard { .. }) => {}
            (Axis::Delta, _) => return Err(Error::invalid("delta axis needs hard transfer in the base spec")),
            (Axis::BetaT, Transfer::Soft { spectrum }) if spectrum.beta_t().is_some() => {}
            (Axis::BetaT, _) => {
                return Err(Error::invalid("beta_t axis needs a soft transfer spectrum with a beta_t scale"))
            }
            _ => {}
        }
        if let Some(r) = self.alpha_s_ratio {
            if self.sweep_axis != Axis::AlphaT {
                return Err(Error::invalid("alpha_s_ratio only applies to an alpha_t sweep"));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid(format!("alpha_s_ratio must be positive (got {r})")));
            }
        }
        if let Some(sim) = &self.sim {
            if sim.p < 2 || sim.n_trials == 0 {
                return Err(Error::invalid("sim block needs p >= 2 and n_trials >= 1"));
            }
        }
        if let Some(ph) = &self.phase {
            for g in [&ph.rho, &ph.alpha_t, &ph.alpha_s].into_iter().flatten() {
                g.check()?;
            }
            if ph.delta_points < 2 {
                return Err(Error::invalid("phase delta_points must be at least 2"));
            }
        }
        Ok(())
    }

    /// The base spec with the swept quantity set to `x`.
    pub fn spec_at(&self, x: f64) -> Result<TaskSpec> {
        let mut spec = self.base.clone();
        match self.sweep_axis {
            Axis::AlphaT => {
                spec.alpha_t = x;
                if let Some(r) = self.alpha_s_ratio {
                    spec.alpha_s = r * x;
                }
            }
            Axis::Rho => spec.rho = x,
            Axis::Lambda => spec.lambda = x,
            Axis::Delta => spec.transfer = Transfer::Hard { delta: x },
            Axis::BetaT => {
                let Transfer::Soft { spectrum } = &spec.transfer else {
                    return Err(Error::invalid("beta_t axis needs soft transfer"));
                };
                let spectrum = spectrum
                    .with_beta_t(x)
                    .ok_or_else(|| Error::invalid("spectrum has no beta_t scale"))?;
                spec.transfer = Transfer::Soft { spectrum };
            }
        }
        spec.validate()
    }

    /// Grids used by the phase command: ρ values and `(α_t, α_s)` pairs.
    pub fn phase_grids(&self) -> (Vec<f64>, Vec<(f64, f64)>, usize) {
        let block = self.phase.clone().unwrap_or_default();
        let along = |axis: Axis, own: Option<Grid>, base: f64| match own {
            Some(g) => g.values(),
            None if self.sweep_axis == axis => self.grid.values(),
            None => vec![base],
        };
        let rho = along(Axis::Rho, block.rho, self.base.rho);
        let alpha_t = along(Axis::AlphaT, block.alpha_t, self.base.alpha_t);
        let alpha_s = match (block.alpha_s, self.alpha_s_ratio) {
            (Some(g), _) => g.values(),
            (None, Some(_)) => vec![],
            (None, None) => vec![self.base.alpha_s],
        };
        let pairs = match (block.alpha_s, self.alpha_s_ratio) {
            (None, Some(r)) => alpha_t.iter().map(|&at| (at, r * at)).collect(),
            _ => alpha_t
                .iter()
                .flat_map(|&at| alpha_s.iter().map(move |&as_| (at, as_)))
                .collect(),
        };
        (rho, pairs, block.delta_points)
    }
}
