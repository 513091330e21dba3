use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotic::{AsymptoticSolver, Prediction, SaddleSolution};
use crate::empirical::{run_group_trials, FitOptions, Stat, TrialSummary};
use crate::error::{Error, Result};
use crate::experiment::config::{Axis, Format, Output, SweepConfig};
use crate::experiment::table::{Cell, Row, Table};
use crate::model::{ActivationKind, TaskSpec, Transfer};
use crate::phase::phase_row;

/// A finished table and how many of its rows carry an error.
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub failed_rows: usize,
}

impl Report {
    fn new(table: Table) -> Self {
        let failed_rows = match table.column("error") {
            Some(k) => table.rows.iter().filter(|r| r[k] != Cell::Empty).count(),
            None => 0,
        };
        Report { table, failed_rows }
    }
}

/// The compared methods at one grid point. Hard transfer brings the
/// no-transfer and full-copy baselines along.
pub fn curves(spec: &TaskSpec) -> Vec<(&'static str, TaskSpec)> {
    match spec.transfer {
        Transfer::Hard { .. } => vec![
            ("hard", spec.clone()),
            ("none", spec.clone().with_transfer(Transfer::NoTransfer)),
            ("full", spec.clone().with_transfer(Transfer::Hard { delta: 1.0 })),
        ],
        _ => vec![(spec.transfer.mode_name(), spec.clone())],
    }
}

fn head(row: &mut Row, index: usize, curve: &str, axis: Axis, x: f64) {
    row.put("index", Cell::Int(index as u64)).text("curve", curve).text("axis", axis.name()).num("x", x);
}

fn prediction_cells(row: &mut Row, pred: Option<&Prediction>) {
    let get = |f: fn(&Prediction) -> f64| Cell::opt(pred.map(f));
    row.put("q_s", get(|p| p.source.q))
        .put("r_s", get(|p| p.source.r))
        .put("q_t", get(|p| p.target.q))
        .put("r_t", get(|p| p.target.r))
        .put("sigma", get(|p| p.target.sigma))
        .put("e_train_pred", get(|p| p.train_error))
        .put("e_test_pred", get(|p| p.gen_error));
}

fn error_cell(row: &mut Row, err: Option<&Error>) {
    row.put("error", err.map_or(Cell::Empty, |e| Cell::Text(e.to_string())));
}

fn predict_curves(solver: &AsymptoticSolver, spec: &TaskSpec) -> Vec<Result<Prediction>> {
    let source = solver.solve_source(spec);
    curves(spec)
        .into_iter()
        .map(|(_, s)| {
            // Errors are not cloneable; re-solving reproduces the same one.
            let source: SaddleSolution = match &source {
                Ok(src) => *src,
                Err(_) => solver.solve_source(spec)?,
            };
            let target = solver.solve_target(&s, &source)?;
            Ok(Prediction {
                source,
                target,
                train_error: crate::asymptotic::predict_train_error(&s, &target),
                gen_error: crate::asymptotic::predict_gen_error(&s, target.q, target.r)?,
            })
        })
        .collect()
}

fn labels(cfg: &SweepConfig) -> Vec<&'static str> {
    curves(&cfg.base).into_iter().map(|(l, _)| l).collect()
}

/// Predicted overlaps and errors per grid point and curve.
pub fn cmd_predict(cfg: &SweepConfig, solver: &AsymptoticSolver) -> Result<Report> {
    cfg.check()?;
    cfg.requires(Output::Predict)?;
    let xs = cfg.grid.values();
    let blocks: Vec<Vec<Row>> = xs
        .par_iter()
        .enumerate()
        .map(|(i, &x)| match cfg.spec_at(x) {
            Ok(spec) => curves(&spec)
                .into_iter()
                .zip(predict_curves(solver, &spec))
                .map(|((label, s), pred)| {
                    let mut row = Row::default();
                    head(&mut row, i, label, cfg.sweep_axis, x);
                    row.spec(&s);
                    prediction_cells(&mut row, pred.as_ref().ok());
                    error_cell(&mut row, pred.as_ref().err());
                    row
                })
                .collect(),
            Err(e) => failed_rows(cfg, i, x, &e, prediction_cells),
        })
        .collect();
    collect(blocks)
}

// Rows for a grid point whose spec itself is invalid; the base spec is
// echoed with the swept field left at its base value.
fn failed_rows(cfg: &SweepConfig, i: usize, x: f64, e: &Error, fill: fn(&mut Row, Option<&Prediction>)) -> Vec<Row> {
    labels(cfg)
        .into_iter()
        .map(|label| {
            let mut row = Row::default();
            head(&mut row, i, label, cfg.sweep_axis, x);
            row.spec(&cfg.base);
            fill(&mut row, None);
            error_cell(&mut row, Some(e));
            row
        })
        .collect()
}

fn collect(blocks: Vec<Vec<Row>>) -> Result<Report> {
    let mut table = Table::default();
    for row in blocks.into_iter().flatten() {
        table.push(row)?;
    }
    Ok(Report::new(table))
}

pub const PHASE_COLUMNS: &[&str] = &[
    "index",
    "curve",
    "axis",
    "x",
    "alpha_s",
    "alpha_t",
    "rho",
    "lambda",
    "loss",
    "phi",
    "phi_hat",
    "upsilon",
    "transfer",
    "delta",
    "spectrum",
    "delta_star",
    "e_test_star",
    "e_test_zero",
    "e_test_one",
    "analytic_threshold",
    "sufficiency_gap",
    "error",
];

/// Numerically optimal hard-transfer rate over a `(α_t, α_s) × ρ` grid.
/// Points outside the model's domain are dropped, so a grid with no valid
/// point yields a header-only table.
pub fn cmd_phase(cfg: &SweepConfig, solver: &AsymptoticSolver) -> Result<Report> {
    cfg.check()?;
    cfg.requires(Output::Phase)?;
    let (rho, pairs, points) = cfg.phase_grids();
    let jobs: Vec<(f64, f64, f64)> = pairs
        .iter()
        .flat_map(|&(at, as_)| rho.iter().map(move |&r| (at, as_, r)))
        .filter(|&(at, as_, r)| {
            let mut s = cfg.base.clone().with_transfer(Transfer::Hard { delta: 0.0 });
            s.alpha_t = at;
            s.alpha_s = as_;
            s.rho = r;
            s.violations().is_empty()
        })
        .collect();
    let rows: Vec<Row> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(at, as_, r))| {
            let mut spec = cfg.base.clone();
            spec.alpha_t = at;
            spec.alpha_s = as_;
            spec.rho = r;
            let res = phase_row(solver, &spec, r, at, as_, points);
            let mut row = Row::default();
            head(&mut row, i, &format!("alpha_t={at};alpha_s={as_}"), Axis::Rho, r);
            row.spec(&spec.clone().with_transfer(Transfer::Hard {
                delta: res.as_ref().map_or(f64::NAN, |p| p.delta_star),
            }));
            let ok = res.as_ref().ok();
            let sign = spec.phi == ActivationKind::Sign && spec.phi_hat == ActivationKind::Sign;
            let gap = ok.and_then(|p| {
                let g = p.analytic_threshold?;
                sign.then_some(r > g && p.delta_star == 0.0)
            });
            row.put("delta_star", Cell::opt(ok.map(|p| p.delta_star)))
                .put("e_test_star", Cell::opt(ok.map(|p| p.e_test_star)))
                .put("e_test_zero", Cell::opt(ok.map(|p| p.e_test_zero)))
                .put("e_test_one", Cell::opt(ok.map(|p| p.e_test_one)))
                .put("analytic_threshold", Cell::opt(ok.and_then(|p| p.analytic_threshold)))
                .put("sufficiency_gap", gap.map_or(Cell::Empty, Cell::Bool));
            error_cell(&mut row, res.as_ref().err());
            row
        })
        .collect();
    let mut table = Table::with_columns(PHASE_COLUMNS);
    for row in rows {
        table.push(row)?;
    }
    Ok(Report::new(table))
}

fn stat_cells(row: &mut Row, mean: &'static str, se: &'static str, s: &Stat) {
    row.num(mean, s.mean).put(se, Cell::opt(s.std_error));
}

fn z(emp: &Stat, pred: Option<f64>) -> Cell {
    match (emp.std_error, pred) {
        (Some(se), Some(p)) if se > 0.0 => Cell::Num((emp.mean - p) / se),
        _ => Cell::Empty,
    }
}

/// Seed of the first trial at grid point `index`; trial seeds never
/// collide across grid points.
pub fn point_seed(master_seed: u64, index: usize, n_trials: usize) -> u64 {
    master_seed.wrapping_add((index as u64).wrapping_mul(n_trials as u64))
}

/// Predictions next to Monte Carlo means, standard errors and z-scores.
/// A failing trial aborts the run; the error carries its seed.
pub fn cmd_simulate(cfg: &SweepConfig, solver: &AsymptoticSolver) -> Result<Report> {
    cfg.check()?;
    cfg.requires(Output::Simulate)?;
    let sim = cfg.sim.ok_or_else(|| Error::invalid("simulate needs a sim block"))?;
    let opts = FitOptions::default();
    let mut table = Table::default();
    for (i, x) in cfg.grid.values().into_iter().enumerate() {
        let spec = cfg.spec_at(x)?;
        let compared = curves(&spec);
        let specs: Vec<TaskSpec> = compared.iter().map(|(_, s)| s.clone()).collect();
        let seed = point_seed(sim.master_seed, i, sim.n_trials);
        let summaries: Vec<TrialSummary> = run_group_trials(&specs, sim.p, sim.n_trials, seed, &opts)?;
        let preds = predict_curves(solver, &spec);
        for (((label, s), pred), emp) in compared.iter().zip(&preds).zip(&summaries) {
            let ok = pred.as_ref().ok();
            let mut row = Row::default();
            head(&mut row, i, label, cfg.sweep_axis, x);
            row.spec(s);
            prediction_cells(&mut row, ok);
            row.put("p", Cell::Int(sim.p as u64))
                .put("n_trials", Cell::Int(sim.n_trials as u64))
                .put("master_seed", Cell::Int(seed));
            stat_cells(&mut row, "emp_q_hat", "emp_q_hat_se", &emp.q_hat);
            stat_cells(&mut row, "emp_r_hat", "emp_r_hat_se", &emp.r_hat);
            stat_cells(&mut row, "emp_e_train", "emp_e_train_se", &emp.train_error);
            stat_cells(&mut row, "emp_e_test", "emp_e_test_se", &emp.gen_error);
            row.put("z_e_train", z(&emp.train_error, ok.map(|p| p.train_error)))
                .put("z_e_test", z(&emp.gen_error, ok.map(|p| p.gen_error)));
            error_cell(&mut row, pred.as_ref().err());
            table.push(row)?;
        }
    }
    Ok(Report::new(table))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveFile {
    pub label: String,
    pub file: String,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub x: String,
    pub y: String,
    pub curves: Vec<CurveFile>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path)?;
    if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
        Table::from_json(&serde_json::from_slice(&bytes)?)
    } else {
        Table::read_csv(&bytes[..])
    }
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Splits a result table into one `x,y` CSV per curve plus a manifest.
/// Rows without a finite `y` are skipped.
pub fn cmd_plotdata(input: &Path, out_dir: &Path, y: &str) -> Result<Manifest> {
    let table = read_table(input)?;
    let need = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::invalid(format!("unknown column {name:?} in {}", input.display())))
    };
    let (kc, kx, ky) = if table.columns.is_empty() {
        (0, 0, 0)
    } else {
        (need("curve")?, need("x")?, need(y)?)
    };
    let mut order: Vec<String> = Vec::new();
    let mut data: Vec<Vec<(f64, f64)>> = Vec::new();
    for row in &table.rows {
        let label = match &row[kc] {
            Cell::Text(s) => s.clone(),
            other => other.to_csv(),
        };
        let (Some(xv), Some(yv)) = (row[kx].as_f64(), row[ky].as_f64()) else {
            continue;
        };
        if !yv.is_finite() {
            continue;
        }
        let k = match order.iter().position(|l| *l == label) {
            Some(k) => k,
            None => {
                order.push(label);
                data.push(Vec::new());
                order.len() - 1
            }
        };
        data[k].push((xv, yv));
    }
    fs::create_dir_all(out_dir)?;
    let mut curves = Vec::new();
    for (label, pts) in order.into_iter().zip(data) {
        let file = format!("{}.csv", file_stem(&label));
        let mut t = Table::with_columns(&["x", y]);
        t.rows = pts.iter().map(|&(a, b)| vec![Cell::Num(a), Cell::Num(b)]).collect();
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        fs::write(out_dir.join(&file), buf)?;
        curves.push(CurveFile { label, file, points: pts.len() });
    }
    let manifest = Manifest {
        x: "x".into(),
        y: y.into(),
        curves,
    };
    fs::write(out_dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Path of the run-metadata sidecar for an output file.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Writes the table in the configured format. Unless `deterministic`, a
/// sidecar with timestamp, host and version is written next to it; the
/// table itself never contains run-specific bytes.
pub fn write_report(cfg: &SweepConfig, command: &str, report: &Report, deterministic: bool) -> Result<()> {
    let path = &cfg.out_path;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            report.table.write_csv(&mut buf)?;
            fs::write(path, buf)?;
        }
        Format::Json => {
            let v = report.table.to_json(&serde_json::to_value(cfg)?);
            fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
        }
    }
    if !deterministic {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let meta = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": stamp,
            "host": std::env::var("HOSTNAME").ok(),
            "rows": report.table.rows.len(),
            "failed_rows": report.failed_rows,
            "config": cfg,
        });
        fs::write(meta_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotic::default_solver;
    use crate::experiment::config::{Grid, PhaseBlock, SimBlock};

    fn regression(axis: Axis, grid: Grid, outputs: Vec<Output>) -> SweepConfig {
        SweepConfig {
            base: TaskSpec::relu_regression(4.0, 2.0, 0.5, 0.0).with_transfer(Transfer::Hard { delta: 0.5 }),
            sweep_axis: axis,
            grid,
            outputs,
            sim: None,
            phase: None,
            alpha_s_ratio: None,
            out_path: "unused.csv".into(),
            format: Format::Csv,
        }
    }

    #[test]
    fn single_point_predict() {
        let cfg = regression(Axis::Rho, Grid::point(0.5), vec![Output::Predict]);
        let rep = cmd_predict(&cfg, default_solver()).unwrap();
        assert_eq!(rep.failed_rows, 0);
        let k = rep.table.column("curve").unwrap();
        let labels: Vec<_> = rep.table.rows.iter().map(|r| r[k].clone()).collect();
        assert_eq!(
            labels,
            ["hard", "none", "full"].map(|s| Cell::Text(s.into())).to_vec()
        );
        let mut soft = cfg.clone();
        soft.base.transfer = Transfer::Soft { spectrum: crate::asymptotic::SpectralDist::identity(1.0) };
        assert_eq!(cmd_predict(&soft, default_solver()).unwrap().table.rows.len(), 1);
    }

    #[test]
    fn invalid_points_become_error_rows() {
        let cfg = regression(Axis::Rho, Grid { start: 0.5, stop: 1.5, count: 2 }, vec![Output::Predict]);
        let rep = cmd_predict(&cfg, default_solver()).unwrap();
        assert_eq!(rep.failed_rows, 3);
        assert_eq!(rep.table.rows.len(), 6);
    }

    #[test]
    fn missing_output_rejected() {
        let cfg = regression(Axis::Rho, Grid::point(0.5), vec![Output::Predict]);
        assert!(cmd_phase(&cfg, default_solver()).is_err());
        assert!(cmd_simulate(&cfg, default_solver()).is_err());
    }

    #[test]
    fn empty_phase_grid_is_header_only() {
        let mut cfg = regression(Axis::Rho, Grid { start: 1.5, stop: 2.0, count: 3 }, vec![Output::Phase]);
        cfg.phase = Some(PhaseBlock::default());
        let rep = cmd_phase(&cfg, default_solver()).unwrap();
        assert!(rep.table.rows.is_empty());
        assert_eq!(rep.table.columns.len(), PHASE_COLUMNS.len());
        assert_eq!(rep.failed_rows, 0);
    }

    #[test]
    fn small_simulation_has_all_columns() {
        let mut cfg = regression(Axis::AlphaT, Grid::point(2.0), vec![Output::Simulate]);
        cfg.sim = Some(SimBlock { p: 30, n_trials: 3, master_seed: 4 });
        let rep = cmd_simulate(&cfg, default_solver()).unwrap();
        assert_eq!(rep.table.rows.len(), 3);
        for col in ["e_test_pred", "emp_e_test", "emp_e_test_se", "z_e_test", "master_seed"] {
            let k = rep.table.column(col).unwrap();
            assert!(rep.table.rows.iter().all(|r| r[k] != Cell::Empty), "{col}");
        }
    }

    #[test]
    fn seeds_do_not_collide() {
        assert_eq!(point_seed(10, 0, 50), 10);
        assert_eq!(point_seed(10, 2, 50), 110);
        assert_eq!(point_seed(u64::MAX, 1, 1), 0);
    }

    #[test]
    fn meta_sidecar_name() {
        assert_eq!(meta_path(Path::new("out/run.csv")), PathBuf::from("out/run.csv.meta.json"));
    }
}
