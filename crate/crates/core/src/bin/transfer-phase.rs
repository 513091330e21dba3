use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use transfer_phase::asymptotic::AsymptoticSolver;
use transfer_phase::experiment::{
    cmd_phase, cmd_plotdata, cmd_predict, cmd_simulate, write_report, Format, Overrides, Report, SweepConfig,
};

#[derive(Parser)]
#[command(version, about = "Asymptotic predictions, phase diagrams and simulations for transfer learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predicted overlaps and errors along the sweep grid.
    Predict(RunArgs),
    /// Optimal hard-transfer rate over a similarity grid.
    Phase(RunArgs),
    /// Monte Carlo trials against the predictions.
    Simulate(RunArgs),
    /// Split a result table into one data file per curve.
    Plotdata(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the metadata sidecar so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    alpha_t: Option<f64>,
    #[arg(long)]
    alpha_s: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Table written by predict, phase or simulate.
    input: PathBuf,
    /// Directory for the per-curve files and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Column plotted against `x`.
    #[arg(long, default_value = "e_test_pred")]
    y: String,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            rho: self.rho,
            alpha_t: self.alpha_t,
            alpha_s: self.alpha_s,
            lambda: self.lambda,
            delta: self.delta,
            p: self.p,
            trials: self.trials,
            seed: self.seed,
            out: self.out.clone(),
            format: self.format.map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            }),
        }
    }
}

type Runner = fn(&SweepConfig, &AsymptoticSolver) -> transfer_phase::Result<Report>;

fn run(name: &str, args: RunArgs, runner: Runner) -> anyhow::Result<ExitCode> {
    let mut cfg = SweepConfig::from_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    cfg.apply(&args.overrides())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let solver = AsymptoticSolver::default();
    let report = pool.install(|| runner(&cfg, &solver))?;
    write_report(&cfg, name, &report, args.deterministic)
        .with_context(|| format!("writing {}", cfg.out_path.display()))?;
    eprintln!(
        "{name}: {} rows written to {} ({} failed)",
        report.table.rows.len(),
        cfg.out_path.display(),
        report.failed_rows
    );
    Ok(if report.failed_rows == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict(a) => run("predict", a, cmd_predict),
        Command::Phase(a) => run("phase", a, cmd_phase),
        Command::Simulate(a) => run("simulate", a, cmd_simulate),
        Command::Plotdata(a) => cmd_plotdata(&a.input, &a.out, &a.y)
            .map(|m| {
                eprintln!("plotdata: {} curves written to {}", m.curves.len(), a.out.display());
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
