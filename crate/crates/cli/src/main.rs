use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use essvi_cli::{run_calibrate, run_check_arb, run_cpt_calibrate, run_report, run_slice, RunConfig, Status};

#[derive(Parser)]
#[command(name = "gessvi", version, about = "Arbitrage-free eSSVI calibration and auditing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

impl Common {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => self.run.over(RunConfig::load(p)?),
            None => self.run,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the global eSSVI surface and write all artifacts
    Calibrate(Common),
    /// Calibrate the CPT comparison model
    CptCalibrate(Common),
    /// Interpolated or extrapolated slices from a parameter document
    Slice {
        /// Maturities to evaluate
        #[arg(long = "t", required = true, num_args = 1..)]
        t: Vec<f64>,
        /// eSSVI parameter document
        #[arg(long)]
        params: PathBuf,
        /// Right-extrapolation slope of θ
        #[arg(long)]
        right_slope: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Audit a price-grid CSV for static arbitrage
    CheckArb {
        #[arg(long)]
        grid: PathBuf,
        /// Absolute tolerance in currency (overrides --tol)
        #[arg(long)]
        abs_tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-option errors of one or two calibrated models
    Report {
        /// eSSVI parameter document
        #[arg(long)]
        essvi: Option<PathBuf>,
        /// CPT parameter document
        #[arg(long)]
        cpt: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Calibrate(c) => run_calibrate(&c.resolve()?),
        Command::CptCalibrate(c) => run_cpt_calibrate(&c.resolve()?),
        Command::Slice {
            t,
            params,
            right_slope,
            common,
        } => {
            let cfg = common.resolve()?;
            let text = run_slice(&cfg, &params, &t, right_slope)?;
            if cfg.out.is_none() {
                print!("{text}");
            }
            Ok(Status::Clean)
        }
        Command::CheckArb { grid, abs_tol, common } => run_check_arb(&common.resolve()?, &grid, abs_tol),
        Command::Report { essvi, cpt, common } => run_report(&common.resolve()?, essvi.as_deref(), cpt.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
