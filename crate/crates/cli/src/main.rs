use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use transonic_cli::run::{self, Overrides, SweepAxis};
use transonic_cli::{CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "transonic", version, about = "Smooth transonic Euler-Poisson flows in a flat nozzle")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Key-value or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Multiplies the boundary amplitude `boundary.sigma`.
    #[arg(long, global = true)]
    scale_sigma: Option<f64>,
    /// Solve even when no regime certificate covers the window.
    #[arg(long, global = true)]
    override_certificate: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// 1D background profile.
    Background,
    /// Regime certificate search.
    Regimes,
    /// Full 2D solve.
    Solve,
    /// One solve per value along an axis.
    Sweep {
        /// J, sigma or d.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    Overrides { out: cli.out, scale_sigma: cli.scale_sigma, override_certificate: cli.override_certificate }.apply(&mut cfg)?;
    match cli.cmd {
        Cmd::Background => run::run_background(&cfg).map(|_| ()),
        Cmd::Regimes => run::run_regimes(&cfg).map(|_| ()),
        Cmd::Solve => run::run_solve(&cfg).map(|_| ()),
        Cmd::Sweep { axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let vals = run::parse_values(&values)?;
            run::run_sweep(&cfg, axis, &vals).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
