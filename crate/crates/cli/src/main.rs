use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use polykin::steady::ConstructionPath;
use polykin_cli::artifacts::resolve_out_dir;
use polykin_cli::commands::{self, RunArgs};
use polykin_cli::verify::Suite;
use polykin_cli::CliError;

#[derive(Parser)]
#[command(name = "polykin", version, about = "Polymer nucleation, growth and fragmentation kinetics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overridden by POLYKIN_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of cells (or steady-state nodes).
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Faithful,
    Direct,
}

#[derive(Subcommand)]
enum Command {
    /// Time-dependent run; writes series.csv, snapshots and report.json.
    Simulate(Common),
    /// Steady state for decreasing d with fragmentation.
    Steady {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "direct")]
        path: PathArg,
    },
    /// Acceptance bundle: T21, T23, T24, T26, T28, props or all.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value of a scalar scenario field, in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted field name, e.g. model.nucleation.i0.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Lagrangian run along characteristics.
    Characteristics(Common),
}

fn run_args(c: Common) -> RunArgs {
    RunArgs { config: c.config, out: resolve_out_dir(c.out.as_deref()), resolution: c.resolution }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&run_args(c)),
        Command::Characteristics(c) => commands::characteristics(&run_args(c)),
        Command::Steady { common, path } => {
            let path = match path {
                PathArg::Faithful => ConstructionPath::Faithful,
                PathArg::Direct => ConstructionPath::Direct,
            };
            commands::steady(&run_args(common), path)
        }
        Command::Verify { suite, out } => commands::verify(Suite::parse(&suite)?, &resolve_out_dir(out.as_deref())),
        Command::Sweep { common, axis, values } => commands::sweep(&run_args(common), &axis, &values),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polykin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
