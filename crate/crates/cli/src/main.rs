use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trefftz_dg_cli::config::parse_config_file;
use trefftz_dg_cli::dofs::{dof_table, write_dof_table};
use trefftz_dg_cli::scenario::{convergence_study, run_scenario, write_errors, CliError, StudyAxis};
use trefftz_dg_cli::{RunConfig, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "trefftz-dg", version, about = "Space-time Trefftz DG solver for 2D TM Maxwell problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Parameter studies.
    Study {
        #[command(subcommand)]
        kind: StudyKind,
    },
    /// Tables that need no simulation.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
}

#[derive(Subcommand)]
enum StudyKind {
    /// Errors and observed orders along one refinement axis.
    Convergence {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportKind {
    /// Trefftz and full polynomial space dimensions for p = 0..=pmax.
    Dofs {
        #[arg(long)]
        pmax: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    H,
    Dt,
    P,
}

fn output_dir(c: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| c.output.dir.clone())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let c = parse_config_file(&config)?;
            for f in run_scenario(&c, &output_dir(&c))? {
                println!("{}", f.display());
            }
        }
        Command::Study { kind: StudyKind::Convergence { axis, config } } => {
            let c = parse_config_file(&config)?;
            let axis = match axis {
                AxisArg::H => StudyAxis::H,
                AxisArg::Dt => StudyAxis::Dt,
                AxisArg::P => StudyAxis::P,
            };
            let rows = convergence_study(&c, axis)?;
            let dir = output_dir(&c);
            std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
            let path = dir.join(format!("convergence_{}.csv", axis.name()));
            write_errors(&path, &rows)?;
            println!("{}", path.display());
        }
        Command::Report { kind: ReportKind::Dofs { pmax } } => {
            let rows = dof_table(pmax).map_err(|e| trefftz_dg_cli::config::ConfigError::Rejected(e.to_string()))?;
            write_dof_table(&rows, std::io::stdout().lock()).map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
