use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracture_cli::{audit, korn, simulate, AuditArgs, KornArgs};

/// Quasistatic phase-field fracture simulator. Log verbosity is read from
/// `FRACTURE_LOG` (e.g. `FRACTURE_LOG=info`).
#[derive(Debug, Parser)]
#[command(name = "fracture", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every grid level of a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KKT residuals and competitor margins at stored times.
    Audit {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Grid level; the finest by default.
        #[arg(long)]
        level: Option<usize>,
    },
    /// Piecewise-rigid diagnostics at one stored time.
    Korn {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        time: f64,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long, default_value_t = 1e-3)]
        closeness: f64,
        #[arg(long, default_value_t = 1.5)]
        p: f64,
        #[arg(long)]
        level: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FRACTURE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate { config, out } => simulate(&config, out.as_deref()).map(|dir| {
            println!("wrote {}", dir.display());
        }),
        Command::Audit { traj, times, level } => {
            audit(&AuditArgs { traj, times, level }).map(|path| {
                println!("wrote {}", path.display());
            })
        }
        Command::Korn {
            traj,
            time,
            threshold,
            closeness,
            p,
            level,
        } => korn(&KornArgs {
            traj,
            time,
            threshold,
            closeness,
            p,
            level,
        })
        .map(|(raw, merged)| {
            println!(
                "components: {} raw, {} merged; sup |v| = {:e} merged",
                raw.num_components, merged.num_components, merged.sup_norm_v
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
