//! `ritz run <config>`, `ritz report <dirs...>`, `ritz preset <name>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ritz_core::experiment::{self, ExperimentError, RunOptions};

#[derive(Parser)]
#[command(name = "ritz", version, about = "Deep Ritz experiments for p-Dirichlet problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file, or a manifest.json from an earlier run.
    Run {
        config: PathBuf,
        /// Output directory; defaults to the config's `output`, then `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the initialization seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Single-threaded evaluation, so that loss.csv is bit-identical across runs.
        #[arg(long)]
        reproducible: bool,
    },
    /// Merge the aggregate errors of several runs into one CSV table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in config as JSON.
    Preset {
        /// One of the names printed by `ritz preset --list`.
        #[arg(required_unless_present = "list")]
        name: Option<String>,
        #[arg(long)]
        list: bool,
    },
}

fn io_err(path: PathBuf) -> impl FnOnce(std::io::Error) -> ExperimentError {
    move |source| ExperimentError::Io { path, source }
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            reproducible,
        } => {
            let (cfg, from_manifest) = experiment::load_config(&config)?;
            let opts = RunOptions {
                out,
                seed,
                reproducible: reproducible || from_manifest,
            };
            let (dir, manifest) = experiment::run(cfg, &opts)?;
            eprintln!(
                "{} finished in {:.1}s -> {}",
                manifest.config.name(),
                manifest.wall_clock_seconds,
                dir.display()
            );
            if let Some(loss) = manifest.final_loss {
                eprintln!("final loss {loss:e}");
            }
            if let Some(e) = &manifest.errors {
                eprintln!(
                    "mean over {} slices: lp_abs {:e}, w1p_abs {:e}, natural_sq {:e}",
                    e.slices, e.lp_abs, e.w1p_abs, e.natural_sq
                );
            }
            Ok(())
        }
        Command::Report { dirs, out } => {
            let (rows, warnings) = experiment::report(&dirs);
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let table = experiment::report_csv(&rows);
            match out {
                Some(path) => std::fs::write(&path, table).map_err(io_err(path)),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
        Command::Preset { name, list } => {
            if list {
                for n in experiment::PRESET_NAMES {
                    println!("{n}");
                }
                return Ok(());
            }
            let cfg = experiment::preset(name.as_deref().unwrap_or_default())?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
