use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foilfem::cli::{self, RunConfig};

#[derive(Parser)]
#[command(name = "foilfem", version, about = "2D eddy-current FE solver with homogenized foil windings")]
struct Args {
    /// Directory for output files (overrides the configuration).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the frequency or transient analysis of a configuration.
    Run { config: PathBuf },
    /// Run a convergence study against a reference energy.
    Study { config: PathBuf },
    /// Solve the resolved-foil reference model of a single-winding case.
    Oracle { config: PathBuf },
}

type Action = fn(&RunConfig, Option<&Path>) -> foilfem::Result<Vec<PathBuf>>;

fn main() -> ExitCode {
    let args = Args::parse();
    let (path, action): (&PathBuf, Action) =
        match &args.command {
            Command::Run { config } => (config, cli::run),
            Command::Study { config } => (config, cli::study),
            Command::Oracle { config } => (config, cli::oracle),
        };
    let result = RunConfig::load(path).and_then(|cfg| action(&cfg, args.output_dir.as_deref()));
    match result {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
