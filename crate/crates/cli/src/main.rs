use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sae_cli::config::RunConfig;
use sae_cli::error::CliError;
use sae_cli::run::{run, RunOptions};
use sae_core::sim::Registries;

#[derive(Debug, Parser)]
#[command(
    name = "sae",
    version,
    about = "Empirical best prediction and MSPE estimation for small areas"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation study or estimate on a dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; overrides the config file.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running it; prints the issue list as JSON.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(err: &CliError, output_dir: Option<&std::path::Path>) -> ExitCode {
    let record = serde_json::to_string_pretty(&err.record()).expect("plain struct");
    eprintln!("{record}");
    if let Some(dir) = output_dir.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), record + "\n");
    }
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, threads } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e, None),
            };
            let options = RunOptions {
                threads,
                seed_env: std::env::var("SAE_SEED").ok(),
            };
            match run(&cfg, &options) {
                Ok(summary) => {
                    print!("{summary}");
                    println!("wrote {}", cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e, Some(&cfg.output_dir)),
            }
        }
        Command::Validate { config } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e, None),
            };
            let issues = cfg.validate(&Registries::default());
            println!("{}", serde_json::to_string_pretty(&issues).expect("plain struct"));
            if issues.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
