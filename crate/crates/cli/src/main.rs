use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use promptsel_cli::report::{build_report, format_table};
use promptsel_cli::{load_config, run_experiment, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "promptsel", version, about = "Prompt selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config or a previous summary.json.
    Run {
        config: PathBuf,
        /// Replications to run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Added to the config seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Output directory; overrides the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Aggregate every experiment found under a directory.
    Report { dir: PathBuf },
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Config(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run {
            config,
            jobs,
            seed_offset,
            output,
        } => {
            let loaded = load_config(&config)?;
            let opts = RunOptions {
                jobs,
                seed_offset,
                output,
                artifacts: true,
            };
            let outcome = run_experiment(&loaded, &opts)?;
            let s = &outcome.summary;
            println!("{} rows, {} failed, written to {}", s.rows, s.failed, outcome.dir.display());
            for g in &s.groups {
                let shown: Vec<String> = ["correct", "regret", "rmse", "cr", "final_value"]
                    .iter()
                    .filter_map(|m| g.metrics.get(*m).map(|st| format!("{m}={:.4}±{:.4}", st.mean, st.std)))
                    .collect();
                println!("  {} (N={}): {}", g.label, g.candidates, shown.join(" "));
            }
            Ok(if s.failed > 0 { 3 } else { 0 })
        }
        Command::Validate { config } => {
            let loaded = load_config(&config)?;
            println!("{}: ok ({:?})", loaded.file, loaded.config.mode);
            Ok(0)
        }
        Command::Report { dir } => {
            let rows = build_report(&dir)?;
            print!("{}", format_table(&rows));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
