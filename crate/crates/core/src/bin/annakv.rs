use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use annakv::bench::{run_scenario, BenchConfig, Mode, Scenario};

#[derive(Parser)]
#[command(
    name = "annakv",
    version,
    about = "Elastic tiered key-value store: benchmarks and config checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a named scenario and write timeline.csv and summary.txt.
    Bench {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "capacity")]
        mode: Mode,
    },
    /// Parse a config file and report the first problem.
    ValidateConfig { file: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Bench {
            scenario,
            config,
            out,
            seed,
            mode,
        } => {
            let cfg = match BenchConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let report = run_scenario(scenario, &cfg, seed, mode);
            if let Err(e) = report.write(&out) {
                eprintln!("{}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            print!("{}", report.summary());
            ExitCode::SUCCESS
        }
        Cmd::ValidateConfig { file } => match BenchConfig::load(&file) {
            Ok(_) => {
                println!("{}: ok", file.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                ExitCode::from(2)
            }
        },
    }
}
