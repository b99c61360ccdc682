use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpofsf_cli::commands::{self, Exit, McArgs, RunArgs};

#[derive(Parser)]
#[command(name = "rpofsf", version, about = "Robust predictive output-feedback safety filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the certificate on the configured grid.
    Verify { config: PathBuf },
    /// Simulate one closed-loop run and write the CSV log.
    Run {
        config: PathBuf,
        /// Apply the uncertified policy directly.
        #[arg(long)]
        unfiltered: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV path; stdout when absent and the config names none.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip grid verification of a fully specified certificate.
        #[arg(long)]
        no_verify: bool,
    },
    /// Monte-Carlo campaign over consecutive seeds.
    Mc {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long)]
        unfiltered: bool,
        #[arg(long)]
        threads: Option<usize>,
        /// Summary CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_verify: bool,
    },
    /// Phase plot of one or more run logs.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Configuration for constraints and ellipses; the built-in example otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Verify { config } => commands::verify(&config),
        Command::Run {
            config,
            unfiltered,
            steps,
            seed,
            out,
            no_verify,
        } => commands::run(
            &config,
            &RunArgs {
                unfiltered,
                steps,
                seed,
                out,
                no_verify,
            },
        ),
        Command::Mc {
            config,
            runs,
            unfiltered,
            threads,
            out,
            no_verify,
        } => commands::mc(
            &config,
            &McArgs {
                runs,
                unfiltered,
                threads,
                out,
                no_verify,
            },
        ),
        Command::Plot { csv, out, config } => commands::plot(&csv, &out, config.as_deref()),
    };
    ExitCode::from(code as u8)
}
