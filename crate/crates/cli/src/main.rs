use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grauert_lab::output::fmt_f64;
use grauert_lab::{report, run_config, Overrides};

#[derive(Parser)]
#[command(name = "grauert-lab", version, about = "Numerical experiments on complexified Laplace eigenfunctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Caps the worker threads.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print convergence tables for a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match cli.command {
        Command::Run { config, seed, threads } => match run_config(&config, Overrides { seed, threads }) {
            Ok(rep) => {
                for c in &rep.outcome.checks {
                    let tag = c.criterion.map(|n| format!("criterion {n}")).unwrap_or_else(|| "check".into());
                    let verdict = if c.pass { "PASS" } else { "FAIL" };
                    if c.comparison == "==" {
                        println!("{verdict} {tag}: {}", c.name);
                    } else {
                        println!("{verdict} {tag}: {} ({:.3e} {} {})", c.name, c.value, c.comparison, fmt_f64(c.threshold));
                    }
                }
                println!(
                    "{} rows written to {}",
                    rep.outcome.rows.len(),
                    rep.resolved.output_dir.display()
                );
                ExitCode::from(rep.exit_code())
            }
            Err(e) => {
                eprintln!("grauert-lab: {e}");
                ExitCode::from(e.exit_code())
            }
        },
        Command::Report { dir } => match report::report(&dir) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("grauert-lab: {e}");
                ExitCode::from(2)
            }
        },
    }
}
