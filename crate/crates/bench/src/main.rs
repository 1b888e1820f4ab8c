use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use saddle_scale_bench::config::{schema, SuiteConfig};
use saddle_scale_bench::plotdata::{export, Transform, UsageError};
use saddle_scale_bench::suite::{resolve_threads, run_suite, suite_dir};
use saddle_scale_core::verify::{format_table, run_checks, VerifyOptions};

/// Experiments with scaled extra-gradient methods on synthetic saddle problems.
#[derive(Parser)]
#[command(name = "saddle-scale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a suite config.
    Run {
        config: PathBuf,
        /// Worker threads (default: SADDLE_SCALE_THREADS, else all cores).
        #[arg(long, conflicts_with = "serial")]
        threads: Option<usize>,
        /// Run cells one after another on the calling thread.
        #[arg(long)]
        serial: bool,
    },
    /// Print `t,<metric>` pairs from a run CSV.
    Plotdata {
        csv: PathBuf,
        metric: String,
        #[arg(long, value_enum, default_value = "none")]
        transform: Transform,
        /// Keep every n-th row.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Run the built-in acceptance checks.
    Verify {
        /// Only the check (or group) with this name.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Print results as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Print the JSON schema of suite configs.
    PrintSchema,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            threads,
            serial,
        } => {
            let cfg = SuiteConfig::load(&config)?;
            let threads = if serial {
                Some(1)
            } else {
                resolve_threads(threads)?
            };
            println!(
                "suite {} master_seed {} digest {}",
                cfg.name,
                cfg.master_seed,
                cfg.digest()
            );
            println!("output {}", suite_dir(&cfg).display());
            let summary = match run_suite(&cfg, threads) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return Ok(ExitCode::from(1));
                }
            };
            for c in &summary.cells {
                let status = match (c.passed(), c.diverged) {
                    (true, true) => "ok (diverged as expected)",
                    (true, false) => "ok",
                    (false, _) => "FAIL",
                };
                println!("{} {} r{}: {status}", c.problem, c.optimizer, c.repeat);
            }
            for f in &summary.failures {
                eprintln!("failure: {f}");
            }
            Ok(if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Plotdata {
            csv,
            metric,
            transform,
            stride,
        } => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match export(&csv, &metric, transform, stride, &mut out) {
                Ok(_) => {
                    out.flush()?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) if e.is::<UsageError>() => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(2))
                }
                Err(e) => Err(e),
            }
        }
        Command::Verify { only, seed, json } => {
            let results = run_checks(&VerifyOptions { seed, only })?;
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.key)
                .collect();
            if json {
                let doc = serde_json::json!({ "seed": seed, "passed": failed.is_empty(), "failed": failed, "checks": results });
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                println!("seed {seed}");
                print!("{}", format_table(&results));
                if !failed.is_empty() {
                    eprintln!("failed: {}", failed.join(","));
                }
            }
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::PrintSchema => {
            println!("{}", serde_json::to_string_pretty(&schema())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
