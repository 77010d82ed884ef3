use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dynprice_cli::{
    cmd_report, cmd_simulate, default_report_dir, load_spec, parse_ks, CliError, ReportOptions, DEFAULT_TREATMENT_START,
};
use dynprice_core::evaluation::DEFAULT_BASELINE_DAYS;
use dynprice_core::simulator::PolicyKind;

#[derive(Parser)]
#[command(
    name = "dynprice",
    version,
    about = "Dynamic pricing simulations and significance reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run passive and Thompson-sampling trials and write revenue artifacts.
    Simulate {
        /// TOML experiment spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides `output_dir` in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads [default: available cores].
        #[arg(long, env = "DYNPRICE_WORKERS")]
        workers: Option<usize>,
        /// Overrides `seed` in the spec.
        #[arg(long, env = "DYNPRICE_SEED")]
        seed: Option<u64>,
    },
    /// Per-k Wald tables from a records.jsonl file.
    Report {
        #[arg(long)]
        records: PathBuf,
        /// Comma-separated minimum treatment-day counts.
        #[arg(long, default_value = "5,10,15,20,25,30")]
        ks: String,
        /// Output directory [default: the records' directory].
        #[arg(long)]
        out: Option<PathBuf>,
        /// First treatment day (1-based).
        #[arg(long, default_value_t = DEFAULT_TREATMENT_START)]
        start: u32,
        #[arg(long, default_value_t = DEFAULT_BASELINE_DAYS)]
        baseline_days: u32,
        #[arg(long, default_value = "ts")]
        policy: PolicyKind,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            spec,
            out,
            workers,
            seed,
        } => {
            let mut parsed = load_spec(&spec)?;
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            let out = out
                .or_else(|| parsed.output_dir.clone())
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = cmd_simulate(&parsed, &out, workers)?;
            for p in &summary.comparison.policies {
                let (lo, hi) = summary.comparison.window;
                println!(
                    "{:<8} mean basket revenue days {lo}-{hi}: {:.2} (sd {:.2}, {} trials)",
                    p.policy.as_str(),
                    p.window_mean,
                    p.window_sd,
                    p.trials
                );
            }
            if let Some(t) = summary.comparison.paired {
                println!(
                    "ts - passive: {:.2} per day, W = {:.3}, p = {:.3e}",
                    t.mean_difference, t.statistic, t.p_value
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Report {
            records,
            ks,
            out,
            start,
            baseline_days,
            policy,
        } => {
            let opts = ReportOptions {
                ks: parse_ks(&ks).map_err(|e| CliError::Config(format!("--ks: {e}")))?,
                baseline_days,
                treatment_start: start,
                policy,
            };
            let out = out.unwrap_or_else(|| default_report_dir(&records));
            let report = cmd_report(&records, &out, &opts)?;
            for (name, rows) in [
                ("treated days", &report.treated_days),
                ("whole period", &report.whole_period),
            ] {
                println!("{name}");
                for r in rows {
                    match r.p_value {
                        Some(p) => println!(
                            "  k={:<3} S_k={:<5} mean delta={:>10.3} p={p:.3e}",
                            r.k,
                            r.s_k,
                            r.mean_delta.unwrap_or(f64::NAN)
                        ),
                        None => println!("  k={:<3} S_k={:<5} {:?}", r.k, r.s_k, r.status),
                    }
                }
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
