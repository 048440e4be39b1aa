use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustbid::datasets::{write_csv, Preset};
use robustbid::sweep::{run_sweep, write_outputs, SweepConfig};
use robustbid::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "robustbid", version, about = "Robust autobidding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a policy/uncertainty/seed sweep and write results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Run one oracle cross-check suite and print its pass/fail table.
    Verify {
        /// worst_case, duality, consistency, psd or metrics.
        #[arg(long)]
        suite: String,
    },
    /// Write a preset dataset as CSV.
    GenData {
        /// synthetic, ipinyou-like or bat-like.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { config, out_dir, jobs } => {
            let cfg = SweepConfig::from_path(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let out = run_sweep(&cfg, jobs).map_err(|e| e.to_string())?;
            let (csv, json) = write_outputs(&out, &out_dir).map_err(|e| e.to_string())?;
            let flagged = out.runs.iter().filter(|r| r.result.flags.has_convergence_issue()).count();
            eprintln!("{} runs, {flagged} flagged; wrote {} and {}", out.runs.len(), csv.display(), json.display());
            Ok(true)
        }
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite);
            print!("{}", report.to_table());
            Ok(report.passed())
        }
        Command::GenData { preset, seed, out } => {
            let preset: Preset = preset.parse().map_err(|e| format!("{e}"))?;
            let ds = preset.generate(seed).map_err(|e| e.to_string())?;
            let file = File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            write_csv(&ds, BufWriter::new(file)).map_err(|e| e.to_string())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
