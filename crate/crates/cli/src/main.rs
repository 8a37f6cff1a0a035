use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use strip_lab::{parse_config_for, run_experiment, Experiment, CSV_SCHEMAS};

/// Transfer-matrix and localization experiments on the random strip.
#[derive(Parser, Debug)]
#[command(name = "strip-lab", version, after_help = CSV_SCHEMAS)]
struct Args {
    experiment: Experiment,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers` (thread count; results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output_dir` (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(1);
        }
    };
    let mut cfg = match parse_config_for(&text, Some(args.experiment)) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            eprintln!("--workers must be at least 1");
            return ExitCode::from(2);
        }
        cfg.workers = Some(w);
    }
    let out = args.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match run_experiment(&cfg, &out) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
