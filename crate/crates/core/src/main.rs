use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wldreg::harness::experiment::{load_base, prepare_split, train_checkpoint};
use wldreg::harness::{
    dump_similarity, gradcheck, load_config, redirect_outputs, run_experiment, summarize, sweep, Component,
    ExperimentConfig, RunResult, OUTPUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "wldreg", version, about = "Train small MLPs with within-layer diversity regularisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured regulariser on every seed and write the results CSV.
    Run { config: PathBuf },
    /// Cross the config's grid with its regularisers and seeds; resumes from an existing results file.
    Sweep { config: PathBuf },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = wldreg::harness::gradcheck::DEFAULT_TOLERANCE)]
        tol: f64,
        /// Comma-separated components (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<Component>,
    },
    /// Train the first regulariser on the first seed and write its feature-layer similarity matrix.
    DumpSim {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn config_from(path: &PathBuf) -> wldreg::Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        redirect_outputs(&mut cfg, &PathBuf::from(dir));
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> wldreg::Result<ExitCode> {
    match command {
        Command::Run { config } => {
            let cfg = config_from(&config)?;
            let results = run_experiment(&cfg)?;
            print_summary(&results);
            println!("wrote {} rows to {}", results.len(), cfg.output.display());
        }
        Command::Sweep { config } => {
            let cfg = config_from(&config)?;
            let results = sweep(&cfg)?;
            print_summary(&results);
            println!("appended {} rows to {}", results.len(), cfg.output.display());
        }
        Command::Gradcheck { tol, only } => {
            let selection = if only.is_empty() { Component::all() } else { only };
            let report = gradcheck(&selection, tol)?;
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::DumpSim { config, out } => {
            let cfg = config_from(&config)?;
            let spec = cfg.regularizers[0];
            let seed = cfg.seeds[0];
            let base = load_base(&cfg.dataset)?;
            let data = prepare_split(&cfg.dataset, base.as_ref(), seed)?;
            let (model, _) = train_checkpoint(&cfg, &spec, &data, seed)?;
            let dump = dump_similarity(&model, &data.test, spec.gamma, &out)?;
            println!(
                "{}x{} similarity over {} samples: det={:e} logdet={:e} -> {}",
                dump.matrix.rows(),
                dump.matrix.cols(),
                dump.samples,
                dump.det,
                dump.logdet,
                out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(results: &[RunResult]) {
    if results.is_empty() {
        return;
    }
    println!(
        "{:<8} {:>9} {:>9} {:>7} {:>5} {:>10} {:>10} {:>8}",
        "variant", "lambda1", "lambda2", "gamma", "runs", "test_err", "std", "gap"
    );
    for s in summarize(results) {
        println!(
            "{:<8} {:>9} {:>9} {:>7} {:>5} {:>10.3} {:>10.3} {:>8.3}",
            s.spec.variant.to_string(),
            s.spec.lambda1,
            s.spec.lambda2,
            s.spec.gamma,
            s.runs,
            s.mean_test_err,
            s.std_test_err,
            s.mean_gap
        );
    }
}
