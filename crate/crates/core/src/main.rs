use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deepfem::bench::{
    emit_report, parse_h, run_example, run_suite, sweep, ExperimentConfig, InitKind, ReportFormat,
    RunOptions, SolverKind, Suite,
};
use deepfem::par::{configure_threads, THREADS_ENV};
use deepfem::{Error, Result};

/// Train a network, then refine its nodal interpolant with finite element
/// Newton or power iterations.
#[derive(Parser)]
#[command(name = "deepfem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one example over a list of mesh sizes and print the result table.
    Run {
        /// Problem id (ex5_1 ... ex5_6).
        #[arg(long)]
        example: Option<String>,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Mesh sizes such as 2^-7, 1/128 or 0.0078125.
        #[arg(long = "h", num_args = 1.., value_parser = parse_h)]
        hs: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// dl, exact, constant:<v>, noise or noise:<scale>.
        #[arg(long, default_value = "dl")]
        init: InitKind,
        /// newton, picard or two-grid:<H>.
        #[arg(long, default_value = "newton")]
        solver: SolverKind,
        #[arg(long)]
        gamma: Option<f64>,
        /// Experiment document (JSON); replaces all other run options.
        #[arg(long, conflicts_with = "example")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Run self-check suites; exits non-zero if any check fails.
    Check {
        #[arg(long = "suite", num_args = 1.., default_values = ["gradients", "fem", "lemma-b", "orders"])]
        suites: Vec<Suite>,
    },
    /// Final errors over a grid of network widths and depths at one mesh size.
    Sweep {
        #[arg(long)]
        example: String,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, value_parser = parse_h)]
        h: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 30, 50])]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6])]
        depths: Vec<usize>,
        #[arg(long, default_value_t = 400)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_out(doc: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, doc).map_err(Error::from),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            example,
            dim,
            hs,
            epochs,
            seed,
            init,
            solver,
            gamma,
            config,
            out,
            format,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
                None => {
                    let problem = example
                        .ok_or_else(|| Error::Config("--example or --config is required".into()))?;
                    let mut options = RunOptions::new(hs, seed);
                    options.epochs = epochs;
                    options.init = init;
                    options.solver_kind = solver;
                    options.gamma = gamma;
                    ExperimentConfig {
                        problem,
                        dim,
                        options,
                    }
                }
            };
            let rows = run_example(&cfg.problem, cfg.dim, &cfg.options)?;
            write_out(&emit_report(&rows, format), out.as_ref())?;
            Ok(rows.iter().all(|r| !r.status.starts_with("error")))
        }
        Command::Check { suites } => {
            let mut all = true;
            for suite in suites {
                for c in run_suite(suite)? {
                    println!(
                        "[{}] {} / {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        suite.name(),
                        c.name,
                        c.detail
                    );
                    all &= c.passed;
                }
            }
            Ok(all)
        }
        Command::Sweep {
            example,
            dim,
            h,
            widths,
            depths,
            epochs,
            seed,
        } => {
            let cells = sweep(&example, dim, h, &widths, &depths, epochs, seed)?;
            println!("| N | L | e_DL | #K | e_h | λ_h | status |\n|---|---|---|---|---|---|---|");
            for c in &cells {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.2e}")).unwrap_or_default();
                println!(
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    c.width,
                    c.depth,
                    f(c.row.e_dl),
                    c.row.iterations.map(|k| k.to_string()).unwrap_or_default(),
                    f(c.row.e_h),
                    f(c.row.lambda_h),
                    c.row.status
                );
            }
            Ok(cells.iter().all(|c| c.row.status == "ok"))
        }
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                configure_threads(n);
            }
            _ => eprintln!("ignoring {THREADS_ENV}={v}: expected a positive integer"),
        }
    }
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
