//! Benchmark problems, the experiment driver and result tables.

mod checks;
mod experiment;
mod lemma;
mod problems;
mod report;

pub use checks::{gradient_check, lemma_grid, run_suite, CheckOutcome, Suite};
pub use experiment::{
    attach_orders, case_configs, dl_eigenvalue, dl_error, parse_h, run_example, sweep, train_case,
    ExperimentConfig, InitKind, ResultRow, RunOptions, SolverKind, SweepCell,
};
pub use lemma::{check_recursion_bound, convergence_order};
pub use problems::{
    all_problems, gaussian_wells, problem, problem_dims, PdeResidual, Phase2, ProblemCase, GP_BETA,
    PROBLEM_IDS, WELL_DEPTH, WELL_WIDTH,
};
pub use report::{emit_report, parse_report, ReportFormat};
