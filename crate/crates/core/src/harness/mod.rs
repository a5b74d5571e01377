//! Experiment grid over models, strategies, privacy and data budgets and
//! folds, with relative deltas, aggregation and Pareto frontiers.

mod analysis;
mod grid;
mod records;
mod run;

pub use analysis::{
    dominates, pareto_frontier, pareto_indices, summarize, write_summary, Objectives, Stat, SummaryRow, SUMMARY_HEADER,
};
pub use grid::{anchor_key, GridSpec, ScoringMode};
pub use records::{
    append_results, delta_pct, read_results, write_results, CellKey, CellStrategy, ExperimentRecord, RESULTS_HEADER,
};
pub use run::{
    attack_runs_path, plan_units, prepare_folds, protect_unit, protected_train_set, read_attack_runs, run_grid, seeds,
    AttackRunRecord, ExperimentData, FoldContext, GridOutcome, Unit,
};
