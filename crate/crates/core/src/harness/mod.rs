//! Experiment orchestration: configuration, the (C/N0, N_SUP, λ, σ) grid with
//! seeded, resumable runs, cell statistics and report emission.

pub mod config;
pub mod grid;
pub mod report;
pub mod stats;

pub use config::{ExperimentConfig, Profile};
pub use grid::{
    cell_config_hash, load_table, plan_cells, prepare_data, run_cells, run_grid, run_seed, CellKey,
    CellStatistics, GridEvent, PreparedData, RunRecord,
};
pub use report::{best_pairs_report, emit_plot_data, write_report, BestPairs, Report};
pub use stats::{median, quartiles, Quartiles, QUANTILE_RULE};
