//! Experiment harness: declarative configs, the method x ratio x seed matrix, the
//! rejection-cost sweep and figure data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, Preset};
pub use pipeline::{
    evaluate_checkpoint, generate, make_dataset, matrix_cells, prepare, run_cell, run_cells, run_matrix,
    solve_reference, sweep_rejection_cost, Cell, CellOutput, MatrixOutcome, Prepared, ReferenceCache,
    RunError, SweepRow,
};
pub use report::{collect_runs, emit_plot_data, summarize, PlotOutput};
