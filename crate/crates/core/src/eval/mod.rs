//! Error metrics, comparison experiments and report files.

mod grid;
mod metrics;
mod report;
mod sweep;

pub use grid::{
    plan_jobs, run_comparison_grid, score_job, CellKey, CellSummary, ExperimentGrid, GridOutput, GridSpec, Group, Job,
    JobOutput, MetricReport, TraceRow,
};
pub use metrics::{mae, mean_std, rmse, ErrorAccumulator};
pub use report::{
    clustered_groups, emit_report, markdown_report, markdown_table, read_grid_csv, read_runs_csv, read_trace_csv,
    trace_file_name, unclustered_groups, write_grid_csv, write_runs_csv, write_trace_csv, ReportFiles,
};
pub use sweep::{read_sweep_csv, run_window_sweep, sweep_markdown, write_sweep_csv, SweepSpec, WindowRow};

#[cfg(test)]
mod tests;
