use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::{CellKey, CellSummary, GridOutput, Group, MetricReport, TraceRow};
use crate::clustering::DriverClass;
use crate::error::{Error, Result};
use crate::predictor::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellRow {
    model: String,
    class: String,
    horizon_m: usize,
    env: String,
    seed_count: usize,
    mae_mean: f64,
    mae_std: f64,
    rmse_mean: f64,
    rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunRow {
    model: String,
    class: String,
    horizon_m: usize,
    env: String,
    seed: u64,
    mae: f64,
    rmse: f64,
    m: usize,
}

fn env_code(env: bool) -> &'static str {
    if env {
        "Y"
    } else {
        "N"
    }
}

fn parse_env(s: &str) -> Result<bool> {
    match s {
        "Y" => Ok(true),
        "N" => Ok(false),
        other => Err(Error::validation(format!("env flag must be Y or N, got {other:?}"))),
    }
}

fn parse_key(model: &str, class: &str, horizon_m: usize, env: &str) -> Result<CellKey> {
    Ok(CellKey { model: model.parse()?, group: class.parse()?, horizon_m, env: parse_env(env)? })
}

pub fn write_grid_csv<W: Write>(writer: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if cells.is_empty() {
        w.write_record(["model", "class", "horizon_m", "env", "seed_count", "mae_mean", "mae_std", "rmse_mean", "rmse_std"])?;
    }
    for c in cells {
        w.serialize(CellRow {
            model: c.key.model.name().to_string(),
            class: c.key.group.code(),
            horizon_m: c.key.horizon_m,
            env: env_code(c.key.env).to_string(),
            seed_count: c.seed_count,
            mae_mean: c.mae_mean,
            mae_std: c.mae_std,
            rmse_mean: c.rmse_mean,
            rmse_std: c.rmse_std,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_grid_csv<R: Read>(reader: R) -> Result<Vec<CellSummary>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: CellRow = row?;
        out.push(CellSummary {
            key: parse_key(&row.model, &row.class, row.horizon_m, &row.env)?,
            seed_count: row.seed_count,
            mae_mean: row.mae_mean,
            mae_std: row.mae_std,
            rmse_mean: row.rmse_mean,
            rmse_std: row.rmse_std,
        });
    }
    Ok(out)
}

/// Per-seed results, one row per trained model and evaluation group.
pub fn write_runs_csv<W: Write>(writer: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if reports.is_empty() {
        w.write_record(["model", "class", "horizon_m", "env", "seed", "mae", "rmse", "m"])?;
    }
    for r in reports {
        w.serialize(RunRow {
            model: r.key.model.name().to_string(),
            class: r.key.group.code(),
            horizon_m: r.key.horizon_m,
            env: env_code(r.key.env).to_string(),
            seed: r.seed,
            mae: r.mae,
            rmse: r.rmse,
            m: r.m,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_runs_csv<R: Read>(reader: R) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: RunRow = row?;
        out.push(MetricReport {
            key: parse_key(&row.model, &row.class, row.horizon_m, &row.env)?,
            seed: row.seed,
            mae: row.mae,
            rmse: row.rmse,
            m: row.m,
        });
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["vehicle_id", "anchor_m", "offset_m", "y_true", "y_pred"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn trace_file_name(key: &CellKey) -> String {
    format!("trace_{}_{}_{}m_{}.csv", key.model.name(), key.group.code(), key.horizon_m, env_code(key.env))
}

fn horizons_of(cells: &[CellSummary]) -> Vec<usize> {
    let mut h: Vec<usize> = cells.iter().map(|c| c.key.horizon_m).collect();
    h.sort_unstable();
    h.dedup();
    if h.is_empty() {
        vec![10, 30, 50]
    } else {
        h
    }
}

/// Markdown table with one row per (group, model) and columns
/// horizon × metric × env.
pub fn markdown_table(cells: &[CellSummary], groups: &[Group]) -> String {
    let horizons = horizons_of(cells);
    let index: BTreeMap<CellKey, &CellSummary> = cells.iter().map(|c| (c.key, c)).collect();
    let mut header = String::from("| Class | Model |");
    let mut rule = String::from("|---|---|");
    for h in &horizons {
        for metric in ["MAE", "RMSE"] {
            for env in ["Y", "N"] {
                let _ = write!(header, " {h}m {metric} {env} |");
                rule.push_str("---|");
            }
        }
    }
    let mut out = format!("{header}\n{rule}\n");
    for &group in groups {
        for model in ModelKind::ALL {
            if !cells.iter().any(|c| c.key.group == group && c.key.model == model) {
                continue;
            }
            let _ = write!(out, "| {} | {} |", group.code(), model.name());
            for &h in &horizons {
                for metric in 0..2 {
                    for env in [true, false] {
                        let key = CellKey { model, group, horizon_m: h, env };
                        match index.get(&key) {
                            Some(c) => {
                                let (m, s) = if metric == 0 { (c.mae_mean, c.mae_std) } else { (c.rmse_mean, c.rmse_std) };
                                let _ = write!(out, " {m:.4} ± {s:.4} |");
                            }
                            None => out.push_str(" n/a |"),
                        }
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn clustered_groups() -> Vec<Group> {
    DriverClass::ALL.map(Group::Class).to_vec()
}

pub fn unclustered_groups() -> Vec<Group> {
    let mut g: Vec<Group> = DriverClass::ALL.map(Group::PooledOn).to_vec();
    g.push(Group::Pooled);
    g
}

/// Both comparison tables as one Markdown document.
pub fn markdown_report(cells: &[CellSummary]) -> String {
    let mut out = String::from("# Acceleration prediction error\n\n");
    out.push_str("Test-split MAE and RMSE in m/s², mean ± std over seeds.\n\n");
    out.push_str("## Clustered models\n\n");
    out.push_str(&markdown_table(cells, &clustered_groups()));
    out.push_str("\n## Unclustered model\n\n");
    out.push_str(&markdown_table(cells, &unclustered_groups()));
    out
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub grid_csv: PathBuf,
    pub runs_csv: PathBuf,
    pub markdown: PathBuf,
    pub traces: Vec<PathBuf>,
}

/// Writes `grid.csv`, `runs.csv`, `report.md` and `traces/` into `dir`.
pub fn emit_report(dir: &Path, output: &GridOutput) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cells = output.grid.cells();
    let grid_csv = dir.join("grid.csv");
    write_grid_csv(create(&grid_csv)?, &cells)?;
    let runs_csv = dir.join("runs.csv");
    write_runs_csv(create(&runs_csv)?, &output.grid.reports)?;
    let markdown = dir.join("report.md");
    let mut md = markdown_report(&cells);
    if !output.failures.is_empty() {
        md.push_str("\n## Absent cells\n\n");
        for f in &output.failures {
            let _ = writeln!(md, "- {f}");
        }
    }
    fs::write(&markdown, md).map_err(|e| Error::io(&markdown, e))?;
    let trace_dir = dir.join("traces");
    let mut traces = Vec::new();
    if !output.traces.is_empty() {
        fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    }
    for (key, rows) in &output.traces {
        let path = trace_dir.join(trace_file_name(key));
        write_trace_csv(create(&path)?, rows)?;
        traces.push(path);
    }
    Ok(ReportFiles { grid_csv, runs_csv, markdown, traces })
}
