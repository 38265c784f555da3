use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::clustering::DriverClass;
use crate::env::EnvOptions;
use crate::predictor::{
    build_samples, split_vehicles, ModelConfig, ModelKind, SampleOptions, SplitRatios, TrainConfig,
};
use crate::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use crate::trajectory::resample_to_grid;

#[test]
fn perfect_prediction_has_zero_error() {
    let y = [0.3, -1.2, 0.0, 4.5];
    assert_eq!(mae(&y, &y).unwrap(), 0.0);
    assert_eq!(rmse(&y, &y).unwrap(), 0.0);
}

#[test]
fn symmetric_errors_give_unit_mae_and_rmse() {
    assert_abs_diff_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0, epsilon = 1e-15);
}

#[test]
fn one_sided_error_separates_rmse_from_mae() {
    assert_abs_diff_eq!(mae(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(rmse(&[0.0, 0.0], &[0.0, 2.0]).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
}

#[test]
fn metrics_reject_bad_lengths() {
    assert!(mae(&[], &[]).is_err());
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    let mut acc = ErrorAccumulator::default();
    assert!(acc.mae().is_err());
    assert!(acc.add(&[1.0], &[]).is_err());
}

#[test]
fn accumulator_matches_flat_metrics() {
    let y = [0.1, 0.5, -0.3, 0.0, 0.8];
    let p = [0.0, 0.7, -0.1, 0.2, 0.1];
    let mut acc = ErrorAccumulator::default();
    acc.add(&y[..2], &p[..2]).unwrap();
    acc.add(&y[2..], &p[2..]).unwrap();
    assert_eq!(acc.count(), 5);
    assert_abs_diff_eq!(acc.mae().unwrap(), mae(&y, &p).unwrap(), epsilon = 1e-15);
    assert_abs_diff_eq!(acc.rmse().unwrap(), rmse(&y, &p).unwrap(), epsilon = 1e-15);
}

proptest! {
    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mae(&y, &p).unwrap();
        let r = rmse(&y, &p).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!(r >= m - 1e-12);
    }

    #[test]
    fn metrics_ignore_pair_order(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60), rot in 0usize..60) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let (ys, ps): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        prop_assert!((mae(&y, &p).unwrap() - mae(&ys, &ps).unwrap()).abs() < 1e-12);
        prop_assert!((rmse(&y, &p).unwrap() - rmse(&ys, &ps).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn mean_std_uses_sample_deviation() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_abs_diff_eq!(m, 2.5, epsilon = 1e-15);
    assert_abs_diff_eq!(s, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    assert!(mean_std(&[]).0.is_nan());
}

fn key(model: ModelKind, group: Group, horizon_m: usize, env: bool) -> CellKey {
    CellKey { model, group, horizon_m, env }
}

fn synthetic_grid() -> ExperimentGrid {
    let mut reports = Vec::new();
    let mut v = 0.013;
    for model in [ModelKind::Seq2Seq, ModelKind::Cnn] {
        for group in [Group::Class(DriverClass::Conservative), Group::Pooled, Group::PooledOn(DriverClass::Aggressive)] {
            for h in [10, 50] {
                for env in [true, false] {
                    for seed in 0..5u64 {
                        v = (v * 7.31 + 0.0173) % 0.9;
                        reports.push(MetricReport {
                            key: key(model, group, h, env),
                            seed,
                            mae: v,
                            rmse: v * 1.3 + 0.001,
                            m: 100 * h,
                        });
                    }
                }
            }
        }
    }
    ExperimentGrid { reports }
}

#[test]
fn cell_mean_is_arithmetic_mean_of_seeds() {
    let grid = synthetic_grid();
    let cells = grid.cells();
    assert_eq!(cells.len(), 2 * 3 * 2 * 2);
    for c in &cells {
        let vals: Vec<f64> = grid.reports.iter().filter(|r| r.key == c.key).map(|r| r.mae).collect();
        assert_eq!(c.seed_count, 5);
        let direct = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((c.mae_mean - direct).abs() <= 1e-12);
    }
}

#[test]
fn cells_sort_env_yes_before_no() {
    let cells = synthetic_grid().cells();
    assert_eq!(cells[0].key, key(ModelKind::Seq2Seq, Group::Class(DriverClass::Conservative), 10, true));
    assert_eq!(cells[1].key, key(ModelKind::Seq2Seq, Group::Class(DriverClass::Conservative), 10, false));
}

#[test]
fn group_codes_parse_back() {
    for g in [
        Group::Class(DriverClass::Moderate),
        Group::Pooled,
        Group::PooledOn(DriverClass::Conservative),
        Group::PooledOn(DriverClass::Aggressive),
    ] {
        assert_eq!(g.code().parse::<Group>().unwrap(), g);
    }
    assert_eq!(Group::Pooled.code(), "U");
    assert_eq!(Group::PooledOn(DriverClass::Moderate).code(), "U-M");
    assert!("X".parse::<Group>().is_err());
}

#[test]
fn grid_csv_round_trips_exactly() {
    let cells = synthetic_grid().cells();
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &cells).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("model,class,horizon_m,env,seed_count,mae_mean,mae_std,rmse_mean,rmse_std\n"));
    assert_eq!(text.lines().count(), cells.len() + 1);
    assert_eq!(read_grid_csv(buf.as_slice()).unwrap(), cells);
}

#[test]
fn runs_csv_round_trips_exactly() {
    let grid = synthetic_grid();
    let mut buf = Vec::new();
    write_runs_csv(&mut buf, &grid.reports).unwrap();
    let back = read_runs_csv(buf.as_slice()).unwrap();
    assert_eq!(back, grid.reports);
    assert_eq!(ExperimentGrid { reports: back }.cells(), grid.cells());
}

#[test]
fn empty_grid_writes_headers_only() {
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    let md = markdown_table(&[], &clustered_groups());
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("10m MAE Y") && lines[0].contains("50m RMSE N"));
}

#[test]
fn markdown_header_orders_horizon_metric_env() {
    let md = markdown_table(&[], &clustered_groups());
    let header: Vec<&str> = md.lines().next().unwrap().split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
    let expect: Vec<String> = [10, 30, 50]
        .iter()
        .flat_map(|h| ["MAE", "RMSE"].into_iter().flat_map(move |m| ["Y", "N"].into_iter().map(move |e| format!("{h}m {m} {e}"))))
        .collect();
    assert_eq!(&header[2..], expect.iter().map(String::as_str).collect::<Vec<_>>().as_slice());
}

#[test]
fn markdown_marks_absent_cells() {
    let mut grid = synthetic_grid();
    let mut extra = grid.reports[0];
    extra.key.horizon_m = 30;
    grid.reports.push(extra);
    let md = markdown_report(&grid.cells());
    assert!(md.contains("| C | seq2seq |"));
    assert!(md.contains("n/a"));
    assert!(!md.contains('\u{2014}'));
}

#[test]
fn trace_csv_round_trips() {
    let rows = vec![
        TraceRow { vehicle_id: "veh00001".into(), anchor_m: -281, offset_m: 1, y_true: 0.25, y_pred: 0.125 },
        TraceRow { vehicle_id: "veh00001".into(), anchor_m: -281, offset_m: 2, y_true: -0.5, y_pred: 0.0 },
    ];
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &rows).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("vehicle_id,anchor_m,offset_m,y_true,y_pred\n"));
    assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn full_grid_plan_has_every_cell() {
    let spec = GridSpec::default();
    let jobs = plan_jobs(&spec, 1);
    // Pooled jobs score four groups each: U and U restricted to each class.
    let class_jobs = jobs.iter().filter(|j| j.class.is_some()).count();
    let pooled_jobs = jobs.len() - class_jobs;
    assert_eq!(class_jobs / spec.seeds, 5 * 3 * 3 * 2);
    assert_eq!((class_jobs + 4 * pooled_jobs) / spec.seeds, 5 * 7 * 3 * 2);
    let seeds: std::collections::BTreeSet<u64> = jobs.iter().map(|j| j.seed).collect();
    assert_eq!(seeds.len(), 5);
}

#[test]
fn grid_spec_validation() {
    assert!(GridSpec { horizons: vec![], ..GridSpec::default() }.validate().is_err());
    assert!(GridSpec { seeds: 0, ..GridSpec::default() }.validate().is_err());
    assert!(GridSpec { classes: false, pooled: false, ..GridSpec::default() }.validate().is_err());
    assert!(GridSpec::default().validate().is_ok());
}

struct Tiny {
    profiles: Vec<crate::trajectory::SpatialProfile>,
    classes: HashMap<String, DriverClass>,
    opts: SampleOptions,
}

fn tiny_population() -> Tiny {
    let scenario = ScenarioSpec { n_vehicles: 90, duration: 240.0, seed: 5, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults()).unwrap();
    let profiles: Vec<_> = pop.tracks.iter().map(|t| resample_to_grid(t, 1).unwrap()).collect();
    let classes = profiles.iter().zip(&pop.labels).map(|(p, l)| (p.vehicle_id.clone(), *l)).collect();
    let opts = SampleOptions {
        history_len: 20,
        max_horizon: 10,
        anchor_stride: 60,
        env_window_s: 60.0,
        warmup_s: 60.0,
        env: EnvOptions { min_support: 2, ..EnvOptions::default() },
        ..SampleOptions::default()
    };
    Tiny { profiles, classes, opts }
}

fn tiny_model() -> (ModelConfig, TrainConfig) {
    let mc = ModelConfig { history_len: 20, horizon: 10, hidden: 3, cnn_channels: 2, cnn_kernel: 3, cnn_stride: 1, ..ModelConfig::default() };
    let tc = TrainConfig { max_epochs: 1, max_steps: Some(2), batch_size: 16, ..TrainConfig::default() };
    (mc, tc)
}

#[test]
fn small_grid_runs_reports_and_emits_files() {
    let t = tiny_population();
    let samples = build_samples(&t.profiles, &t.classes, &t.opts).unwrap();
    let ids: Vec<_> = t.profiles.iter().map(|p| (p.vehicle_id.clone(), t.classes.get(&p.vehicle_id).copied())).collect();
    let split = split_vehicles(&ids, &SplitRatios::default(), 2).unwrap();
    let (mc, tc) = tiny_model();
    let spec = GridSpec {
        models: vec![ModelKind::Seq2Seq, ModelKind::Ann],
        horizons: vec![5, 10],
        env: vec![true, false],
        seeds: 2,
        trace_vehicles: 1,
        ..GridSpec::default()
    };
    let out = run_comparison_grid(&samples, &split, &spec, &mc, &tc, 9).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let cells = out.grid.cells();
    assert_eq!(cells.len(), 2 * 7 * 2 * 2);
    for c in &cells {
        assert_eq!(c.seed_count, 2);
        assert!(c.rmse_mean >= c.mae_mean);
    }
    for r in &out.grid.reports {
        assert_eq!(r.m % r.key.horizon_m, 0);
    }
    let again = run_comparison_grid(&samples, &split, &spec, &mc, &tc, 9).unwrap();
    assert_eq!(again.grid, out.grid);

    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(dir.path(), &out).unwrap();
    let parsed = read_grid_csv(std::fs::File::open(&files.grid_csv).unwrap()).unwrap();
    assert_eq!(parsed, cells);
    assert_eq!(files.traces.len(), cells.len());
    let trace = read_trace_csv(std::fs::File::open(&files.traces[0]).unwrap()).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.iter().all(|r| r.offset_m >= 1));
}

#[test]
fn failing_cells_are_reported_absent() {
    let t = tiny_population();
    let samples = build_samples(&t.profiles, &t.classes, &t.opts).unwrap();
    let ids: Vec<_> = t.profiles.iter().map(|p| (p.vehicle_id.clone(), t.classes.get(&p.vehicle_id).copied())).collect();
    let split = split_vehicles(&ids, &SplitRatios::default(), 2).unwrap();
    let (mc, tc) = tiny_model();
    // Horizon 20 exceeds the stored targets, so every job fails.
    let spec = GridSpec { models: vec![ModelKind::Ann], horizons: vec![20], env: vec![false], seeds: 1, ..GridSpec::default() };
    let out = run_comparison_grid(&samples, &split, &spec, &mc, &tc, 9).unwrap();
    assert!(out.grid.cells().is_empty());
    assert_eq!(out.failures.len(), 4);
}

#[test]
fn window_sweep_has_one_row_per_window() {
    let t = tiny_population();
    let (mc, tc) = tiny_model();
    let spec = SweepSpec { windows_min: vec![0.5, 1.0], horizon_m: 10, seeds: 2 };
    let rows = run_window_sweep(&t.profiles, &t.classes, &t.opts, &spec, &mc, &tc, &SplitRatios::default(), 4).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].window_min, 0.5);
    assert!(rows.iter().all(|r| r.seed_count == 2 && r.rmse_mean >= r.mae_mean));
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn window_sweep_rejects_short_population() {
    let t = tiny_population();
    let (mc, tc) = tiny_model();
    let spec = SweepSpec { windows_min: vec![1.0, 10.0], horizon_m: 10, seeds: 1 };
    let err = run_window_sweep(&t.profiles, &t.classes, &t.opts, &spec, &mc, &tc, &SplitRatios::default(), 4);
    assert!(matches!(err, Err(crate::Error::Validation(_))));
}
