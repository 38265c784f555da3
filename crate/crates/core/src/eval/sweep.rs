use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::metrics::{mean_std, ErrorAccumulator};
use crate::clustering::DriverClass;
use crate::error::{Error, Result};
use crate::predictor::{build_samples, split_vehicles, train, ModelConfig, Part, SampleOptions, SplitRatios, TrainConfig};
use crate::trajectory::SpatialProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Environmental window lengths, minutes.
    pub windows_min: Vec<f64>,
    pub horizon_m: usize,
    pub seeds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { windows_min: vec![1.0, 5.0, 10.0, 15.0, 20.0], horizon_m: 50, seeds: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_min: f64,
    pub seed_count: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

/// Retrains the pooled model once per window length and seed, scoring it
/// at `spec.horizon_m`. Every window uses the same vehicles: those that
/// enter after the longest window has filled.
#[allow(clippy::too_many_arguments)]
pub fn run_window_sweep(
    profiles: &[SpatialProfile],
    classes: &HashMap<String, DriverClass>,
    base: &SampleOptions,
    spec: &SweepSpec,
    template: &ModelConfig,
    tc: &TrainConfig,
    ratios: &SplitRatios,
    root_seed: u64,
) -> Result<Vec<WindowRow>> {
    if spec.windows_min.is_empty() || spec.seeds == 0 {
        return Err(Error::validation("window sweep needs at least one window and one seed"));
    }
    if spec.windows_min.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::validation("window lengths must be positive"));
    }
    if spec.horizon_m == 0 || spec.horizon_m > base.max_horizon {
        return Err(Error::validation(format!(
            "sweep horizon {} m outside 1..={} m",
            spec.horizon_m, base.max_horizon
        )));
    }
    let longest_s = spec.windows_min.iter().cloned().fold(0.0, f64::max) * 60.0;
    let warmup_s = base.warmup_s.max(longest_s);
    let last_entry = profiles.iter().map(|p| p.entry_time).fold(f64::NEG_INFINITY, f64::max);
    if !(last_entry > warmup_s) {
        return Err(Error::validation(format!(
            "population too short for a {:.0} min window: last entry at {last_entry:.0} s",
            longest_s / 60.0
        )));
    }
    let ids: Vec<(String, Option<DriverClass>)> = profiles
        .iter()
        .filter(|p| p.entry_time >= warmup_s)
        .map(|p| (p.vehicle_id.clone(), classes.get(&p.vehicle_id).copied()))
        .collect();
    let split = split_vehicles(&ids, ratios, root_seed)?;
    let config = ModelConfig { horizon: spec.horizon_m, use_env: true, ..template.clone() };
    let mut rows = Vec::new();
    for &w in &spec.windows_min {
        let opts = SampleOptions { env_window_s: w * 60.0, warmup_s, ..base.clone() };
        let samples = build_samples(profiles, classes, &opts)?;
        let tr = split.select(&samples, Part::Train, None);
        let va = split.select(&samples, Part::Val, None);
        let te = split.select(&samples, Part::Test, None);
        let mut maes = Vec::new();
        let mut rmses = Vec::new();
        for i in 0..spec.seeds {
            let (model, _) = train(&config, &tr, &va, tc, GridSpec::replicate_seed(root_seed, i))?;
            let preds = model.predict_samples(&te, spec.horizon_m)?;
            let mut acc = ErrorAccumulator::default();
            for (p, s) in preds.iter().zip(&te) {
                acc.add(&s.target[..spec.horizon_m], p)?;
            }
            maes.push(acc.mae()?);
            rmses.push(acc.rmse()?);
        }
        log::info!("window {w} min: MAE {:?}", maes);
        let (mae_mean, mae_std) = mean_std(&maes);
        let (rmse_mean, rmse_std) = mean_std(&rmses);
        rows.push(WindowRow { window_min: w, seed_count: spec.seeds, mae_mean, mae_std, rmse_mean, rmse_std });
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[WindowRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["window_min", "seed_count", "mae_mean", "mae_std", "rmse_mean", "rmse_std"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<WindowRow>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn sweep_markdown(rows: &[WindowRow]) -> String {
    let mut out = String::from("| Window (min) | MAE | RMSE |\n|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
            r.window_min, r.mae_mean, r.mae_std, r.rmse_mean, r.rmse_std
        ));
    }
    out
}
