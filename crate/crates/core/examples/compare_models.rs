// Runs a small comparison grid of every model family against the pooled
// Seq2Seq and prints the markdown tables.

use std::collections::HashMap;

use tunnel_accel::clustering::DriverClass;
use tunnel_accel::env::EnvOptions;
use tunnel_accel::eval::{markdown_report, run_comparison_grid, GridSpec};
use tunnel_accel::predictor::{build_samples, split_vehicles, ModelConfig, SampleOptions, SplitRatios, TrainConfig};
use tunnel_accel::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let scenario = ScenarioSpec { n_vehicles: 90, duration: 300.0, seed: 4, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults())?;
    let profiles = pop.tracks.iter().map(|t| resample_to_grid(t, 1)).collect::<tunnel_accel::Result<Vec<_>>>()?;
    let classes: HashMap<String, DriverClass> =
        profiles.iter().zip(&pop.labels).map(|(p, l)| (p.vehicle_id.clone(), *l)).collect();
    let opts = SampleOptions {
        history_len: 20,
        max_horizon: 20,
        anchor_stride: 50,
        env_window_s: 60.0,
        warmup_s: 60.0,
        env: EnvOptions { min_support: 2, ..EnvOptions::default() },
        ..SampleOptions::default()
    };
    let samples = build_samples(&profiles, &classes, &opts)?;
    let ids: Vec<_> = profiles.iter().map(|p| (p.vehicle_id.clone(), classes.get(&p.vehicle_id).copied())).collect();
    let split = split_vehicles(&ids, &SplitRatios::default(), 4)?;

    let spec = GridSpec { horizons: vec![10, 20], seeds: 2, trace_vehicles: 0, ..GridSpec::default() };
    let template = ModelConfig { history_len: 20, hidden: 4, cnn_channels: 2, cnn_kernel: 3, cnn_stride: 1, ..ModelConfig::default() };
    let tc = TrainConfig { max_epochs: 1, max_steps: Some(5), batch_size: 16, ..TrainConfig::default() };
    let out = run_comparison_grid(&samples, &split, &spec, &template, &tc, 4)?;
    println!("{} per-seed reports, {} absent jobs", out.grid.reports.len(), out.failures.len());
    println!("{}", markdown_report(&out.grid.cells()));
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
