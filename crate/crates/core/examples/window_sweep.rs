// Measures how the environmental window length affects Seq2Seq error.

use std::collections::HashMap;

use tunnel_accel::clustering::DriverClass;
use tunnel_accel::env::EnvOptions;
use tunnel_accel::eval::{run_window_sweep, sweep_markdown, SweepSpec};
use tunnel_accel::predictor::{ModelConfig, SampleOptions, SplitRatios, TrainConfig};
use tunnel_accel::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let scenario = ScenarioSpec { n_vehicles: 90, duration: 300.0, seed: 6, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults())?;
    let profiles = pop.tracks.iter().map(|t| resample_to_grid(t, 1)).collect::<tunnel_accel::Result<Vec<_>>>()?;
    let classes: HashMap<String, DriverClass> =
        profiles.iter().zip(&pop.labels).map(|(p, l)| (p.vehicle_id.clone(), *l)).collect();
    let base = SampleOptions {
        history_len: 20,
        max_horizon: 10,
        anchor_stride: 50,
        warmup_s: 60.0,
        env: EnvOptions { min_support: 2, ..EnvOptions::default() },
        ..SampleOptions::default()
    };
    let spec = SweepSpec { windows_min: vec![0.5, 1.0, 2.0], horizon_m: 10, seeds: 2 };
    let template = ModelConfig { history_len: 20, hidden: 4, ..ModelConfig::default() };
    let tc = TrainConfig { max_epochs: 1, max_steps: Some(5), batch_size: 16, ..TrainConfig::default() };
    let rows = run_window_sweep(&profiles, &classes, &base, &spec, &template, &tc, &SplitRatios::default(), 6)?;
    println!("{}", sweep_markdown(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
