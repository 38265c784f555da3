// Trains the attention Seq2Seq with environmental input on one driver class,
// saves it and reloads it for prediction.

use std::collections::HashMap;

use tunnel_accel::clustering::DriverClass;
use tunnel_accel::env::EnvOptions;
use tunnel_accel::predictor::{
    build_samples, sample_mae, split_vehicles, train, Model, ModelConfig, ModelKind, Part, SampleOptions, SplitRatios,
    TrainConfig,
};
use tunnel_accel::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use tunnel_accel::trajectory::resample_to_grid;

pub fn run_example() -> tunnel_accel::Result<()> {
    let scenario = ScenarioSpec { n_vehicles: 120, duration: 300.0, seed: 21, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults())?;
    let profiles = pop.tracks.iter().map(|t| resample_to_grid(t, 1)).collect::<tunnel_accel::Result<Vec<_>>>()?;
    let classes: HashMap<String, DriverClass> =
        profiles.iter().zip(&pop.labels).map(|(p, l)| (p.vehicle_id.clone(), *l)).collect();
    let opts = SampleOptions {
        history_len: 40,
        max_horizon: 10,
        anchor_stride: 40,
        env_window_s: 60.0,
        warmup_s: 60.0,
        env: EnvOptions { min_support: 3, ..EnvOptions::default() },
        ..SampleOptions::default()
    };
    let samples = build_samples(&profiles, &classes, &opts)?;
    let ids: Vec<_> = profiles.iter().map(|p| (p.vehicle_id.clone(), classes.get(&p.vehicle_id).copied())).collect();
    let split = split_vehicles(&ids, &SplitRatios::default(), 21)?;
    let class = Some(DriverClass::Moderate);
    let (tr, va, te) =
        (split.select(&samples, Part::Train, class), split.select(&samples, Part::Val, class), split.select(&samples, Part::Test, class));
    println!("{} train, {} validation, {} test samples", tr.len(), va.len(), te.len());

    let config = ModelConfig { kind: ModelKind::Seq2Seq, history_len: 40, horizon: 10, hidden: 12, attn_width: 6, ..ModelConfig::default() };
    let tc = TrainConfig { max_epochs: 4, batch_size: 16, max_steps: Some(60), ..TrainConfig::default() };
    let (model, report) = train(&config, &tr, &va, &tc, 21)?;
    println!("{} steps, best validation MAE {:.4} m/s² at epoch {}", report.steps, report.best_val_mae, report.best_epoch);

    let path = std::env::temp_dir().join("tunnel-accel-example-seq2seq.model");
    model.save(&path)?;
    let reloaded = Model::load(&path)?;
    println!("test MAE {:.4} m/s² (reloaded {:.4})", sample_mae(&model, &te)?, sample_mae(&reloaded, &te)?);
    let first = reloaded.predict_samples(&te[..1], 10)?;
    println!("first test sample, predicted a over the next 10 m: {:.3?}", first[0]);
    std::fs::remove_file(&path).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
