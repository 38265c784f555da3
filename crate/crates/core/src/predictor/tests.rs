use std::collections::{HashMap, HashSet};

use approx::assert_abs_diff_eq;
use rand::Rng as _;

use super::*;
use crate::clustering::DriverClass;
use crate::env::{EnvOptions, CHANNELS};
use crate::error::Error;
use crate::nn::{gradient_check, Graph};
use crate::seed;
use crate::synth::{generate_population, ArchetypeSpec, ScenarioSpec};
use crate::trajectory::resample_to_grid;

fn toy_samples(n: usize, history: usize, horizon: usize, seed_: u64) -> Vec<Sample> {
    let mut rng = seed::rng(seed_);
    (0..n)
        .map(|i| {
            let phase: f64 = rng.gen_range(0.0..6.0);
            let speed: f64 = rng.gen_range(20.0..28.0);
            let wave = |x: f64| 0.3 * (0.15 * x + phase).sin();
            Sample {
                vehicle_id: format!("veh{:05}", i / 3),
                class: Some(DriverClass::ALL[i % 3]),
                anchor: i as i64,
                history: (0..history).map(|k| [speed + wave(k as f64), wave(k as f64)]).collect(),
                env: (0..horizon.max(history))
                    .map(|k| std::array::from_fn(|c| wave((history + k) as f64) * (1.0 + c as f64 * 0.1)))
                    .collect(),
                target: (0..horizon).map(|k| wave((history + k) as f64)).collect(),
            }
        })
        .collect()
}

fn toy_config(kind: ModelKind, history: usize, horizon: usize, use_env: bool) -> ModelConfig {
    ModelConfig {
        kind,
        history_len: history,
        horizon,
        use_env,
        hidden: 4,
        dropout: 0.0,
        cnn_channels: 3,
        cnn_kernel: 3,
        cnn_stride: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_input_width_follows_env_toggle() {
    let samples = toy_samples(2, 100, 10, 1);
    for (use_env, width) in [(false, 2), (true, 4)] {
        let model = Model::new(&toy_config(ModelKind::Seq2Seq, 100, 10, use_env)).unwrap();
        let task = PredictionTask::from_sample(&samples[0], 10, use_env, EnvSpan::Prediction).unwrap();
        let x = model.assemble_input(&task).unwrap();
        assert_eq!(x.shape(), [100, width]);
    }
}

#[test]
fn identity_normalization_passes_standardized_input_through() {
    let samples = toy_samples(1, 8, 3, 2);
    let model = Model::new(&toy_config(ModelKind::Seq2Seq, 8, 3, false)).unwrap();
    assert_eq!(model.normalizer, Normalizer::default());
    let task = PredictionTask::from_sample(&samples[0], 3, false, EnvSpan::Prediction).unwrap();
    let x = model.assemble_input(&task).unwrap();
    for (i, row) in task.history.iter().enumerate() {
        assert_eq!(x[[i, 0]], row[0]);
        assert_eq!(x[[i, 1]], row[1]);
    }
}

#[test]
fn normalizer_standardizes_training_split() {
    let samples = toy_samples(30, 20, 5, 3);
    let refs: Vec<&Sample> = samples.iter().collect();
    let norm = Normalizer::fit(&refs).unwrap();
    for c in 0..2 {
        let z: Vec<f64> = samples.iter().flat_map(|s| s.history.iter().map(|r| norm.history(*r)[c])).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let std = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64).sqrt();
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-9, "std {std}");
    }
    for c in 0..CHANNELS {
        let z: Vec<f64> = samples.iter().flat_map(|s| s.env.iter().map(|r| norm.env(r)[c])).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-9);
    }
    assert!(matches!(Normalizer::fit(&[]), Err(Error::Validation(_))));
}

#[test]
fn split_is_per_vehicle_and_stratified() {
    let vehicles: Vec<(String, Option<DriverClass>)> =
        (0..300).map(|i| (format!("veh{i:05}"), Some(DriverClass::ALL[i % 3]))).collect();
    let split = split_vehicles(&vehicles, &SplitRatios::default(), 4).unwrap();
    assert_eq!(split.parts.len(), 300);
    assert_eq!(split.vehicles(Part::Train).len(), 210);
    assert_eq!(split.vehicles(Part::Test).len(), 60);
    assert_eq!(split.vehicles(Part::Val).len(), 30);
    let again = split_vehicles(&vehicles, &SplitRatios::default(), 4).unwrap();
    assert_eq!(split, again);

    let samples = toy_samples(90, 4, 2, 5);
    let ids: Vec<(String, Option<DriverClass>)> = samples.iter().map(|s| (s.vehicle_id.clone(), s.class)).collect();
    let split = split_vehicles(&ids, &SplitRatios::default(), 9).unwrap();
    let mut seen: HashMap<&str, Part> = HashMap::new();
    for part in [Part::Train, Part::Test, Part::Val] {
        for s in split.select(&samples, part, None) {
            if let Some(prev) = seen.insert(&s.vehicle_id, part) {
                assert_eq!(prev, part, "{} in two parts", s.vehicle_id);
            }
        }
    }

    let bad = SplitRatios { train: 0.7, test: 0.2, val: 0.2 };
    assert!(split_vehicles(&vehicles, &bad, 0).is_err());
}

#[test]
fn zeroed_alignment_matches_env_free_model() {
    let samples = toy_samples(4, 8, 3, 6);
    for kind in ModelKind::ALL {
        let mut with_env = Model::new(&toy_config(kind, 8, 3, true)).unwrap();
        let (w, b) = with_env.alignment().unwrap();
        with_env.params.get_mut(w).fill(0.0);
        with_env.params.get_mut(b).fill(0.0);
        let mut without = Model::new(&toy_config(kind, 8, 3, false)).unwrap();
        // Share every parameter; the env-on first layer keeps extra input
        // rows that only ever multiply the aligned features.
        for (i, (_, name, t)) in without.params.clone().iter().enumerate() {
            let src = with_env.params.get(with_env.params.find(name).unwrap());
            let dst = without.params.get_mut(crate::nn::ParamId(i));
            *dst = if src.shape() == t.shape() {
                src.clone()
            } else if kind == ModelKind::Ann || kind == ModelKind::Cnn {
                // Position-major inputs: keep the (v, a) rows of each position.
                let rows: Vec<usize> = (0..src.nrows()).filter(|r| r % 4 < 2).collect();
                src.select(ndarray::Axis(0), &rows)
            } else {
                src.slice(ndarray::s![0..t.nrows(), ..]).to_owned()
            };
        }
        with_env.mark_fitted();
        without.mark_fitted();
        for s in &samples {
            let on = with_env.predict(&PredictionTask::from_sample(s, 3, true, EnvSpan::Prediction).unwrap()).unwrap();
            let off = without.predict(&PredictionTask::from_sample(s, 3, false, EnvSpan::Prediction).unwrap()).unwrap();
            for (a, b) in on.iter().zip(&off) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn every_family_passes_gradient_check() {
    let samples = toy_samples(3, 8, 3, 7);
    let refs: Vec<&Sample> = samples.iter().collect();
    for kind in ModelKind::ALL {
        for use_env in [false, true] {
            let config = ModelConfig { dropout: 0.3, ..toy_config(kind, 8, 3, use_env) };
            let model = Model::new(&config).unwrap();
            let batch = Batch::from_samples(&refs, 3, use_env, EnvSpan::Prediction, &Normalizer::default()).unwrap();
            let report = gradient_check(&model.params, 1e-5, |g: &mut Graph| {
                let mut rng = seed::rng(99);
                let mode = Mode::Train { rng: &mut rng, teacher_forcing: 0.5 };
                let pred = model.forward(g, &batch, mode)?;
                let t = g.input(batch.target.clone().unwrap())?;
                g.mse(pred, t)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind} env={use_env}: {report:?}");
        }
    }
}

#[test]
fn ann_flattens_history() {
    let config = ModelConfig { kind: ModelKind::Ann, horizon: 10, use_env: false, ..ModelConfig::default() };
    let model = Model::new(&config).unwrap();
    assert_eq!(model.ann_input_width(), Some(200));
    let head = model.params.get(model.params.find("head.w").unwrap());
    assert_eq!(head.ncols(), 10);
}

#[test]
fn unknown_family_is_rejected() {
    assert!(matches!(build_model("transformer", &ModelConfig::default()), Err(Error::Validation(_))));
    assert_eq!(build_model("CNN", &ModelConfig::default()).unwrap().kind(), ModelKind::Cnn);
}

#[test]
fn unfit_model_refuses_to_predict() {
    let samples = toy_samples(1, 8, 3, 8);
    let model = Model::new(&toy_config(ModelKind::Rnn, 8, 3, false)).unwrap();
    let task = PredictionTask::from_sample(&samples[0], 3, false, EnvSpan::Prediction).unwrap();
    assert!(matches!(model.predict(&task), Err(Error::Validation(_))));
}

fn quick_train(kind: ModelKind, samples: &[Sample], horizon: usize, steps: usize, seed_: u64) -> (Model, TrainReport) {
    quick_train_hidden(kind, samples, horizon, steps, seed_, 8)
}

fn quick_train_hidden(
    kind: ModelKind,
    samples: &[Sample],
    horizon: usize,
    steps: usize,
    seed_: u64,
    hidden: usize,
) -> (Model, TrainReport) {
    let refs: Vec<&Sample> = samples.iter().collect();
    let config = ModelConfig { hidden, ..toy_config(kind, samples[0].history.len(), horizon, true) };
    let tc = TrainConfig {
        max_epochs: steps,
        batch_size: samples.len(),
        patience: steps,
        max_steps: Some(steps),
        adam: crate::nn::AdamConfig { lr: 1e-2, ..Default::default() },
        ..TrainConfig::default()
    };
    train(&config, &refs, &refs, &tc, seed_).unwrap()
}

#[test]
fn training_is_deterministic_per_seed() {
    let samples = toy_samples(6, 10, 4, 10);
    let (a, ra) = quick_train(ModelKind::Seq2Seq, &samples, 4, 20, 3);
    let (b, rb) = quick_train(ModelKind::Seq2Seq, &samples, 4, 20, 3);
    assert_eq!(a.params, b.params);
    assert_eq!(ra, rb);
    let (c, _) = quick_train(ModelKind::Seq2Seq, &samples, 4, 20, 4);
    assert_ne!(a.params, c.params);
}

#[test]
fn zero_targets_are_learned() {
    let mut samples = toy_samples(10, 10, 4, 11);
    for s in &mut samples {
        s.target.iter_mut().for_each(|t| *t = 0.0);
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let (model, _) = quick_train(ModelKind::Seq2Seq, &samples, 4, 400, 1);
    assert!(sample_mae(&model, &refs).unwrap() < 1e-3);
}

#[test]
fn every_family_overfits_ten_samples() {
    let samples = toy_samples(10, 20, 5, 12);
    let refs: Vec<&Sample> = samples.iter().collect();
    for kind in ModelKind::ALL {
        let (model, report) = quick_train_hidden(kind, &samples, 5, 5000, 2, 16);
        let mae = sample_mae(&model, &refs).unwrap();
        assert!(mae < 0.01, "{kind}: mae {mae} after {} steps", report.steps);
    }
}

#[test]
fn prediction_shape_determinism_and_history_sensitivity() {
    let samples = toy_samples(8, 12, 6, 13);
    let (model, _) = quick_train(ModelKind::Seq2Seq, &samples, 6, 100, 5);
    let task = PredictionTask::from_sample(&samples[0], 6, true, EnvSpan::Prediction).unwrap();
    let a = model.predict(&task).unwrap();
    assert_eq!(a.len(), 6);
    assert_eq!(a, model.predict(&task).unwrap());
    for row in 0..task.history.len() {
        let mut t = task.clone();
        t.history[row] = t.history[row].map(|v| v * 1.1);
        let b = model.predict(&t).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y), "row {row} has no influence");
    }
}

#[test]
fn env_free_model_predicts_shorter_horizons() {
    let samples = toy_samples(4, 12, 6, 14);
    let refs: Vec<&Sample> = samples.iter().collect();
    for kind in [ModelKind::Seq2Seq, ModelKind::Ann] {
        let config = toy_config(kind, 12, 6, false);
        let tc = TrainConfig { max_steps: Some(2), ..TrainConfig::default() };
        let (model, _) = train(&config, &refs, &refs, &tc, 0).unwrap();
        let full = model.predict(&PredictionTask::from_sample(&samples[0], 6, false, EnvSpan::Prediction).unwrap()).unwrap();
        let short = model.predict(&PredictionTask::from_sample(&samples[0], 3, false, EnvSpan::Prediction).unwrap()).unwrap();
        assert_eq!(short.len(), 3);
        for (a, b) in short.iter().zip(&full) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn model_file_round_trips() {
    let samples = toy_samples(4, 10, 4, 15);
    let (model, _) = quick_train(ModelKind::Cnn, &samples, 4, 5, 6);
    let bytes = model.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert!(matches!(Model::from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Format(_))));
}

#[test]
fn empty_splits_are_rejected() {
    let samples = toy_samples(2, 8, 3, 16);
    let refs: Vec<&Sample> = samples.iter().collect();
    let config = toy_config(ModelKind::Rnn, 8, 3, true);
    assert!(matches!(train(&config, &[], &refs, &TrainConfig::default(), 0), Err(Error::Validation(_))));
    assert!(matches!(train(&config, &refs, &[], &TrainConfig::default(), 0), Err(Error::Validation(_))));
}

#[test]
fn samples_from_generated_population_are_complete() {
    let scenario = ScenarioSpec { n_vehicles: 40, duration: 200.0, seed: 3, ..ScenarioSpec::default() };
    let pop = generate_population(&scenario, &ArchetypeSpec::calibrated_defaults()).unwrap();
    let profiles: Vec<_> = pop.tracks.iter().map(|t| resample_to_grid(t, 1).unwrap()).collect();
    let classes: HashMap<String, DriverClass> =
        profiles.iter().zip(&pop.labels).map(|(p, l)| (p.vehicle_id.clone(), *l)).collect();
    let opts = SampleOptions {
        anchor_stride: 50,
        env_window_s: 60.0,
        warmup_s: 60.0,
        env: EnvOptions { min_support: 3, ..EnvOptions::default() },
        ..SampleOptions::default()
    };
    let samples = build_samples(&profiles, &classes, &opts).unwrap();
    assert!(!samples.is_empty());
    let vehicles: HashSet<&str> = samples.iter().map(|s| s.vehicle_id.as_str()).collect();
    for p in &profiles {
        if vehicles.contains(p.vehicle_id.as_str()) {
            assert!(p.entry_time >= 60.0);
        }
    }
    for s in &samples {
        assert_eq!(s.history.len(), 100);
        assert_eq!(s.target.len(), 50);
        assert_eq!(s.env.len(), 50);
        assert!(s.class.is_some());
        assert_eq!((s.anchor - (-380 + 99)) % 50, 0);
    }
}
