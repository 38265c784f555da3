// Compares tape gradients of a small attention Seq2Seq with central finite
// differences.

use rand::Rng;
use tunnel_accel::clustering::DriverClass;
use tunnel_accel::nn::gradient_check;
use tunnel_accel::predictor::{Batch, EnvSpan, Mode, Model, ModelConfig, ModelKind, Normalizer, Sample};
use tunnel_accel::seed;

pub fn run_example() -> tunnel_accel::Result<()> {
    let mut rng = seed::rng(1);
    let samples: Vec<Sample> = (0..3)
        .map(|i| Sample {
            vehicle_id: format!("veh{i:05}"),
            class: Some(DriverClass::Moderate),
            anchor: 0,
            history: (0..8).map(|_| [rng.gen_range(18.0..30.0), rng.gen_range(-0.5..0.5)]).collect(),
            env: (0..8).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect(),
            target: (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        })
        .collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let config = ModelConfig { kind: ModelKind::Seq2Seq, history_len: 8, horizon: 3, hidden: 4, ..ModelConfig::default() };
    let model = Model::new(&config)?;
    let batch = Batch::from_samples(&refs, 3, true, EnvSpan::Prediction, &Normalizer::default())?;
    let check = gradient_check(&model.params, 1e-5, |g| {
        let mut r = seed::rng(2);
        let pred = model.forward(g, &batch, Mode::Train { rng: &mut r, teacher_forcing: 0.5 })?;
        let target = g.input(batch.target.clone().expect("training batch"))?;
        g.mse(pred, target)
    })?;
    println!(
        "{} parameters checked, max relative error {:.2e} ({})",
        check.checked, check.max_rel_error, check.worst_param
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> tunnel_accel::Result<()> {
    run_example()
}
