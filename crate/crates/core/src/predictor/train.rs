use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::model::{Mode, Model, ModelConfig};
use super::task::{Batch, Normalizer};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Graph, OptimizerState};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub teacher_forcing: f64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            batch_size: 64,
            patience: 5,
            teacher_forcing: 0.5,
            max_steps: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("max_epochs and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(Error::validation("teacher_forcing must lie in [0, 1]"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    /// Validation MAE of the returned parameters, m/s².
    pub best_val_mae: f64,
    /// Mean training MSE (normalized units) per epoch.
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
}

/// MAE in m/s² of `model` on `samples` at its trained horizon.
pub fn sample_mae(model: &Model, samples: &[&Sample]) -> Result<f64> {
    let h = model.config.horizon;
    let preds = model.predict_samples(samples, h)?;
    let mut sum = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        sum += p.iter().zip(&s.target[..h]).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(sum / (samples.len() * h) as f64)
}

/// Mini-batch MSE training with early stopping on validation MAE. The
/// returned model holds the best-validation parameters. Initialization,
/// shuffling and dropout each draw from their own stream of `seed`.
pub fn train(
    config: &ModelConfig,
    train: &[&Sample],
    val: &[&Sample],
    tc: &TrainConfig,
    seed_: u64,
) -> Result<(Model, TrainReport)> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty training split"));
    }
    if val.is_empty() {
        return Err(Error::validation("empty validation split"));
    }
    let mut model = Model::new(&ModelConfig { seed: seed_, ..config.clone() })?;
    model.normalizer = Normalizer::fit(train)?;
    model.mark_fitted();
    let mut shuffle = seed::stream(seed_, "shuffle");
    let mut noise = seed::stream(seed_, "dropout");
    let mut opt = OptimizerState::new(&model.params, tc.adam);
    let (h, use_env, span) = (model.config.horizon, model.config.use_env, model.config.env_span);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport { best_val_mae: f64::INFINITY, ..TrainReport::default() };
    let mut best = model.params.clone();
    let mut since_best = 0;
    'epochs: for epoch in 0..tc.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(tc.batch_size) {
            if tc.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let samples: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let batch = Batch::from_samples(&samples, h, use_env, span, &model.normalizer)?;
            let grads = {
                let mut g = Graph::new(&model.params);
                let mode = Mode::Train { rng: &mut noise, teacher_forcing: tc.teacher_forcing };
                let pred = model.forward(&mut g, &batch, mode)?;
                let target = g.input(batch.target.clone().expect("training batch has targets"))?;
                let loss = g.mse(pred, target)?;
                loss_sum += g.value(loss)[[0, 0]];
                g.backward(loss)?
            };
            opt.step(&mut model.params, &grads)?;
            report.steps += 1;
            batches += 1;
        }
        if batches == 0 {
            break;
        }
        report.epochs = epoch + 1;
        report.train_loss.push(loss_sum / batches as f64);
        let mae = sample_mae(&model, val)?;
        report.val_mae.push(mae);
        if mae < report.best_val_mae {
            report.best_val_mae = mae;
            report.best_epoch = epoch + 1;
            best = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break 'epochs;
            }
        }
    }
    model.params = best;
    log::debug!(
        "trained {} h={} env={} seed={}: {} epochs, {} steps, best val MAE {:.5} at epoch {}",
        model.config.kind,
        h,
        use_env,
        seed_,
        report.epochs,
        report.steps,
        report.best_val_mae,
        report.best_epoch
    );
    Ok((model, report))
}
