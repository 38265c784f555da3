use serde::{Deserialize, Serialize};

use super::dataset::{EnvSpan, Sample};
use crate::clustering::DriverClass;
use crate::env::CHANNELS;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// One prediction request at an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTask {
    /// Raw `(v, a)` per meter over `(anchor - history_len, anchor]`.
    pub history: Vec<[f64; 2]>,
    /// Raw eight-channel percentile rows, `None` when env input is off.
    pub env: Option<Vec<[f64; CHANNELS]>>,
    pub horizon: usize,
    pub driver_class: Option<DriverClass>,
}

impl PredictionTask {
    /// Task at `horizon` from a stored sample.
    pub fn from_sample(sample: &Sample, horizon: usize, use_env: bool, span: EnvSpan) -> Result<Self> {
        if horizon == 0 || horizon > sample.target.len() {
            return Err(Error::validation(format!(
                "horizon {horizon} outside 1..={} for sample at {} m",
                sample.target.len(),
                sample.anchor
            )));
        }
        let env = use_env.then(|| match span {
            EnvSpan::Prediction => sample.env[..horizon].to_vec(),
            EnvSpan::History => sample.env.clone(),
        });
        Ok(PredictionTask { history: sample.history.clone(), env, horizon, driver_class: sample.class })
    }
}

/// Per-channel standardization constants fitted on a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// `(v, a)` of the individual history; targets share the `a` constants.
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub env_mean: [f64; CHANNELS],
    pub env_std: [f64; CHANNELS],
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer { mean: [0.0; 2], std: [1.0; 2], env_mean: [0.0; CHANNELS], env_std: [1.0; CHANNELS] }
    }
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

impl Normalizer {
    /// Population mean and standard deviation of every history and env
    /// channel over `samples`. Zero-variance channels keep a unit scale.
    pub fn fit(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("cannot fit normalization on an empty training split"));
        }
        let mut out = Normalizer::default();
        for c in 0..2 {
            let col: Vec<f64> = samples.iter().flat_map(|s| s.history.iter().map(move |r| r[c])).collect();
            (out.mean[c], out.std[c]) = mean_std(col.iter());
        }
        for c in 0..CHANNELS {
            let col: Vec<f64> = samples.iter().flat_map(|s| s.env.iter().map(move |r| r[c])).collect();
            (out.env_mean[c], out.env_std[c]) = mean_std(col.iter());
        }
        Ok(out)
    }

    pub fn history(&self, row: [f64; 2]) -> [f64; 2] {
        [(row[0] - self.mean[0]) / self.std[0], (row[1] - self.mean[1]) / self.std[1]]
    }

    pub fn env(&self, row: &[f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|c| (row[c] - self.env_mean[c]) / self.env_std[c])
    }

    pub fn accel(&self, a: f64) -> f64 {
        (a - self.mean[1]) / self.std[1]
    }

    pub fn denorm_accel(&self, z: f64) -> f64 {
        z * self.std[1] + self.mean[1]
    }

    pub(crate) fn to_row(self) -> Mat {
        let mut v = Vec::with_capacity(4 + 2 * CHANNELS);
        v.extend(self.mean);
        v.extend(self.std);
        v.extend(self.env_mean);
        v.extend(self.env_std);
        Mat::from_shape_vec((1, v.len()), v).expect("fixed length")
    }

    pub(crate) fn from_row(m: &Mat) -> Result<Self> {
        if m.shape() != [1, 4 + 2 * CHANNELS] {
            return Err(Error::Format(format!("normalizer tensor has shape {:?}", m.shape())));
        }
        let r = m.as_slice().expect("row-major");
        Ok(Normalizer {
            mean: [r[0], r[1]],
            std: [r[2], r[3]],
            env_mean: std::array::from_fn(|c| r[4 + c]),
            env_std: std::array::from_fn(|c| r[4 + CHANNELS + c]),
        })
    }
}

/// Normalized inputs for a batch of tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `batch x (history_len * 2)`, position-major `(v, a)`.
    pub history: Mat,
    /// `batch x (env_rows * 8)`, position-major.
    pub env: Option<Mat>,
    /// `batch x horizon` normalized targets, when known.
    pub target: Option<Mat>,
    pub horizon: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.history.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_tasks(tasks: &[&PredictionTask], norm: &Normalizer) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::validation("empty batch"))?;
        let (l, horizon) = (first.history.len(), first.horizon);
        let env_rows = first.env.as_ref().map(Vec::len);
        let mut history = Mat::zeros((tasks.len(), l * 2));
        let mut env = env_rows.map(|r| Mat::zeros((tasks.len(), r * CHANNELS)));
        for (b, t) in tasks.iter().enumerate() {
            if t.history.len() != l || t.horizon != horizon || t.env.as_ref().map(Vec::len) != env_rows {
                return Err(Error::validation("tasks in one batch must share history, horizon and env shape"));
            }
            for (i, row) in t.history.iter().enumerate() {
                let z = norm.history(*row);
                history[[b, 2 * i]] = z[0];
                history[[b, 2 * i + 1]] = z[1];
            }
            if let (Some(m), Some(rows)) = (env.as_mut(), t.env.as_ref()) {
                for (i, row) in rows.iter().enumerate() {
                    for (c, z) in norm.env(row).into_iter().enumerate() {
                        m[[b, i * CHANNELS + c]] = z;
                    }
                }
            }
        }
        Ok(Batch { history, env, target: None, horizon })
    }

    /// Batch at `horizon` with normalized targets.
    pub fn from_samples(
        samples: &[&Sample],
        horizon: usize,
        use_env: bool,
        span: EnvSpan,
        norm: &Normalizer,
    ) -> Result<Self> {
        let tasks: Vec<PredictionTask> = samples
            .iter()
            .map(|s| PredictionTask::from_sample(s, horizon, use_env, span))
            .collect::<Result<_>>()?;
        let refs: Vec<&PredictionTask> = tasks.iter().collect();
        let mut batch = Batch::from_tasks(&refs, norm)?;
        let mut target = Mat::zeros((samples.len(), horizon));
        for (b, s) in samples.iter().enumerate() {
            for k in 0..horizon {
                target[[b, k]] = norm.accel(s.target[k]);
            }
        }
        batch.target = Some(target);
        Ok(batch)
    }
}
