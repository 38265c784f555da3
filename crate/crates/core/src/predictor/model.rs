use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::{EnvSpan, Sample};
use super::task::{Batch, Normalizer, PredictionTask};
use crate::env::CHANNELS;
use crate::error::{Error, Result};
use crate::nn::{
    self, dropout_node, AttentionParams, BiLstm, Conv1d, Graph, Linear, LstmCellParams, LstmState, Mat, NodeId,
    ParamSet, RnnCell,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Seq2Seq,
    BiLstm,
    Rnn,
    Ann,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Seq2Seq, ModelKind::BiLstm, ModelKind::Rnn, ModelKind::Ann, ModelKind::Cnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::BiLstm => "bilstm",
            ModelKind::Rnn => "rnn",
            ModelKind::Ann => "ann",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown model kind {s:?} (expected seq2seq, bilstm, rnn, ann or cnn)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub history_len: usize,
    pub horizon: usize,
    pub use_env: bool,
    pub env_span: EnvSpan,
    pub hidden: usize,
    /// Per-position width of the aligned environmental features.
    pub align_width: usize,
    /// Width of the attention score layer; 0 means `hidden`.
    pub attn_width: usize,
    pub dropout: f64,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub cnn_stride: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Seq2Seq,
            history_len: 100,
            horizon: 50,
            use_env: true,
            env_span: EnvSpan::Prediction,
            hidden: 64,
            align_width: 2,
            attn_width: 0,
            dropout: 0.2,
            cnn_channels: 16,
            cnn_kernel: 5,
            cnn_stride: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn env_rows(&self) -> usize {
        match self.env_span {
            EnvSpan::Prediction => self.horizon,
            EnvSpan::History => self.history_len,
        }
    }

    /// Per-step width of the encoder input.
    pub fn input_width(&self) -> usize {
        2 + if self.use_env { self.align_width } else { 0 }
    }

    fn cnn_lengths(&self) -> (usize, usize) {
        let out = |len: usize| if len < self.cnn_kernel { 0 } else { (len - self.cnn_kernel) / self.cnn_stride + 1 };
        let l1 = out(self.history_len);
        (l1, out(l1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(Error::validation("history_len, horizon and hidden must be positive"));
        }
        if self.use_env && self.align_width == 0 {
            return Err(Error::validation("align_width must be positive when env input is on"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.kind == ModelKind::Cnn {
            if self.cnn_channels == 0 || self.cnn_kernel == 0 || self.cnn_stride == 0 {
                return Err(Error::validation("cnn channels, kernel and stride must be positive"));
            }
            if self.cnn_lengths().1 == 0 {
                return Err(Error::validation(format!(
                    "history of {} m too short for two convolutions with kernel {} stride {}",
                    self.history_len, self.cnn_kernel, self.cnn_stride
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Seq2Seq { encoder: LstmCellParams, attention: AttentionParams, decoder: LstmCellParams, head: Linear },
    BiLstm { encoder: BiLstm, head: Linear },
    Rnn { encoder: RnnCell, head: Linear },
    Ann { hidden: Linear, head: Linear },
    Cnn { conv1: Conv1d, conv2: Conv1d, head: Linear },
}

/// Forward-pass mode.
pub enum Mode<'a> {
    Infer,
    /// Dropout on; each decoder step feeds the true previous target with
    /// probability `teacher_forcing`.
    Train { rng: &'a mut seed::Rng, teacher_forcing: f64 },
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut seed::Rng> {
        match self {
            Mode::Infer => None,
            Mode::Train { rng, .. } => Some(rng),
        }
    }
}

/// A predictor of any family plus its normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub normalizer: Normalizer,
    align: Option<Linear>,
    arch: Arch,
    fitted: bool,
}

/// Builds an untrained model of the named family.
pub fn build_model(kind: &str, config: &ModelConfig) -> Result<Model> {
    let kind: ModelKind = kind.parse()?;
    Model::new(&ModelConfig { kind, ..config.clone() })
}

impl Model {
    /// Fresh parameters drawn from the `init` stream of `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(config.seed, "init");
        let mut p = ParamSet::new();
        let c = config;
        let l = c.history_len;
        let w = c.input_width();
        let align = c
            .use_env
            .then(|| Linear::new(&mut p, "align", c.env_rows() * CHANNELS, l * c.align_width, &mut rng));
        let arch = match c.kind {
            ModelKind::Seq2Seq => {
                let encoder = LstmCellParams::new(&mut p, "encoder", w, c.hidden, &mut rng);
                let width = if c.attn_width == 0 { c.hidden } else { c.attn_width };
                let attention = AttentionParams::new(&mut p, "attention", c.hidden, c.hidden, width, &mut rng);
                let decoder = LstmCellParams::new(&mut p, "decoder", 1 + c.hidden, c.hidden, &mut rng);
                let head = Linear::new(&mut p, "head", 2 * c.hidden, 1, &mut rng);
                Arch::Seq2Seq { encoder, attention, decoder, head }
            }
            ModelKind::BiLstm => {
                let encoder = BiLstm::new(&mut p, "encoder", w, c.hidden, &mut rng);
                let head = Linear::new(&mut p, "head", 2 * c.hidden, c.horizon, &mut rng);
                Arch::BiLstm { encoder, head }
            }
            ModelKind::Rnn => {
                let encoder = RnnCell::new(&mut p, "encoder", w, c.hidden, &mut rng);
                let head = Linear::new(&mut p, "head", c.hidden, c.horizon, &mut rng);
                Arch::Rnn { encoder, head }
            }
            ModelKind::Ann => {
                let hidden = Linear::new(&mut p, "hidden", l * w, c.hidden, &mut rng);
                let head = Linear::new(&mut p, "head", c.hidden, c.horizon, &mut rng);
                Arch::Ann { hidden, head }
            }
            ModelKind::Cnn => {
                let conv1 = Conv1d::new(&mut p, "conv1", w, c.cnn_channels, c.cnn_kernel, c.cnn_stride, &mut rng);
                let conv2 =
                    Conv1d::new(&mut p, "conv2", c.cnn_channels, c.cnn_channels, c.cnn_kernel, c.cnn_stride, &mut rng);
                let (_, l2) = c.cnn_lengths();
                let head = Linear::new(&mut p, "head", l2 * c.cnn_channels, c.horizon, &mut rng);
                Arch::Cnn { conv1, conv2, head }
            }
        };
        Ok(Model { config: config.clone(), params: p, normalizer: Normalizer::default(), align, arch, fitted: false })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub(crate) fn mark_fitted(&mut self) {
        self.fitted = true;
    }

    /// Width of the first dense layer of the ANN; `None` for other families.
    pub fn ann_input_width(&self) -> Option<usize> {
        match &self.arch {
            Arch::Ann { hidden, .. } => Some(hidden.inputs),
            _ => None,
        }
    }

    /// Parameter id of the alignment layer weights and bias.
    pub fn alignment(&self) -> Option<(nn::ParamId, nn::ParamId)> {
        self.align.map(|a| (a.w, a.b))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let c = &self.config;
        if batch.history.ncols() != c.history_len * 2 {
            return Err(Error::validation(format!(
                "history has {} rows, model expects {}",
                batch.history.ncols() / 2,
                c.history_len
            )));
        }
        if batch.horizon == 0 || batch.horizon > c.horizon {
            return Err(Error::validation(format!(
                "requested horizon {} outside 1..={} of the trained model",
                batch.horizon, c.horizon
            )));
        }
        match (&batch.env, c.use_env) {
            (Some(env), true) if env.ncols() != c.env_rows() * CHANNELS => Err(Error::validation(format!(
                "env input has {} rows, model expects {} (env-on models predict their trained horizon only)",
                env.ncols() / CHANNELS,
                c.env_rows()
            ))),
            (None, true) => Err(Error::validation("model uses env input but the task has none")),
            (Some(_), false) => Err(Error::validation("task carries env input but the model has env input off")),
            _ => Ok(()),
        }
    }

    /// Per-position encoder inputs: normalized `(v, a)` followed, when env
    /// input is on, by the aligned environmental features of that position.
    fn encoder_inputs(&self, g: &mut Graph, batch: &Batch) -> Result<(Vec<NodeId>, NodeId)> {
        let l = self.config.history_len;
        let hist = g.input(batch.history.clone())?;
        let aligned = match (&self.align, &batch.env) {
            (Some(lin), Some(env)) => {
                let e = g.input(env.clone())?;
                Some(lin.forward(g, e)?)
            }
            _ => None,
        };
        let aw = self.config.align_width;
        let mut xs = Vec::with_capacity(l);
        for t in 0..l {
            let h = g.slice_cols(hist, 2 * t, 2 * t + 2)?;
            xs.push(match aligned {
                Some(al) => {
                    let a = g.slice_cols(al, aw * t, aw * (t + 1))?;
                    g.concat(&[h, a])?
                }
                None => h,
            });
        }
        let last_accel = g.slice_cols(hist, 2 * l - 1, 2 * l)?;
        Ok((xs, last_accel))
    }

    /// Records the forward pass; returns normalized predictions,
    /// `batch x batch.horizon`.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, mut mode: Mode) -> Result<NodeId> {
        self.check_batch(batch)?;
        let rate = self.config.dropout;
        let (xs, last_accel) = self.encoder_inputs(g, batch)?;
        let summary = match &self.arch {
            Arch::Seq2Seq { encoder, attention, decoder, head } => {
                return self.seq2seq(g, batch, mode, &xs, last_accel, (encoder, attention, decoder, head));
            }
            Arch::BiLstm { encoder, .. } => encoder.encode(g, &xs)?,
            Arch::Rnn { encoder, .. } => encoder.encode(g, &xs)?,
            Arch::Ann { hidden, .. } => {
                let flat = g.concat(&xs)?;
                let h = hidden.forward(g, flat)?;
                g.relu(h)?
            }
            Arch::Cnn { conv1, conv2, .. } => {
                let flat = g.concat(&xs)?;
                let h = conv1.forward(g, flat)?;
                let h = g.relu(h)?;
                let h = conv2.forward(g, h)?;
                g.relu(h)?
            }
        };
        let summary = dropout_node(g, summary, rate, mode.rng())?;
        let head = match &self.arch {
            Arch::BiLstm { head, .. } | Arch::Rnn { head, .. } | Arch::Ann { head, .. } | Arch::Cnn { head, .. } => head,
            Arch::Seq2Seq { .. } => unreachable!(),
        };
        let out = head.forward(g, summary)?;
        if batch.horizon == self.config.horizon {
            Ok(out)
        } else {
            g.slice_cols(out, 0, batch.horizon)
        }
    }

    fn seq2seq(
        &self,
        g: &mut Graph,
        batch: &Batch,
        mut mode: Mode,
        xs: &[NodeId],
        last_accel: NodeId,
        (encoder, attention, decoder, head): (&LstmCellParams, &AttentionParams, &LstmCellParams, &Linear),
    ) -> Result<NodeId> {
        let b = batch.len();
        let init = encoder.zero_state(g, b)?;
        let (hs, last) = encoder.forward(g, xs, init)?;
        let stacked = g.stack_rows(&hs)?;
        let stacked = dropout_node(g, stacked, self.config.dropout, mode.rng())?;
        let steps = hs.len();
        let keys = attention.keys(g, stacked)?;
        let h0 = attention.attend(g, last.h, keys, stacked, steps)?.context;
        let mut state = LstmState { h: h0, c: last.c };
        let target = match (&mode, &batch.target) {
            (Mode::Train { .. }, Some(t)) => Some(g.input(t.clone())?),
            (Mode::Train { .. }, None) => return Err(Error::validation("training batch without targets")),
            _ => None,
        };
        let mut prev = last_accel;
        let mut outputs = Vec::with_capacity(batch.horizon);
        for k in 0..batch.horizon {
            let ctx = attention.attend(g, state.h, keys, stacked, steps)?.context;
            let x = g.concat(&[prev, ctx])?;
            state = decoder.step(g, x, state)?;
            let feat = g.concat(&[state.h, ctx])?;
            let y = head.forward(g, feat)?;
            outputs.push(y);
            let forced = match &mut mode {
                Mode::Train { rng, teacher_forcing } => rng.gen::<f64>() < *teacher_forcing,
                Mode::Infer => false,
            };
            prev = match target {
                Some(t) if forced => g.slice_cols(t, k, k + 1)?,
                _ => y,
            };
        }
        g.concat(&outputs)
    }

    /// Encoder input sequence for one task, `history_len x input_width`,
    /// as the model sees it after normalization and alignment.
    pub fn assemble_input(&self, task: &PredictionTask) -> Result<Mat> {
        let batch = Batch::from_tasks(&[task], &self.normalizer)?;
        self.check_batch(&batch)?;
        let mut g = Graph::new(&self.params);
        let (xs, _) = self.encoder_inputs(&mut g, &batch)?;
        let rows: Vec<_> = xs.iter().map(|&x| g.value(x).view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &rows).expect("equal widths"))
    }

    fn require_fitted(&self) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::validation(format!("{} model has not been trained", self.config.kind)))
        }
    }

    /// Predictions in m/s², one vector of `horizon` values per task.
    pub fn predict_batch(&self, tasks: &[&PredictionTask]) -> Result<Vec<Vec<f64>>> {
        self.require_fitted()?;
        let batch = Batch::from_tasks(tasks, &self.normalizer)?;
        self.predict_normalized(&batch)
    }

    fn predict_normalized(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, batch, Mode::Infer)?;
        Ok(g.value(out)
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&z| self.normalizer.denorm_accel(z)).collect())
            .collect())
    }

    pub fn predict(&self, task: &PredictionTask) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[task])?.remove(0))
    }

    /// Batched predictions for stored samples at `horizon`.
    pub fn predict_samples(&self, samples: &[&Sample], horizon: usize) -> Result<Vec<Vec<f64>>> {
        self.require_fitted()?;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(256) {
            let batch =
                Batch::from_samples(chunk, horizon, self.config.use_env, self.config.env_span, &self.normalizer)?;
            out.extend(self.predict_normalized(&batch)?);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = toml::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        let mut tensors = vec![self.normalizer.to_row()];
        tensors.extend(self.params.tensors().iter().cloned());
        nn::io::encode(&config, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let blob = nn::io::decode(bytes)?;
        let config: ModelConfig =
            toml::from_str(&blob.config).map_err(|e| Error::Format(format!("config block: {e}")))?;
        let mut model = Model::new(&config)?;
        let mut tensors = blob.tensors.into_iter();
        let norm = tensors.next().ok_or_else(|| Error::Format("missing normalizer".into()))?;
        model.normalizer = Normalizer::from_row(&norm)?;
        let rest: Vec<Mat> = tensors.collect();
        if rest.len() != model.params.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", model.params.len(), rest.len())));
        }
        for (slot, t) in model.params.tensors_mut().iter_mut().zip(rest) {
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!("tensor shape {:?} where {:?} expected", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        model.fitted = true;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
