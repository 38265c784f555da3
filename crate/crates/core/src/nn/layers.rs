use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{Mat, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::seed;

/// Fully connected layer, `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut seed::Rng) -> Self {
        let w = params.add_uniform(format!("{name}.w"), inputs, outputs, inputs, rng);
        let b = params.add_uniform(format!("{name}.b"), 1, outputs, inputs, rng);
        Linear { w, b, inputs, outputs }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.linear(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// LSTM cell weights, gate columns ordered `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCellParams {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut seed::Rng) -> Self {
        let wx = params.add_uniform(format!("{name}.wx"), inputs, 4 * hidden, inputs, rng);
        let wh = params.add_uniform(format!("{name}.wh"), hidden, 4 * hidden, hidden, rng);
        let b = params.add_uniform(format!("{name}.b"), 1, 4 * hidden, hidden, rng);
        params.get_mut(b).slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        LstmCellParams { wx, wh, b, inputs, hidden }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Result<LstmState> {
        let h = g.input(Mat::zeros((batch, self.hidden)))?;
        let c = g.input(Mat::zeros((batch, self.hidden)))?;
        Ok(LstmState { h, c })
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, state: LstmState) -> Result<LstmState> {
        let (wx, wh, b) = (g.param(self.wx), g.param(self.wh), g.param(self.b));
        let out = g.lstm_cell(x, state.h, state.c, wx, wh, b)?;
        let h = g.slice_cols(out, 0, self.hidden)?;
        let c = g.slice_cols(out, self.hidden, 2 * self.hidden)?;
        Ok(LstmState { h, c })
    }

    /// Runs the recurrence over `inputs` and returns every hidden state plus
    /// the final state.
    pub fn forward(&self, g: &mut Graph, inputs: &[NodeId], init: LstmState) -> Result<(Vec<NodeId>, LstmState)> {
        let mut state = init;
        let mut hs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(g, x, state)?;
            hs.push(state.h);
        }
        Ok((hs, state))
    }
}

/// Bidirectional LSTM encoder; the summary is `[h_forward_T | h_backward_1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
}

impl BiLstm {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut seed::Rng) -> Self {
        BiLstm {
            forward: LstmCellParams::new(params, &format!("{name}.fwd"), inputs, hidden, rng),
            backward: LstmCellParams::new(params, &format!("{name}.bwd"), inputs, hidden, rng),
        }
    }

    pub fn encode(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<NodeId> {
        let batch = g.value(inputs[0]).nrows();
        let init = self.forward.zero_state(g, batch)?;
        let (_, fwd) = self.forward.forward(g, inputs, init)?;
        let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
        let init = self.backward.zero_state(g, batch)?;
        let (_, bwd) = self.backward.forward(g, &reversed, init)?;
        g.concat(&[fwd.h, bwd.h])
    }
}

/// Elman recurrence `h' = tanh(x Wx + h Wh + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnnCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut seed::Rng) -> Self {
        let wx = params.add_uniform(format!("{name}.wx"), inputs, hidden, inputs, rng);
        let wh = params.add_uniform(format!("{name}.wh"), hidden, hidden, hidden, rng);
        let b = params.add_uniform(format!("{name}.b"), 1, hidden, hidden, rng);
        RnnCell { wx, wh, b, inputs, hidden }
    }

    /// Final hidden state after the whole sequence, from a zero start.
    pub fn encode(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<NodeId> {
        let batch = g.value(inputs[0]).nrows();
        let mut h = g.input(Mat::zeros((batch, self.hidden)))?;
        let (wx, wh) = (g.param(self.wx), g.param(self.wh));
        let b = g.param(self.b);
        for &x in inputs {
            let xw = g.matmul(x, wx)?;
            let hw = g.matmul(h, wh)?;
            let z = g.add(xw, hw)?;
            let z = g.add_bias(z, b)?;
            h = g.tanh(z)?;
        }
        Ok(h)
    }
}

/// 1-D convolution over a position-major sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut seed::Rng,
    ) -> Self {
        let fan_in = kernel * in_ch;
        let w = params.add_uniform(format!("{name}.w"), fan_in, out_ch, fan_in, rng);
        let b = params.add_uniform(format!("{name}.b"), 1, out_ch, fan_in, rng);
        Conv1d { w, b, in_ch, out_ch, kernel, stride }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        if in_len < self.kernel {
            0
        } else {
            (in_len - self.kernel) / self.stride + 1
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv1d(x, w, b, self.in_ch, self.kernel, self.stride)
    }
}

/// Additive attention. The score FC over `[s; h_j]` is stored as a query
/// block and a key block so keys are projected once per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub query_width: usize,
    pub value_width: usize,
    pub width: usize,
}

/// Output of one attention query.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub context: NodeId,
    pub weights: NodeId,
}

impl AttentionParams {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        query_width: usize,
        value_width: usize,
        width: usize,
        rng: &mut seed::Rng,
    ) -> Self {
        let fan_in = query_width + value_width;
        let w_query = params.add_uniform(format!("{name}.w_query"), query_width, width, fan_in, rng);
        let w_key = params.add_uniform(format!("{name}.w_key"), value_width, width, fan_in, rng);
        let bias = params.add_uniform(format!("{name}.bias"), 1, width, fan_in, rng);
        let v = params.add_uniform(format!("{name}.v"), width, 1, width, rng);
        AttentionParams { w_query, w_key, bias, v, query_width, value_width, width }
    }

    /// Projects time-major stacked states (rows `t * batch + b`) to keys.
    pub fn keys(&self, g: &mut Graph, stacked: NodeId) -> Result<NodeId> {
        let wk = g.param(self.w_key);
        g.matmul(stacked, wk)
    }

    pub fn attend(&self, g: &mut Graph, query: NodeId, keys: NodeId, stacked: NodeId, steps: usize) -> Result<Attended> {
        let (wq, bias, v) = (g.param(self.w_query), g.param(self.bias), g.param(self.v));
        let out = g.attention(query, keys, stacked, wq, bias, v, steps)?;
        let context = g.slice_cols(out, 0, self.value_width)?;
        let weights = g.slice_cols(out, self.value_width, self.value_width + steps)?;
        Ok(Attended { context, weights })
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut seed::Rng) -> Result<Mat> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok(Mat::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep }))
}

/// Dropout on a graph node; identity when `rng` is `None` (inference).
pub fn dropout_node(g: &mut Graph, x: NodeId, rate: f64, rng: Option<&mut seed::Rng>) -> Result<NodeId> {
    check_rate(rate)?;
    match rng {
        Some(rng) if rate > 0.0 => {
            let (r, c) = g.value(x).dim();
            let mask = dropout_mask(r, c, rate, rng)?;
            g.mask(x, mask)
        }
        _ => Ok(x),
    }
}

/// Dropout on a plain matrix.
pub fn dropout(x: &Mat, rate: f64, training: bool, seed: u64) -> Result<Mat> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = seed::rng(seed);
    let mask = dropout_mask(x.nrows(), x.ncols(), rate, &mut rng)?;
    Ok(x * &mask)
}

/// Max-subtracted softmax of a vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
