//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every value is a 2-D matrix with the batch along rows. Sequences are
//! handled by the caller as one node per step, or stacked time-major
//! (row `t * batch + b`) where an op consumes a whole sequence.

use ndarray::{s, Axis};

use super::params::{Mat, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    StackRows(Vec<NodeId>),
    Mask(NodeId, Mat),
    Softmax(NodeId),
    LstmCell(Box<LstmCache>),
    Attention(Box<AttentionCache>),
    Conv1d(Box<ConvCache>),
    Mse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::StackRows(_) => "stack_rows",
            Op::Mask(..) => "dropout",
            Op::Softmax(_) => "softmax",
            Op::LstmCell(_) => "lstm_cell",
            Op::Attention(_) => "attention",
            Op::Conv1d(_) => "conv1d",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Debug)]
struct LstmCache {
    x: NodeId,
    h: NodeId,
    c: NodeId,
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
    /// Activated gates `[i | f | g | o]`, batch x 4H.
    gates: Mat,
    tanh_c: Mat,
}

#[derive(Debug)]
struct AttentionCache {
    query: NodeId,
    keys: NodeId,
    values: NodeId,
    wq: NodeId,
    bias: NodeId,
    v: NodeId,
    steps: usize,
    /// `tanh(key + projected query)`, stacked time-major.
    hidden: Mat,
    weights: Mat,
}

#[derive(Debug)]
struct ConvCache {
    x: NodeId,
    w: NodeId,
    b: NodeId,
    in_len: usize,
    in_ch: usize,
    kernel: usize,
    stride: usize,
    out_len: usize,
    patches: Mat,
}

#[derive(Debug)]
struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

/// One forward pass; discard after [`Graph::backward`].
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

fn check_finite(op: &'static str, m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op: op.to_string() })
    }
}

fn shape(m: &Mat) -> Vec<usize> {
    m.shape().to_vec()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through a single `exp`; saturates cleanly for large `|x|`.
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op) -> Result<NodeId> {
        check_finite(op.name(), &value)?;
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Relu(a) | Op::Softmax(a) | Op::Slice(a, ..) | Op::Mask(a, _) => {
                self.needs(*a)
            }
            Op::Concat(ids) | Op::StackRows(ids) => ids.iter().any(|&i| self.needs(i)),
            Op::LstmCell(c) => [c.x, c.h, c.c, c.wx, c.wh, c.b].iter().any(|&i| self.needs(i)),
            Op::Attention(c) => [c.query, c.keys, c.values, c.wq, c.bias, c.v].iter().any(|&i| self.needs(i)),
            Op::Conv1d(c) => [c.x, c.w, c.b].iter().any(|&i| self.needs(i)),
        };
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        match &self.nodes[id.0] {
            Node { op: Op::Param(p), .. } => self.params.get(*p),
            Node { value: Some(v), .. } => v,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    pub fn input(&mut self, value: Mat) -> Result<NodeId> {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        if let Some(id) = self.param_nodes[p.0] {
            return id;
        }
        self.nodes.push(Node { value: None, op: Op::Param(p), needs_grad: true });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes[p.0] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::ShapeMismatch { op: "matmul", left: shape(va), right: shape(vb) });
        }
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::ShapeMismatch { op: "add_bias", left: shape(vx), right: shape(vb) });
        }
        let out = vx + vb;
        self.push(out, Op::AddBias(x, b))
    }

    /// `x W + b` with `W` stored input-major.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch { op: "add", left: shape(va), right: shape(vb) });
        }
        let out = va + vb;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch { op: "mul", left: shape(va), right: shape(vb) });
        }
        let out = va * vb;
        self.push(out, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).nrows();
        for &p in parts {
            if self.value(p).nrows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: shape(self.value(parts[0])),
                    right: shape(self.value(p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if start >= end || end > vx.ncols() {
            return Err(Error::ShapeMismatch { op: "slice", left: shape(vx), right: vec![start, end] });
        }
        let out = vx.slice(s![.., start..end]).to_owned();
        self.push(out, Op::Slice(x, start, end))
    }

    /// Stacks equally shaped matrices along rows.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = shape(self.value(parts[0]));
        for &p in parts {
            if self.value(p).shape() != first.as_slice() {
                return Err(Error::ShapeMismatch { op: "stack_rows", left: first, right: shape(self.value(p)) });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("shapes checked");
        self.push(out, Op::StackRows(parts.to_vec()))
    }

    /// Multiplies by a constant mask (inverted dropout).
    pub fn mask(&mut self, x: NodeId, mask: Mat) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.shape() != mask.shape() {
            return Err(Error::ShapeMismatch { op: "dropout", left: shape(vx), right: shape(&mask) });
        }
        let out = vx * &mask;
        self.push(out, Op::Mask(x, mask))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(out, Op::Softmax(x))
    }

    /// One LSTM step. Gate columns are ordered `[input, forget, cell, output]`.
    /// Returns `[h' | c']`, batch x 2H.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let (vx, vh, vc) = (self.value(x), self.value(h), self.value(c));
        let (vwx, vwh, vb) = (self.value(wx), self.value(wh), self.value(b));
        let hd = vh.ncols();
        if vwx.nrows() != vx.ncols() || vwx.ncols() != 4 * hd {
            return Err(Error::ShapeMismatch { op: "lstm_cell", left: shape(vx), right: shape(vwx) });
        }
        if vwh.shape() != [hd, 4 * hd] || vb.shape() != [1, 4 * hd] || vc.shape() != vh.shape() || vh.nrows() != vx.nrows()
        {
            return Err(Error::ShapeMismatch { op: "lstm_cell", left: shape(vh), right: shape(vwh) });
        }
        let mut gates = vx.dot(vwx) + vh.dot(vwh) + vb;
        let batch = vx.nrows();
        let mut out = Mat::zeros((batch, 2 * hd));
        let mut tanh_c = Mat::zeros((batch, hd));
        for r in 0..batch {
            for j in 0..hd {
                let i = sigmoid(gates[[r, j]]);
                let f = sigmoid(gates[[r, hd + j]]);
                let g = gates[[r, 2 * hd + j]].tanh();
                let o = sigmoid(gates[[r, 3 * hd + j]]);
                gates[[r, j]] = i;
                gates[[r, hd + j]] = f;
                gates[[r, 2 * hd + j]] = g;
                gates[[r, 3 * hd + j]] = o;
                let c_new = f * vc[[r, j]] + i * g;
                let tc = c_new.tanh();
                tanh_c[[r, j]] = tc;
                out[[r, j]] = o * tc;
                out[[r, hd + j]] = c_new;
            }
        }
        self.push(out, Op::LstmCell(Box::new(LstmCache { x, h, c, wx, wh, b, gates, tanh_c })))
    }

    /// Additive attention of a query over `steps` stacked encoder states.
    ///
    /// `keys` holds the key projection of every state (rows `t * batch + b`),
    /// `values` the states themselves. Per state the score is
    /// `v . tanh(key_t + query W_q + bias)`; weights are the softmax over
    /// steps. Returns `[context | weights]`, batch x (value width + steps).
    pub fn attention(
        &mut self,
        query: NodeId,
        keys: NodeId,
        values: NodeId,
        wq: NodeId,
        bias: NodeId,
        v: NodeId,
        steps: usize,
    ) -> Result<NodeId> {
        if steps == 0 {
            return Err(Error::validation("attention over an empty sequence"));
        }
        let (vq, vk, vv) = (self.value(query), self.value(keys), self.value(values));
        let (vwq, vbias, vvec) = (self.value(wq), self.value(bias), self.value(v));
        let batch = vq.nrows();
        let width = vk.ncols();
        if vk.nrows() != steps * batch || vv.nrows() != steps * batch {
            return Err(Error::ShapeMismatch { op: "attention", left: shape(vk), right: vec![steps, batch] });
        }
        if vwq.shape() != [vq.ncols(), width] || vbias.shape() != [1, width] || vvec.shape() != [width, 1] {
            return Err(Error::ShapeMismatch { op: "attention", left: shape(vwq), right: shape(vvec) });
        }
        let q = vq.dot(vwq) + vbias;
        let q = q.as_slice().expect("fresh matrix");
        let vk = vk.as_standard_layout();
        let vk = vk.as_slice().expect("standard layout");
        let vv = vv.as_standard_layout();
        let hd = vv.ncols();
        let vv = vv.as_slice().expect("standard layout");
        let vslice = vvec.as_slice().expect("contiguous");
        let mut hidden = vec![0.0; steps * batch * width];
        let mut weights = Mat::zeros((batch, steps));
        for t in 0..steps {
            for b in 0..batch {
                let row = t * batch + b;
                let k = &vk[row * width..(row + 1) * width];
                let qb = &q[b * width..(b + 1) * width];
                let u = &mut hidden[row * width..(row + 1) * width];
                let mut e = 0.0;
                for a in 0..width {
                    let h = tanh(k[a] + qb[a]);
                    u[a] = h;
                    e += h * vslice[a];
                }
                weights[[b, t]] = e;
            }
        }
        for mut row in weights.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let mut out = Mat::zeros((batch, hd + steps));
        for b in 0..batch {
            let o = out.row_mut(b).into_slice().expect("row-major");
            for t in 0..steps {
                let w = weights[[b, t]];
                o[hd + t] = w;
                let val = &vv[(t * batch + b) * hd..(t * batch + b + 1) * hd];
                for (acc, x) in o[..hd].iter_mut().zip(val) {
                    *acc += w * x;
                }
            }
        }
        let hidden = Mat::from_shape_vec((steps * batch, width), hidden).expect("sized above");
        self.push(
            out,
            Op::Attention(Box::new(AttentionCache { query, keys, values, wq, bias, v, steps, hidden, weights })),
        )
    }

    /// 1-D valid convolution. `x` is batch x (len * in_ch), position-major;
    /// `w` is (kernel * in_ch) x out_ch. Output is batch x (out_len * out_ch).
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        in_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if in_ch == 0 || vx.ncols() % in_ch != 0 || stride == 0 {
            return Err(Error::ShapeMismatch { op: "conv1d", left: shape(vx), right: vec![in_ch, stride] });
        }
        let in_len = vx.ncols() / in_ch;
        if kernel == 0 || kernel > in_len || vw.nrows() != kernel * in_ch || vb.shape() != [1, vw.ncols()] {
            return Err(Error::ShapeMismatch { op: "conv1d", left: shape(vx), right: shape(vw) });
        }
        let out_len = (in_len - kernel) / stride + 1;
        let batch = vx.nrows();
        let patch = kernel * in_ch;
        let mut patches = Mat::zeros((batch * out_len, patch));
        for bi in 0..batch {
            for p in 0..out_len {
                let start = p * stride * in_ch;
                patches.row_mut(bi * out_len + p).assign(&vx.slice(s![bi, start..start + patch]));
            }
        }
        let out_ch = vw.ncols();
        let out = (patches.dot(vw) + vb)
            .into_shape_with_order((batch, out_len * out_ch))
            .expect("row-major reshape");
        self.push(
            out,
            Op::Conv1d(Box::new(ConvCache { x, w, b, in_len, in_ch, kernel, stride, out_len, patches })),
        )
    }

    /// Mean squared error over all elements; a 1 x 1 node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(Error::ShapeMismatch { op: "mse", left: shape(vp), right: shape(vt) });
        }
        let n = vp.len() as f64;
        let loss = (vp - vt).mapv(|d| d * d).sum() / n;
        self.push(Mat::from_elem((1, 1), loss), Op::Mse(pred, target))
    }

    /// Gradients of a 1 x 1 node with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Mat>> {
        let root = self.value(loss);
        if root.shape() != [1, 1] {
            return Err(Error::ShapeMismatch { op: "backward", left: shape(root), right: vec![1, 1] });
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut param_grads = self.params.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |id: NodeId, delta: Mat| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => param_grads[p.0] += &g,
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    d.zip_mut_with(y, |d, &y| *d *= 1.0 - y * y);
                    acc(*x, d);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    d.zip_mut_with(y, |d, &y| *d *= y * (1.0 - y));
                    acc(*x, d);
                }
                Op::Relu(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    d.zip_mut_with(y, |d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*x, d);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            acc(p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::Slice(x, start, end) => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(*x, d);
                }
                Op::StackRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.needs(p) {
                            acc(p, g.slice(s![row..row + h, ..]).to_owned());
                        }
                        row += h;
                    }
                }
                Op::Mask(x, mask) => acc(*x, &g * mask),
                Op::Softmax(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let s: f64 = drow.sum();
                        drow.zip_mut_with(&yrow, |d, &y| *d -= y * s);
                    }
                    acc(*x, d);
                }
                Op::LstmCell(c) => self.lstm_backward(c, &g, &mut acc),
                Op::Attention(c) => self.attention_backward(c, &g, &mut acc),
                Op::Conv1d(c) => self.conv_backward(c, &g, &mut acc),
                Op::Mse(p, t) => {
                    let (vp, vt) = (self.value(*p), self.value(*t));
                    let scale = 2.0 * g[[0, 0]] / vp.len() as f64;
                    let d = (vp - vt) * scale;
                    if self.needs(*t) {
                        acc(*t, -&d);
                    }
                    acc(*p, d);
                }
            }
        }

        for (i, g) in param_grads.iter().enumerate() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: format!("gradient of {}", self.params.name(ParamId(i))) });
            }
        }
        Ok(param_grads)
    }

    fn lstm_backward(&self, c: &LstmCache, g: &Mat, acc: &mut impl FnMut(NodeId, Mat)) {
        let vc = self.value(c.c);
        let hd = vc.ncols();
        let batch = vc.nrows();
        let mut dz = Mat::zeros((batch, 4 * hd));
        let mut dc_prev = Mat::zeros((batch, hd));
        for r in 0..batch {
            for j in 0..hd {
                let (i, f, gg, o) = (
                    c.gates[[r, j]],
                    c.gates[[r, hd + j]],
                    c.gates[[r, 2 * hd + j]],
                    c.gates[[r, 3 * hd + j]],
                );
                let tc = c.tanh_c[[r, j]];
                let dh = g[[r, j]];
                let dc = g[[r, hd + j]] + dh * o * (1.0 - tc * tc);
                dz[[r, j]] = dc * gg * i * (1.0 - i);
                dz[[r, hd + j]] = dc * vc[[r, j]] * f * (1.0 - f);
                dz[[r, 2 * hd + j]] = dc * i * (1.0 - gg * gg);
                dz[[r, 3 * hd + j]] = dh * tc * o * (1.0 - o);
                dc_prev[[r, j]] = dc * f;
            }
        }
        if self.needs(c.wx) {
            acc(c.wx, self.value(c.x).t().dot(&dz));
        }
        if self.needs(c.wh) {
            acc(c.wh, self.value(c.h).t().dot(&dz));
        }
        if self.needs(c.b) {
            acc(c.b, dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        if self.needs(c.x) {
            acc(c.x, dz.dot(&self.value(c.wx).t()));
        }
        if self.needs(c.h) {
            acc(c.h, dz.dot(&self.value(c.wh).t()));
        }
        acc(c.c, dc_prev);
    }

    fn attention_backward(&self, c: &AttentionCache, g: &Mat, acc: &mut impl FnMut(NodeId, Mat)) {
        let vv = self.value(c.values).as_standard_layout();
        let hd = vv.ncols();
        let vv = vv.as_slice().expect("standard layout");
        let vvec = self.value(c.v).as_slice().expect("contiguous").to_vec();
        let batch = c.weights.nrows();
        let width = c.hidden.ncols();
        let steps = c.steps;
        let hidden = c.hidden.as_slice().expect("fresh matrix");
        let g = g.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let gw = hd + steps;
        let mut dvalues = vec![0.0; steps * batch * hd];
        let mut dkeys = vec![0.0; steps * batch * width];
        let mut dq = vec![0.0; batch * width];
        let mut dvec = vec![0.0; width];
        let mut dw = vec![0.0; steps];
        for b in 0..batch {
            let dctx = &gs[b * gw..b * gw + hd];
            let mut weighted = 0.0;
            for t in 0..steps {
                let row = t * batch + b;
                let w = c.weights[[b, t]];
                let val = &vv[row * hd..(row + 1) * hd];
                dw[t] = dctx.iter().zip(val).map(|(d, x)| d * x).sum::<f64>() + gs[b * gw + hd + t];
                weighted += w * dw[t];
                for (dv, d) in dvalues[row * hd..(row + 1) * hd].iter_mut().zip(dctx) {
                    *dv += w * d;
                }
            }
            let dqb = &mut dq[b * width..(b + 1) * width];
            for t in 0..steps {
                let row = t * batch + b;
                let de = c.weights[[b, t]] * (dw[t] - weighted);
                let u = &hidden[row * width..(row + 1) * width];
                let dk = &mut dkeys[row * width..(row + 1) * width];
                for a in 0..width {
                    dvec[a] += de * u[a];
                    let dpre = de * vvec[a] * (1.0 - u[a] * u[a]);
                    dk[a] = dpre;
                    dqb[a] += dpre;
                }
            }
        }
        let dq = Mat::from_shape_vec((batch, width), dq).expect("sized above");
        if self.needs(c.values) {
            acc(c.values, Mat::from_shape_vec((steps * batch, hd), dvalues).expect("sized above"));
        }
        if self.needs(c.keys) {
            acc(c.keys, Mat::from_shape_vec((steps * batch, width), dkeys).expect("sized above"));
        }
        if self.needs(c.v) {
            acc(c.v, Mat::from_shape_vec((width, 1), dvec).expect("sized above"));
        }
        if self.needs(c.wq) {
            acc(c.wq, self.value(c.query).t().dot(&dq));
        }
        if self.needs(c.query) {
            acc(c.query, dq.dot(&self.value(c.wq).t()));
        }
        if self.needs(c.bias) {
            acc(c.bias, dq.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
    }

    fn conv_backward(&self, c: &ConvCache, g: &Mat, acc: &mut impl FnMut(NodeId, Mat)) {
        let vw = self.value(c.w);
        let out_ch = vw.ncols();
        let batch = g.nrows();
        let dout = g
            .as_standard_layout()
            .into_shape_with_order((batch * c.out_len, out_ch))
            .expect("row-major reshape")
            .to_owned();
        if self.needs(c.w) {
            acc(c.w, c.patches.t().dot(&dout));
        }
        if self.needs(c.b) {
            acc(c.b, dout.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        if self.needs(c.x) {
            let dpatch = dout.dot(&vw.t());
            let patch = c.kernel * c.in_ch;
            let mut dx = Mat::zeros((batch, c.in_len * c.in_ch));
            for bi in 0..batch {
                for p in 0..c.out_len {
                    let start = p * c.stride * c.in_ch;
                    let mut dst = dx.slice_mut(s![bi, start..start + patch]);
                    dst += &dpatch.row(bi * c.out_len + p);
                }
            }
            acc(c.x, dx);
        }
    }
}
