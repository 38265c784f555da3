//! Small neural-network kernel: a recorded graph of matrix ops with analytic
//! backward passes, the layers the predictors need, Adam, and model files.

mod graph;
pub mod io;
mod layers;
mod optim;
mod params;

pub use graph::{Graph, NodeId};
pub use layers::{
    dropout, dropout_mask, dropout_node, softmax, Attended, AttentionParams, BiLstm, Conv1d, Linear, LstmCellParams,
    LstmState, RnnCell,
};
pub use optim::{global_norm, AdamConfig, OptimizerState};
pub use params::{Mat, ParamId, ParamSet};

use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with a floor so that gradients at round-off level do not
/// dominate the comparison.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every scalar of every parameter of `params` against a central
/// finite difference of `loss` with step `eps`.
pub fn gradient_check<F>(params: &ParamSet, eps: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(p);
        let l = loss(&mut g)?;
        Ok(g.value(l)[[0, 0]])
    };
    let mut work = params.clone();
    let mut out = GradCheck { max_rel_error: 0.0, worst_param: String::new(), checked: 0 };
    for i in 0..params.len() {
        let id = ParamId(i);
        for j in 0..params.get(id).len() {
            let orig = params.get(id).as_slice().expect("contiguous")[j];
            work.get_mut(id).as_slice_mut().expect("contiguous")[j] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).as_slice_mut().expect("contiguous")[j] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).as_slice_mut().expect("contiguous")[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[i].as_slice().expect("contiguous")[j], numeric);
            out.checked += 1;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst_param = params.name(id).to_string();
            }
        }
    }
    Ok(out)
}
