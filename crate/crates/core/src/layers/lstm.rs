//! LSTM cells without peepholes, unrolled over frame sequences.
//!
//! Gate layout inside the packed `4·H` pre-activation is
//! `[input, forget, cell candidate, output]`.

use rand::Rng;

use super::params::{xavier_uniform, BoundParams, ParamId, ParamStore};
use crate::autodiff::{concat_cols, concat_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Initial value of the forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[input_size, 4·hidden]`
    pub w_input: ParamId,
    /// `[hidden, 4·hidden]`
    pub w_hidden: ParamId,
    /// `[4·hidden]`
    pub bias: ParamId,
}

/// Exposed state `h` and memory cell `c`, each `[N, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState<'g> {
    pub h: Var<'g>,
    pub c: Var<'g>,
}

impl<'g> RecurrentState<'g> {
    pub fn zeros(graph: &'g Graph, batch: usize, hidden: usize) -> Self {
        RecurrentState {
            h: graph.constant(Tensor::zeros(&[batch, hidden])),
            c: graph.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = 4 * hidden_size;
        let w_input = store.add(
            format!("{prefix}.w_input"),
            xavier_uniform(&[input_size, gates], input_size, gates, rng),
        );
        let w_hidden = store.add(
            format!("{prefix}.w_hidden"),
            xavier_uniform(&[hidden_size, gates], hidden_size, gates, rng),
        );
        let mut bias = Tensor::zeros(&[gates]);
        bias.data_mut()[hidden_size..2 * hidden_size].fill(FORGET_BIAS_INIT);
        let bias = store.add(format!("{prefix}.bias"), bias);
        LstmCell {
            input_size,
            hidden_size,
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn num_parameters(&self) -> usize {
        let h = self.hidden_size;
        4 * (self.input_size * h + h * h + h)
    }

    /// `x·W_input + bias` for a `[rows, input]` matrix of frames.
    pub fn project_input<'g>(&self, params: &BoundParams<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(params.var(self.w_input))?
            .add_row_bias(params.var(self.bias))
    }

    /// One update given the already projected input `[N, 4·hidden]`.
    pub fn step_projected<'g>(
        &self,
        params: &BoundParams<'g>,
        projected: Var<'g>,
        state: RecurrentState<'g>,
    ) -> Result<RecurrentState<'g>> {
        let h = self.hidden_size;
        let pre = projected.add(state.h.matmul(params.var(self.w_hidden))?)?;
        let input = pre.narrow_cols(0, h)?.sigmoid();
        let forget = pre.narrow_cols(h, h)?.sigmoid();
        let candidate = pre.narrow_cols(2 * h, h)?.tanh();
        let output = pre.narrow_cols(3 * h, h)?.sigmoid();
        let c = forget.mul(state.c)?.add(input.mul(candidate)?)?;
        let h = output.mul(c.tanh())?;
        Ok(RecurrentState { h, c })
    }

    /// One LSTM update for a `[N, input]` frame batch.
    pub fn step<'g>(
        &self,
        params: &BoundParams<'g>,
        x: Var<'g>,
        state: RecurrentState<'g>,
    ) -> Result<RecurrentState<'g>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_size {
            return Err(Error::dim(format!(
                "lstm: frame shape {shape:?}, expected [N, {}]",
                self.input_size
            )));
        }
        let hs = state.h.shape();
        if hs != [shape[0], self.hidden_size] || state.c.shape() != hs {
            return Err(Error::dim(format!(
                "lstm: state shape {hs:?}, expected [{}, {}]",
                shape[0], self.hidden_size
            )));
        }
        let projected = self.project_input(params, x)?;
        self.step_projected(params, projected, state)
    }

    /// Runs over a `[T·N, input]` frame matrix (rows `t·N..t·N+N` are frame
    /// `t`), starting from zero state. Returns `[T·N, hidden]` where row
    /// block `t` is the state after frame `t`; with `reverse` the frames are
    /// consumed from `T-1` down to `0` and block `t` is the state after
    /// consuming frames `T-1..=t`.
    pub fn run<'g>(
        &self,
        params: &BoundParams<'g>,
        frames: Var<'g>,
        batch: usize,
        reverse: bool,
    ) -> Result<Var<'g>> {
        let shape = frames.shape();
        if shape.len() != 2 || shape[1] != self.input_size {
            return Err(Error::dim(format!(
                "lstm: frame matrix {shape:?}, expected [T·N, {}]",
                self.input_size
            )));
        }
        if batch == 0 || !shape[0].is_multiple_of(batch) || shape[0] == 0 {
            return Err(Error::usage("lstm: empty or ragged frame sequence"));
        }
        let steps = shape[0] / batch;
        let projected = self.project_input(params, frames)?;
        let mut state = RecurrentState::zeros(frames.graph(), batch, self.hidden_size);
        let mut outputs = vec![None; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let xw = projected.narrow_rows(t * batch, batch)?;
            state = self.step_projected(params, xw, state)?;
            outputs[t] = Some(state.h);
        }
        let outputs: Vec<Var<'g>> = outputs.into_iter().flatten().collect();
        concat_rows(&outputs)
    }
}

/// A forward and a backward cell over the same frames; output frame `t`
/// is `[forward h_t, backward h_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        BiLstm {
            forward: LstmCell::new(store, &format!("{prefix}.fwd"), input_size, hidden_size, rng),
            backward: LstmCell::new(store, &format!("{prefix}.bwd"), input_size, hidden_size, rng),
        }
    }

    pub fn output_size(&self) -> usize {
        self.forward.hidden_size + self.backward.hidden_size
    }

    pub fn run<'g>(&self, params: &BoundParams<'g>, frames: Var<'g>, batch: usize) -> Result<Var<'g>> {
        bilstm_layer(&self.forward, &self.backward, params, frames, batch)
    }
}

/// Bidirectional pass with independent (or shared) cells.
pub fn bilstm_layer<'g>(
    forward: &LstmCell,
    backward: &LstmCell,
    params: &BoundParams<'g>,
    frames: Var<'g>,
    batch: usize,
) -> Result<Var<'g>> {
    let f = forward.run(params, frames, batch, false)?;
    let b = backward.run(params, frames, batch, true)?;
    concat_cols(&[f, b])
}
