//! Layers built on the autodiff tape: feed-forward projections, the LSTM
//! cell, stacked bidirectional LSTMs and inverted dropout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, Init, NodeId, ParamId, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Single-layer feed-forward network `act(W x + b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
    ) -> Result<Self, AutodiffError> {
        Ok(Linear {
            weight: store.add(&format!("{name}/weight"), &[output, input], Init::GlorotUniform)?,
            bias: store.add(&format!("{name}/bias"), &[output], Init::Zeros)?,
            activation,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, AutodiffError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matvec(w, x)?;
        let y = g.add(y, b)?;
        match self.activation {
            Activation::Identity => Ok(y),
            Activation::Tanh => g.tanh(y),
        }
    }
}

/// Weights of one LSTM direction: a `4H x (input + H)` matrix over `[x; h]`
/// with gate blocks in the order input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmWeights {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, AutodiffError> {
        Ok(LstmWeights {
            weight: store.add(
                &format!("{name}/weight"),
                &[4 * hidden, input + hidden],
                Init::GlorotUniform,
            )?,
            bias: store.add(&format!("{name}/bias"), &[4 * hidden], Init::Zeros)?,
            input,
            hidden,
        })
    }
}

/// One step of the standard LSTM recurrence; returns `(hidden, cell)`.
pub fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    hidden: NodeId,
    cell: NodeId,
    weights: &LstmWeights,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let h = weights.hidden;
    let (xl, hl, cl) = (g.value(x).len(), g.value(hidden).len(), g.value(cell).len());
    if xl != weights.input || hl != h || cl != h {
        return Err(AutodiffError::ShapeMismatch {
            op: "lstm_cell",
            left: vec![weights.input, h, h],
            right: vec![xl, hl, cl],
        });
    }
    let w = g.param(weights.weight);
    let b = g.param(weights.bias);
    let xh = g.concat(&[x, hidden])?;
    let pre = g.matvec(w, xh)?;
    let pre = g.add(pre, b)?;
    let i = g.slice(pre, 0, h)?;
    let i = g.sigmoid(i)?;
    let f = g.slice(pre, h, h)?;
    let f = g.sigmoid(f)?;
    let o = g.slice(pre, 2 * h, h)?;
    let o = g.sigmoid(o)?;
    let c_hat = g.slice(pre, 3 * h, h)?;
    let c_hat = g.tanh(c_hat)?;
    let keep = g.mul(f, cell)?;
    let write = g.mul(i, c_hat)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new)?;
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

fn run_direction(
    g: &mut Graph,
    inputs: &[NodeId],
    weights: &LstmWeights,
    reverse: bool,
) -> Result<Vec<NodeId>, AutodiffError> {
    let zeros = g.input(Tensor::zeros(&[weights.hidden]))?;
    let (mut h, mut c) = (zeros, zeros);
    let mut out = vec![zeros; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        (h, c) = lstm_cell(g, inputs[t], h, c, weights)?;
        out[t] = h;
    }
    Ok(out)
}

/// Stacked bidirectional LSTM. Output `i` is the top layer's
/// `forward_i ∘ backward_i`, of width `2H`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    layers: Vec<(LstmWeights, LstmWeights)>,
    input: usize,
    hidden: usize,
}

impl BiLstm {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self, AutodiffError> {
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = if l == 0 { input } else { 2 * hidden };
            let fwd = LstmWeights::new(store, &format!("{name}/layer{l}/forward"), width, hidden)?;
            let bwd = LstmWeights::new(store, &format!("{name}/layer{l}/backward"), width, hidden)?;
            stack.push((fwd, bwd));
        }
        Ok(BiLstm {
            layers: stack,
            input,
            hidden,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<Vec<NodeId>, AutodiffError> {
        let mut current = inputs.to_vec();
        for (fwd, bwd) in &self.layers {
            let f = run_direction(g, &current, fwd, false)?;
            let b = run_direction(g, &current, bwd, true)?;
            current = f
                .into_iter()
                .zip(b)
                .map(|(f, b)| g.concat(&[f, b]))
                .collect::<Result<_, _>>()?;
        }
        Ok(current)
    }
}

/// Inverted dropout: keeps each unit with probability `keep` and rescales by
/// `1 / keep`. A no-op when `rng` is `None` or `keep >= 1`.
pub fn dropout(
    g: &mut Graph,
    x: NodeId,
    keep: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, AutodiffError> {
    let Some(rng) = rng else { return Ok(x) };
    if keep >= 1.0 {
        return Ok(x);
    }
    let n = g.value(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = g.input(Tensor::new(g.value(x).shape().to_vec(), mask)?)?;
    g.mul(x, mask)
}
