//! Standard layers and losses expressed as graph ops.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    SoftmaxRows,
    Exp,
}

pub fn activate(g: &mut Graph, x: Var, kind: Activation) -> Result<Var> {
    Ok(match kind {
        Activation::Identity => x,
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Exp => g.exp(x),
        Activation::SoftmaxRows => g.softmax_rows(x)?,
    })
}

/// `x · weights + bias` with the bias broadcast over rows.
pub fn affine(g: &mut Graph, x: Var, weights: Var, bias: Var) -> Result<Var> {
    let xw = g.matmul(x, weights)?;
    g.add_bias(xw, bias)
}

/// Fully connected layer whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.insert_glorot(&format!("{name}.w"), in_dim, out_dim, rng)?;
        let b = store.insert_zeros(&format!("{name}.b"), &[out_dim])?;
        Ok(Dense { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        affine(g, x, p.var(self.w), p.var(self.b))
    }

    /// Sets weights and bias to zero (used to start heads at a neutral output).
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_at_mut(self.w).fill(0.0);
        store.value_at_mut(self.b).fill(0.0);
    }
}

/// Elman recurrence `H_t = tanh(x_t·W + H_{t-1}·U + b)`.
#[derive(Clone, Debug)]
pub struct RnnLayer {
    w: usize,
    u: usize,
    b: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

impl RnnLayer {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.insert_glorot(&format!("{name}.w"), in_dim, hidden, rng)?;
        let u = store.insert_glorot(&format!("{name}.u"), hidden, hidden, rng)?;
        let b = store.insert_zeros(&format!("{name}.b"), &[hidden])?;
        Ok(RnnLayer { w, u, b, in_dim, hidden })
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Var {
        g.input(Tensor::zeros(&[batch, self.hidden]))
    }

    pub fn cell(&self, g: &mut Graph, p: &Bound, x_t: Var, h_prev: Var) -> Result<Var> {
        rnn_cell(g, x_t, h_prev, p.var(self.w), p.var(self.u), p.var(self.b))
    }

    /// Runs over `x` laid out as `batch × (steps·width)` and returns the
    /// final hidden state.
    pub fn run(&self, g: &mut Graph, p: &Bound, x: Var, steps: usize, width: usize) -> Result<Var> {
        let batch = g.value(x).rows();
        let mut h = self.zero_state(g, batch);
        for t in 0..steps {
            let x_t = g.slice_cols(x, t * width, width)?;
            h = self.cell(g, p, x_t, h)?;
        }
        Ok(h)
    }
}

pub fn rnn_cell(g: &mut Graph, x_t: Var, h_prev: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x_t, w)?;
    let hu = g.matmul(h_prev, u)?;
    let s = g.add(xw, hu)?;
    let s = g.add_bias(s, b)?;
    Ok(g.tanh(s))
}

/// Feed-forward stack: hidden layers share one activation, the last layer
/// applies `output`.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden_act: Activation,
    output_act: Activation,
}

pub struct MlpOutput {
    pub output: Var,
    /// Input to the last layer.
    pub features: Var,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp {
            layers,
            hidden_act,
            output_act,
        })
    }

    pub fn last(&self) -> &Dense {
        self.layers.last().expect("mlp has layers")
    }

    pub fn out_dim(&self) -> usize {
        self.last().out_dim
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<MlpOutput> {
        let mut h = x;
        let n = self.layers.len();
        for layer in &self.layers[..n - 1] {
            let z = layer.forward(g, p, h)?;
            h = activate(g, z, self.hidden_act)?;
        }
        let z = self.layers[n - 1].forward(g, p, h)?;
        let output = activate(g, z, self.output_act)?;
        Ok(MlpOutput { output, features: h })
    }
}

/// Mean of squared differences.
pub fn loss_mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `-mean_i ln probs[i, target_i]`, probabilities clamped at 1e-12.
pub fn loss_cross_entropy(g: &mut Graph, probs: Var, targets: &[usize]) -> Result<Var> {
    g.cross_entropy(probs, targets, None)
}
