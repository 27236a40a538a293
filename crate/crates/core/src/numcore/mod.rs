//! Dense-tensor numerical core: tensors, a reverse-mode tape, parameter
//! storage, layers, losses and a seeded random stream.

pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod rng;
mod tensor;

pub use graph::{softmax_rows, Gradients, Graph, Var, PROB_CLAMP};
pub use layers::{activate, affine, loss_cross_entropy, loss_mse, rnn_cell, Activation, Dense, Mlp, MlpOutput, RnnLayer};
pub use params::{Bound, Param, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
