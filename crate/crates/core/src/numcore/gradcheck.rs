//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{GeneError, Result};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor so that entries whose true gradient is ~0 are compared
/// on an absolute scale instead of amplifying rounding noise.
const REL_FLOOR: f64 = 1e-6;

/// Builds the scalar function `f` on fresh graphs, compares the tape gradient
/// of every input entry against a central difference with step [`FD_STEP`],
/// and returns the largest relative error.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(GeneError::dim("gradient check needs a scalar output"));
        }
        Ok((g, vars, out))
    };

    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let (gp, _, op) = eval(&probe)?;
            let fp = gp.value(op).item();
            probe[i].data_mut()[j] = orig - FD_STEP;
            let (gm, _, om) = eval(&probe)?;
            let fm = gm.value(om).item();
            probe[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
