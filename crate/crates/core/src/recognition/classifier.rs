//! Recurrent sequence classifier over one window.

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{GeneError, Result};
use crate::numcore::{Bound, Dense, Graph, ParamStore, Rng, RnnLayer, Tensor, Var};
use crate::persistence::{push_store, restore_store, Checkpoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub k: usize,
    pub points: usize,
    pub variables: usize,
    pub hidden: usize,
    pub norm: Standardizer,
    pub seed: u64,
}

/// Elman RNN over the `T` time steps of a window (consuming `S`-vectors),
/// last hidden state → affine → softmax over `K` genes.
#[derive(Clone, Debug)]
pub struct ClassifierC {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    rnn: RnnLayer,
    out: Dense,
}

const APPLY_CHUNK: usize = 1024;

impl ClassifierC {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        if config.k == 0 || config.hidden == 0 {
            return Err(GeneError::data("classifier needs K >= 1 and a positive hidden size"));
        }
        let mut rng = Rng::with_stream(config.seed, 0xC1A5);
        let mut store = ParamStore::new(config.seed);
        let rnn = RnnLayer::new(&mut store, "rnn", config.variables, config.hidden, &mut rng)?;
        let out = Dense::new(&mut store, "out", config.hidden, config.k, &mut rng)?;
        Ok(ClassifierC { config, store, rnn, out })
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn window_len(&self) -> usize {
        self.config.points * self.config.variables
    }

    /// Zeroes the output layer so every window maps to the uniform 1/K row.
    pub fn zero_output(&mut self) {
        self.out.zero(&mut self.store);
    }

    /// Standardised `batch × (T·S)` input tensor.
    pub fn input_tensor(&self, segments: &[&[f64]]) -> Result<Tensor> {
        let len = self.window_len();
        let mut data = Vec::with_capacity(segments.len() * len);
        for s in segments {
            if s.len() != len {
                return Err(GeneError::dim(format!("segment of {} values, expected {len}", s.len())));
            }
            self.config.norm.apply_into(s, &mut data);
        }
        Tensor::matrix(segments.len(), len, data)
    }

    /// Probability rows for a standardised input already on the graph.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = self.rnn.run(g, p, x, self.config.points, self.config.variables)?;
        let logits = self.out.forward(g, p, h)?;
        g.softmax_rows(logits)
    }

    pub fn to_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_store(out, prefix, &self.store);
    }

    pub fn from_checkpoint(config: ClassifierConfig, ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut c = ClassifierC::new(config)?;
        restore_store(ckpt, prefix, &mut c.store)?;
        Ok(c)
    }
}

/// `P(k | X_n)` rows for each segment.
pub fn classifier_apply(c: &ClassifierC, segments: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(APPLY_CHUNK) {
        let mut g = Graph::new();
        let p = c.store.bind(&mut g);
        let x = g.input(c.input_tensor(chunk)?);
        let probs = c.forward(&mut g, &p, x)?;
        let t = g.value(probs);
        rows.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Added to the epoch index when seeding batch order, so successive
    /// calls see fresh permutations.
    pub epoch_offset: u64,
}

/// Minimises the cross-entropy of `targets` with plain SGD; returns the mean
/// batch loss of each epoch.
pub fn fit_classifier(c: &mut ClassifierC, segments: &[&[f64]], targets: &[usize], opts: &FitOptions) -> Result<Vec<f64>> {
    if segments.len() != targets.len() {
        return Err(GeneError::dim("segments and targets differ in length"));
    }
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let order = crate::data::batches(segments.len(), opts.batch, opts.seed, opts.epoch_offset + epoch as u64);
        let mut total = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let batch: Vec<&[f64]> = idx.iter().map(|&i| segments[i]).collect();
            let tgt: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let p = c.store.bind(&mut g);
            let x = g.input(c.input_tensor(&batch)?);
            let probs = c.forward(&mut g, &p, x)?;
            let loss = g.cross_entropy(probs, &tgt, None)?;
            let ctx = || format!("classifier epoch {epoch} batch {b}");
            let grads = g.backward(loss).map_err(|e| e.context(ctx()))?;
            c.store.accumulate(&grads, &p);
            c.store.sgd_step(opts.lr).map_err(|e| e.context(ctx()))?;
            total += g.value(loss).item();
        }
        trace.push(total / order.len().max(1) as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(k: usize) -> ClassifierConfig {
        ClassifierConfig {
            k,
            points: 5,
            variables: 2,
            hidden: 8,
            norm: Standardizer::identity(2),
            seed: 3,
        }
    }

    #[test]
    fn zero_output_gives_uniform_rows() {
        let mut c = ClassifierC::new(config(4)).unwrap();
        c.zero_output();
        let seg = vec![0.3; 10];
        let rows = classifier_apply(&c, &[&seg, &seg]).unwrap();
        for r in rows {
            assert!(r.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let c = ClassifierC::new(config(3)).unwrap();
        let mut rng = Rng::new(8);
        let segs: Vec<Vec<f64>> = (0..50).map(|_| (0..10).map(|_| rng.normal(0.0, 3.0)).collect()).collect();
        let refs: Vec<&[f64]> = segs.iter().map(|s| s.as_slice()).collect();
        for r in classifier_apply(&c, &refs).unwrap() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(classifier_apply(&c, &[&[1.0, 2.0]]).is_err());
    }

    #[test]
    fn learns_separable_fixture() {
        let mut c = ClassifierC::new(config(2)).unwrap();
        let mut rng = Rng::new(1);
        let mut segs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let l = i % 2;
            let centre = if l == 0 { -1.0 } else { 1.0 };
            segs.push((0..10).map(|_| rng.normal(centre, 0.5)).collect::<Vec<f64>>());
            labels.push(l);
        }
        let refs: Vec<&[f64]> = segs.iter().map(|s| s.as_slice()).collect();
        let opts = FitOptions {
            epochs: 20,
            lr: 0.05,
            batch: 16,
            seed: 2,
            epoch_offset: 0,
        };
        let trace = fit_classifier(&mut c, &refs, &labels, &opts).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        let pred = classifier_apply(&c, &refs).unwrap();
        let agree = pred
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| crate::numcore::argmax(p) == l)
            .count();
        assert!(agree as f64 / labels.len() as f64 >= 0.99, "{agree}");
    }
}
