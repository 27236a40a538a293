//! Gene application: a recurrent fusion over `(X_n, A_n, h_n)` per window
//! and a dense head for next-window values or event classes.

mod train;

pub use train::{train_end_to_end, TaskKind, TrainConfig, TrainTrace};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{GeneError, Result};
use crate::generation::{one_hot, GeneBound, GeneConfig, GeneModel};
use crate::numcore::{argmax, Activation, Bound, Graph, Mlp, ParamStore, Rng, RnnLayer, Tensor, Var};
use crate::persistence::{push_store, restore_store, Checkpoint};
use crate::recognition::{classifier_apply, ClassifierC, ClassifierConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    /// Next `T×S` window; `scale` holds one positive unit per variable.
    Value { scale: Vec<f64> },
    Event { classes: Vec<i64> },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Value { .. } => "value",
            Task::Event { .. } => "event",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub task: Task,
    pub windows: usize,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

/// Fusion recurrence, head, and the classifier and gene networks it feeds on.
#[derive(Clone, Debug)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub store: ParamStore,
    pub classifier: ClassifierC,
    pub genes: GeneModel,
    fusion: RnnLayer,
    head: Mlp,
}

/// Graph handles for every parameter group of a [`PredictorModel`].
pub struct PredictorBound {
    pub head: Bound,
    pub c: Bound,
    pub genes: GeneBound,
}

/// Result of one forward pass over a batch of samples.
pub struct Forward {
    /// `H_1..H_W`.
    pub states: Vec<Var>,
    /// Head output before the task activation.
    pub raw: Var,
}

/// Per-window inputs for one batch, laid out position-major.
pub struct WindowInputs {
    /// Standardised windows, one `batch × T·S` tensor per position.
    pub x: Vec<Tensor>,
    /// Assignment probabilities, `batch × K` per position.
    pub a: Vec<Tensor>,
    /// One-hot of each window's most likely gene.
    pub cond: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub pred_value: Option<Vec<f64>>,
    pub pred_class: Option<i64>,
    pub probs: Option<Vec<f64>>,
}

const CHUNK: usize = 256;

impl PredictorModel {
    pub fn new(config: PredictorConfig, classifier: ClassifierC, genes: GeneModel) -> Result<Self> {
        let gc = &genes.config;
        if classifier.k() != gc.k || classifier.window_len() != genes.window_len() {
            return Err(GeneError::dim("classifier and gene model disagree on K or window shape"));
        }
        if config.windows == 0 || config.fusion_hidden == 0 || config.head_hidden == 0 {
            return Err(GeneError::data("predictor needs positive window count and widths"));
        }
        let out = match &config.task {
            Task::Value { scale } => {
                if scale.len() != gc.variables || scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(GeneError::data("value scale must be positive, one per variable"));
                }
                genes.window_len()
            }
            Task::Event { classes } => {
                if classes.len() < 2 {
                    return Err(GeneError::data("event task needs at least two classes"));
                }
                classes.len()
            }
        };
        let mut rng = Rng::with_stream(config.seed, 0xF05E);
        let mut store = ParamStore::new(config.seed);
        let in_dim = genes.window_len() + gc.k + gc.latent;
        let fusion = RnnLayer::new(&mut store, "fusion", in_dim, config.fusion_hidden, &mut rng)?;
        let head = Mlp::new(
            &mut store,
            "head",
            &[config.fusion_hidden, config.head_hidden, out],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        )?;
        if matches!(config.task, Task::Value { .. }) {
            // Targets are divided by their mean magnitude, so a unit bias
            // starts every output near the data and clear of the relu floor.
            store.value_at_mut(head.last().b).fill(1.0);
        }
        Ok(PredictorModel {
            config,
            store,
            classifier,
            genes,
            fusion,
            head,
        })
    }

    pub fn task(&self) -> &Task {
        &self.config.task
    }

    pub fn k(&self) -> usize {
        self.genes.config.k
    }

    pub fn zero_head(&mut self) {
        self.head.last().zero(&mut self.store);
    }

    pub fn zero_fusion(&mut self) {
        for name in ["fusion.w", "fusion.u", "fusion.b"] {
            if let Some(p) = self.store.get_mut(name) {
                p.value.fill(0.0);
            }
        }
    }

    pub fn bind(&self, g: &mut Graph) -> PredictorBound {
        PredictorBound {
            head: self.store.bind(g),
            c: self.classifier.store.bind(g),
            genes: self.genes.bind(g),
        }
    }

    /// Stacks the windows of `samples` by position. `probs[i][n]` is the
    /// assignment row of window `n` of sample `i`.
    pub fn window_inputs(&self, samples: &[&[f64]], probs: &[Vec<Vec<f64>>]) -> Result<WindowInputs> {
        let w = self.config.windows;
        let len = self.genes.window_len();
        let k = self.k();
        if samples.len() != probs.len() {
            return Err(GeneError::dim("one assignment list per sample is required"));
        }
        let mut out = WindowInputs {
            x: Vec::with_capacity(w),
            a: Vec::with_capacity(w),
            cond: Vec::with_capacity(w),
        };
        for (s, p) in samples.iter().zip(probs) {
            if s.len() != w * len || p.len() != w || p.iter().any(|r| r.len() != k) {
                return Err(GeneError::dim(format!("sample needs {w} windows of {len} values with K = {k} probabilities")));
            }
        }
        for n in 0..w {
            let windows: Vec<&[f64]> = samples.iter().map(|s| &s[n * len..(n + 1) * len]).collect();
            out.x.push(self.genes.input_tensor(&windows)?);
            let a: Vec<f64> = probs.iter().flat_map(|p| p[n].iter().copied()).collect();
            let c: Vec<f64> = probs.iter().flat_map(|p| one_hot(argmax(&p[n]), k)).collect();
            out.a.push(Tensor::matrix(samples.len(), k, a)?);
            out.cond.push(Tensor::matrix(samples.len(), k, c)?);
        }
        Ok(out)
    }

    /// Fusion over position-major inputs already on the graph.
    pub fn fuse_graph(&self, g: &mut Graph, p: &PredictorBound, x: &[Var], a: &[Var], h: &[Var]) -> Result<Vec<Var>> {
        if x.len() != a.len() || x.len() != h.len() || x.is_empty() {
            return Err(GeneError::dim("fusion inputs must be aligned and non-empty"));
        }
        let rows = g.value(x[0]).rows();
        let mut state = self.fusion.zero_state(g, rows);
        let mut states = Vec::with_capacity(x.len());
        for n in 0..x.len() {
            let inp = g.concat_cols(&[x[n], a[n], h[n]])?;
            state = self.fusion.cell(g, &p.head, inp, state)?;
            states.push(state);
        }
        Ok(states)
    }

    pub fn head_graph(&self, g: &mut Graph, p: &PredictorBound, state: Var) -> Result<Var> {
        Ok(self.head.forward(g, &p.head, state)?.output)
    }

    /// Task activation: scaled relu for values, softmax for events.
    pub fn activate_graph(&self, g: &mut Graph, raw: Var) -> Result<Var> {
        match &self.config.task {
            Task::Value { .. } => Ok(g.relu(raw)),
            Task::Event { .. } => g.softmax_rows(raw),
        }
    }

    /// Forward pass with encoder means as latents.
    pub fn forward_mean(&self, g: &mut Graph, p: &PredictorBound, inputs: &WindowInputs) -> Result<Forward> {
        let mut xs = Vec::new();
        let mut as_ = Vec::new();
        let mut hs = Vec::new();
        for n in 0..inputs.x.len() {
            let x = g.input(inputs.x[n].clone());
            let c = g.input(inputs.cond[n].clone());
            let (mu, _) = self.genes.encode_graph(g, &p.genes, x, c)?;
            xs.push(x);
            as_.push(g.input(inputs.a[n].clone()));
            hs.push(mu);
        }
        let states = self.fuse_graph(g, p, &xs, &as_, &hs)?;
        let raw = self.head_graph(g, p, *states.last().expect("non-empty"))?;
        Ok(Forward { states, raw })
    }

    /// Assignment rows from the current classifier, grouped per sample.
    pub fn assign(&self, samples: &[&[f64]]) -> Result<Vec<Vec<Vec<f64>>>> {
        let len = self.genes.window_len();
        let windows: Vec<&[f64]> = samples.iter().flat_map(|s| s.chunks(len)).collect();
        let rows = classifier_apply(&self.classifier, &windows)?;
        Ok(rows.chunks(self.config.windows).map(|c| c.to_vec()).collect())
    }

    fn outputs(&self, samples: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            let probs = self.assign(chunk)?;
            let inputs = self.window_inputs(chunk, &probs)?;
            let mut g = Graph::new();
            let p = self.bind(&mut g);
            let f = self.forward_mean(&mut g, &p, &inputs)?;
            let y = self.activate_graph(&mut g, f.raw)?;
            let t = g.value(y);
            if !t.is_finite() {
                return Err(GeneError::numeric("prediction is not finite"));
            }
            out.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }

    fn unscale(&self, row: &[f64]) -> Vec<f64> {
        match &self.config.task {
            Task::Value { scale } => row.iter().enumerate().map(|(j, v)| v * scale[j % scale.len()]).collect(),
            Task::Event { .. } => row.to_vec(),
        }
    }

    /// Next-window forecasts in original units, each `T·S` long.
    pub fn predict_values(&self, samples: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if !matches!(self.config.task, Task::Value { .. }) {
            return Err(GeneError::Usage("model was trained for events, not values".into()));
        }
        Ok(self.outputs(samples)?.iter().map(|r| self.unscale(r)).collect())
    }

    /// Class probabilities in the order of the configured classes.
    pub fn predict_events(&self, samples: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if !matches!(self.config.task, Task::Event { .. }) {
            return Err(GeneError::Usage("model was trained for values, not events".into()));
        }
        self.outputs(samples)
    }

    pub fn predict_value(&self, sample: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_values(&[sample])?.remove(0))
    }

    pub fn predict_event(&self, sample: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_events(&[sample])?.remove(0))
    }

    pub fn predict_dataset(&self, ds: &SeriesDataset) -> Result<Vec<Prediction>> {
        let samples: Vec<&[f64]> = ds.samples.iter().map(|s| s.windows.as_slice()).collect();
        let ids = ds.samples.iter().map(|s| s.id.clone());
        Ok(match &self.config.task {
            Task::Value { .. } => ids
                .zip(self.predict_values(&samples)?)
                .map(|(id, v)| Prediction {
                    id,
                    pred_value: Some(v),
                    pred_class: None,
                    probs: None,
                })
                .collect(),
            Task::Event { classes } => ids
                .zip(self.predict_events(&samples)?)
                .map(|(id, p)| Prediction {
                    id,
                    pred_value: None,
                    pred_class: Some(classes[argmax(&p)]),
                    probs: Some(p),
                })
                .collect(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        self.classifier.to_tensors("C/", &mut tensors);
        self.genes.to_tensors("", &mut tensors);
        push_store(&mut tensors, "P/", &self.store);
        Checkpoint {
            config: serde_json::json!({
                "kind": "predictor",
                "predictor": self.config,
                "classifier": self.classifier.config,
                "genes": self.genes.config,
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = |name: &str| {
            ckpt.config
                .get(name)
                .cloned()
                .ok_or_else(|| GeneError::Checkpoint(format!("header has no {name} config")))
        };
        let bad = |e: serde_json::Error| GeneError::Checkpoint(format!("bad config: {e}"));
        if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some("predictor") {
            return Err(GeneError::Checkpoint("not a predictor checkpoint".into()));
        }
        let pc: PredictorConfig = serde_json::from_value(field("predictor")?).map_err(bad)?;
        let cc: ClassifierConfig = serde_json::from_value(field("classifier")?).map_err(bad)?;
        let gc: GeneConfig = serde_json::from_value(field("genes")?).map_err(bad)?;
        let classifier = ClassifierC::from_checkpoint(cc, ckpt, "C/")?;
        let genes = GeneModel::from_checkpoint(gc, ckpt, "")?;
        let mut m = PredictorModel::new(pc, classifier, genes)?;
        restore_store(ckpt, "P/", &mut m.store)?;
        Ok(m)
    }
}

/// `H_W` of one sample for explicit assignment rows and latents.
pub fn fuse_sequence(model: &PredictorModel, sample: &[f64], probs: &[Vec<f64>], latents: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(fusion_states(model, sample, probs, latents)?.pop().expect("non-empty"))
}

/// `H_1..H_W` of one sample.
pub fn fusion_states(model: &PredictorModel, sample: &[f64], probs: &[Vec<f64>], latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let len = model.genes.window_len();
    let dh = model.genes.config.latent;
    let k = model.k();
    let w = probs.len();
    if w == 0 || sample.len() != w * len || latents.len() != w || latents.iter().any(|h| h.len() != dh) || probs.iter().any(|a| a.len() != k) {
        return Err(GeneError::dim("fusion inputs do not match the model shapes"));
    }
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let mut xs = Vec::with_capacity(w);
    let mut as_ = Vec::with_capacity(w);
    let mut hs = Vec::with_capacity(w);
    for n in 0..w {
        xs.push(g.input(model.genes.input_tensor(&[&sample[n * len..(n + 1) * len]])?));
        as_.push(g.input(Tensor::matrix(1, k, probs[n].clone())?));
        hs.push(g.input(Tensor::matrix(1, dh, latents[n].clone())?));
    }
    let states = model.fuse_graph(&mut g, &p, &xs, &as_, &hs)?;
    Ok(states.iter().map(|&s| g.value(s).data().to_vec()).collect())
}

/// `L_app + λ1·(L_D + L_GD + L_KL) + λ2·L_C`.
pub fn total_loss(app: f64, d: f64, g_fm: f64, kl: f64, c: f64, lambda1: f64, lambda2: f64) -> f64 {
    app + lambda1 * (d + g_fm + kl) + lambda2 * c
}

/// One JSON object per line.
pub fn write_predictions<W: Write>(preds: &[Prediction], mut w: W) -> Result<()> {
    for p in preds {
        let line = serde_json::to_string(p).map_err(|e| GeneError::data(format!("serialize prediction: {e}")))?;
        writeln!(w, "{line}").map_err(|e| GeneError::data(format!("write failed: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Standardizer;
    use crate::numcore::gradcheck::check_gradients;

    pub(super) fn tiny(task: Task) -> PredictorModel {
        let classifier = ClassifierC::new(ClassifierConfig {
            k: 2,
            points: 3,
            variables: 2,
            hidden: 4,
            norm: Standardizer::identity(2),
            seed: 1,
        })
        .unwrap();
        let genes = GeneModel::new(GeneConfig {
            k: 2,
            points: 3,
            variables: 2,
            latent: 3,
            hidden: 5,
            norm: Standardizer::identity(2),
            seed: 1,
        })
        .unwrap();
        let cfg = PredictorConfig {
            task,
            windows: 4,
            fusion_hidden: 6,
            head_hidden: 5,
            seed: 9,
        };
        PredictorModel::new(cfg, classifier, genes).unwrap()
    }

    fn sample(rng: &mut Rng) -> Vec<f64> {
        (0..24).map(|_| rng.uniform(0.0, 3.0)).collect()
    }

    fn value_task() -> Task {
        Task::Value { scale: vec![2.0, 3.0] }
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 5.0);
        assert_eq!(total_loss(0.7, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0), 0.7);
        assert!((total_loss(0.5, 0.1, 0.2, 0.3, 0.4, 1.0, 1.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_fusion_gives_zero_state() {
        let mut m = tiny(value_task());
        m.zero_fusion();
        let mut rng = Rng::new(2);
        let s = sample(&mut rng);
        let probs = vec![vec![0.5, 0.5]; 4];
        let hs = vec![vec![0.1, 0.2, 0.3]; 4];
        assert!(fuse_sequence(&m, &s, &probs, &hs).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn states_in_open_interval_and_prefix_consistent() {
        let m = tiny(value_task());
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let s = sample(&mut rng);
            let probs: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    let p = rng.next_f64();
                    vec![p, 1.0 - p]
                })
                .collect();
            let hs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.normal(0.0, 2.0)).collect()).collect();
            let states = fusion_states(&m, &s, &probs, &hs).unwrap();
            assert!(states.iter().flatten().all(|v| v.abs() < 1.0));
            for n in 1..=4 {
                let prefix = fuse_sequence(&m, &s[..n * 6], &probs[..n], &hs[..n]).unwrap();
                assert_eq!(prefix, states[n - 1]);
            }
        }
    }

    #[test]
    fn fusion_gradient_wrt_u() {
        let m = tiny(value_task());
        let mut rng = Rng::new(4);
        let rows = 2;
        let mk = |rng: &mut Rng, r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let u0 = m.store.get("fusion.u").unwrap().value.clone();
        let inputs = vec![u0, mk(&mut rng, rows, 6), mk(&mut rng, rows, 2), mk(&mut rng, rows, 3), mk(&mut rng, rows, 6), mk(&mut rng, rows, 2), mk(&mut rng, rows, 3)];
        let w = m.store.get("fusion.w").unwrap().value.clone();
        let b = m.store.get("fusion.b").unwrap().value.clone();
        let err = check_gradients(&inputs, |g, v| {
            let wv = g.input(w.clone());
            let bv = g.input(b.clone());
            let mut h = g.input(Tensor::zeros(&[rows, 6]));
            for n in 0..2 {
                let x = g.concat_cols(&[v[1 + 3 * n], v[2 + 3 * n], v[3 + 3 * n]])?;
                h = crate::numcore::rnn_cell(g, x, h, wv, v[0], bv)?;
            }
            Ok(g.sum(h))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_head_outputs() {
        let mut m = tiny(value_task());
        m.zero_head();
        let mut rng = Rng::new(5);
        let s = sample(&mut rng);
        assert!(m.predict_value(&s).unwrap().iter().all(|&v| v == 0.0));
        let mut e = tiny(Task::Event { classes: vec![0, 1, 2] });
        e.zero_head();
        let p = e.predict_event(&s).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(matches!(e.predict_value(&s), Err(GeneError::Usage(_))));
        assert!(matches!(m.predict_event(&s), Err(GeneError::Usage(_))));
    }

    #[test]
    fn predictions_are_valid_and_repeatable() {
        let m = tiny(value_task());
        let e = tiny(Task::Event { classes: vec![3, 5] });
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let s = sample(&mut rng);
            let v = m.predict_value(&s).unwrap();
            assert!(v.iter().all(|&x| x >= 0.0));
            assert_eq!(v, m.predict_value(&s).unwrap());
            let p = e.predict_event(&s).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(p, e.predict_event(&s).unwrap());
        }
        assert!(m.predict_value(&[0.0; 5]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(Task::Event { classes: vec![0, 1] });
        let bytes = m.to_checkpoint().to_bytes().unwrap();
        let back = PredictorModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    }
}
