use serde::{Deserialize, Serialize};

use super::{PredictorConfig, PredictorModel, Task, WindowInputs};
use crate::data::{batches, SeriesDataset};
use crate::error::{GeneError, Result};
use crate::eval::{mape, MAPE_EPS};
use crate::generation::{d_loss_graph, g_fm_loss_graph, kl_loss_graph, GeneModel};
use crate::numcore::{argmax, Graph, Rng, Tensor, Var};
use crate::recognition::ClassifierC;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    #[default]
    Value,
    Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    /// Starting rate for the fusion and head parameters.
    pub lr: f64,
    /// Epochs between ÷`lr_decay` steps of `lr`.
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    /// Rate for the classifier and gene networks.
    pub fine_tune_lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Keep classifier and gene parameters fixed and skip their losses.
    pub freeze_genes: bool,
    /// Inverse-frequency class weights in the event loss.
    pub class_weights: bool,
    /// Draw `h_n` from the encoder posterior during training. When off the
    /// posterior mean is used, as at inference.
    pub sample_latents: bool,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: TaskKind::Value,
            seed: 0,
            epochs: 100,
            batch: 50,
            lr: 0.01,
            lr_decay_every: 20,
            lr_decay: 10.0,
            fine_tune_lr: 1e-4,
            lambda1: 1.0,
            lambda2: 1.0,
            freeze_genes: false,
            class_weights: false,
            sample_latents: true,
            fusion_hidden: 128,
            head_hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.checked_div(self.lr_decay_every).unwrap_or(0);
        self.lr / self.lr_decay.powi(steps as i32)
    }
}

/// Per-epoch bookkeeping. `val_metric` is MAPE (lower is better) for values
/// and accuracy in percent (higher is better) for events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub metric: String,
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    /// Epoch of the returned snapshot; `None` keeps the initial model.
    pub best_epoch: Option<usize>,
}

const NOISE_STREAM: u64 = 0xA99;
const BATCH_STREAM: u64 = 0xB47C_0000;

fn task_for(train: &SeriesDataset, kind: TaskKind) -> Result<Task> {
    match kind {
        TaskKind::Value => {
            if !train.has_next() {
                return Err(GeneError::data("value task needs next-window targets"));
            }
            let s = train.meta.variables;
            let mut sum = vec![0.0; s];
            let mut n = 0usize;
            for smp in &train.samples {
                for row in smp.next.as_deref().unwrap_or_default().chunks(s) {
                    for (a, v) in sum.iter_mut().zip(row) {
                        *a += v.abs();
                    }
                    n += 1;
                }
            }
            let scale = sum.iter().map(|a| if a / n as f64 > MAPE_EPS { a / n as f64 } else { 1.0 }).collect();
            Ok(Task::Value { scale })
        }
        TaskKind::Event => {
            if !train.has_labels() {
                return Err(GeneError::data("event task needs labels"));
            }
            Ok(Task::Event {
                classes: train.meta.classes.clone(),
            })
        }
    }
}

fn windows_of(ds: &SeriesDataset) -> Vec<&[f64]> {
    ds.samples.iter().map(|s| s.windows.as_slice()).collect()
}

/// Validation score of the model's inference path.
fn validate(model: &PredictorModel, val: &SeriesDataset) -> Result<f64> {
    let samples = windows_of(val);
    match model.task() {
        Task::Value { .. } => {
            let pred = model.predict_values(&samples)?;
            let actual: Vec<f64> = val.samples.iter().flat_map(|s| s.next.clone().unwrap_or_default()).collect();
            Ok(mape(&actual, &pred.concat())?.value)
        }
        Task::Event { classes } => {
            let probs = model.predict_events(&samples)?;
            let hits = probs
                .iter()
                .zip(&val.samples)
                .filter(|(p, s)| Some(classes[argmax(p)]) == s.label)
                .count();
            Ok(100.0 * hits as f64 / val.len() as f64)
        }
    }
}

struct Targets {
    /// Value rows already divided by the scale, or class indices.
    values: Option<Vec<Vec<f64>>>,
    classes: Option<Vec<usize>>,
    weights: Option<Vec<f64>>,
}

fn targets(train: &SeriesDataset, task: &Task, class_weights: bool) -> Result<Targets> {
    match task {
        Task::Value { scale } => Ok(Targets {
            values: Some(
                train
                    .samples
                    .iter()
                    .map(|s| {
                        s.next
                            .as_deref()
                            .unwrap_or_default()
                            .iter()
                            .enumerate()
                            .map(|(j, v)| v / scale[j % scale.len()])
                            .collect()
                    })
                    .collect(),
            ),
            classes: None,
            weights: None,
        }),
        Task::Event { classes } => {
            let idx: Vec<usize> = train
                .samples
                .iter()
                .map(|s| {
                    s.label
                        .and_then(|l| classes.iter().position(|&c| c == l))
                        .ok_or_else(|| GeneError::data(format!("sample {} has no known label", s.id)))
                })
                .collect::<Result<_>>()?;
            let weights = class_weights.then(|| {
                let mut counts = vec![0usize; classes.len()];
                idx.iter().for_each(|&i| counts[i] += 1);
                let n = idx.len() as f64;
                counts
                    .iter()
                    .map(|&c| if c == 0 { 0.0 } else { n / (classes.len() as f64 * c as f64) })
                    .collect()
            });
            Ok(Targets {
                values: None,
                classes: Some(idx),
                weights,
            })
        }
    }
}

/// Trains the fusion and head on `train` and fine-tunes the classifier and
/// gene networks, keeping the snapshot with the best validation score.
///
/// Assignment rows for the training windows come from `classifier` before
/// any update and stay fixed; their argmax is the classifier's target.
pub fn train_end_to_end(
    train: &SeriesDataset,
    val: &SeriesDataset,
    classifier: ClassifierC,
    genes: GeneModel,
    cfg: &TrainConfig,
) -> Result<(PredictorModel, TrainTrace)> {
    if train.is_empty() || val.is_empty() {
        return Err(GeneError::data("training and validation splits must be non-empty"));
    }
    let task = task_for(train, cfg.task)?;
    let config = PredictorConfig {
        task,
        windows: train.meta.windows,
        fusion_hidden: cfg.fusion_hidden,
        head_hidden: cfg.head_hidden,
        seed: cfg.seed,
    };
    let mut model = PredictorModel::new(config, classifier, genes)?;
    let samples = windows_of(train);
    let fixed = model.assign(&samples)?;
    let tgt = targets(train, model.task(), cfg.class_weights)?;
    let higher_better = matches!(model.task(), Task::Event { .. });
    let mut trace = TrainTrace {
        metric: if higher_better { "accuracy" } else { "mape" }.into(),
        ..Default::default()
    };
    let mut best: Option<(f64, PredictorModel)> = None;
    let mut rng = Rng::with_stream(cfg.seed, NOISE_STREAM);
    let tune = !cfg.freeze_genes;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        let order = batches(samples.len(), cfg.batch, cfg.seed ^ BATCH_STREAM, epoch as u64);
        for (b, idx) in order.iter().enumerate() {
            let ctx = || format!("training epoch {epoch} batch {b}");
            let loss = step(&mut model, &samples, &fixed, &tgt, idx, cfg, lr, tune, &mut rng).map_err(|e| e.context(ctx()))?;
            total += loss;
        }
        trace.train_loss.push(total / order.len().max(1) as f64);
        let score = validate(&model, val).map_err(|e| e.context(format!("validation after epoch {epoch}")))?;
        trace.val_metric.push(score);
        log::info!("epoch {epoch}: loss {:.5} val {} {score:.4}", total / order.len().max(1) as f64, trace.metric);
        let better = match &best {
            None => true,
            Some((s, _)) => {
                if higher_better {
                    score > *s
                } else {
                    score < *s
                }
            }
        };
        if better {
            best = Some((score, model.clone()));
            trace.best_epoch = Some(epoch);
        }
    }
    Ok((best.map_or(model, |(_, m)| m), trace))
}

fn noise(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect())
}

/// One batch update; returns the total loss.
#[allow(clippy::too_many_arguments)]
fn step(
    model: &mut PredictorModel,
    samples: &[&[f64]],
    fixed: &[Vec<Vec<f64>>],
    tgt: &Targets,
    idx: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    tune: bool,
    rng: &mut Rng,
) -> Result<f64> {
    let batch: Vec<&[f64]> = idx.iter().map(|&i| samples[i]).collect();
    let probs: Vec<Vec<Vec<f64>>> = idx.iter().map(|&i| fixed[i].clone()).collect();
    let inputs: WindowInputs = model.window_inputs(&batch, &probs)?;
    let rows = batch.len();
    let w = inputs.x.len();
    let dh = model.genes.config.latent;
    let gene_terms = tune && cfg.lambda1 != 0.0;
    let c_term = tune && cfg.lambda2 != 0.0;

    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let mut xs = Vec::with_capacity(w);
    let mut as_ = Vec::with_capacity(w);
    let mut hs = Vec::with_capacity(w);
    let mut kl_sum: Option<Var> = None;
    let mut fr_sum: Option<Var> = None;
    let mut ff_sum: Option<Var> = None;
    let mut fakes: Vec<Var> = Vec::new();
    let mut c_sum: Option<Var> = None;
    let add = |g: &mut Graph, acc: Option<Var>, v: Var| -> Result<Var> {
        match acc {
            None => Ok(v),
            Some(a) => g.add(a, v),
        }
    };
    let len = model.genes.window_len();
    for n in 0..w {
        let x = g.input(inputs.x[n].clone());
        let a = g.input(inputs.a[n].clone());
        let cond = g.input(inputs.cond[n].clone());
        let (mu, ls) = model.genes.encode_graph(&mut g, &p.genes, x, cond)?;
        let z = if cfg.sample_latents {
            noise(rng, rows, dh)?
        } else {
            Tensor::zeros(&[rows, dh])
        };
        let h = model.genes.latent_graph(&mut g, mu, ls, z)?;
        if gene_terms {
            let kl = kl_loss_graph(&mut g, mu, ls)?;
            kl_sum = Some(add(&mut g, kl_sum, kl)?);
            let fake = model.genes.generate_graph(&mut g, &p.genes, h, cond)?;
            let (_, fr) = model.genes.discriminate_graph(&mut g, &p.genes, x)?;
            let (_, ff) = model.genes.discriminate_graph(&mut g, &p.genes, fake)?;
            let fr = g.mean_rows(fr)?;
            let ff = g.mean_rows(ff)?;
            fr_sum = Some(add(&mut g, fr_sum, fr)?);
            ff_sum = Some(add(&mut g, ff_sum, ff)?);
            fakes.push(fake);
        }
        if c_term {
            let windows: Vec<&[f64]> = batch.iter().map(|s| &s[n * len..(n + 1) * len]).collect();
            let xc = g.input(model.classifier.input_tensor(&windows)?);
            let pc = model.classifier.forward(&mut g, &p.c, xc)?;
            let targets: Vec<usize> = probs.iter().map(|pr| argmax(&pr[n])).collect();
            let ce = g.cross_entropy(pc, &targets, None)?;
            c_sum = Some(add(&mut g, c_sum, ce)?);
        }
        xs.push(x);
        as_.push(a);
        hs.push(h);
    }
    let states = model.fuse_graph(&mut g, &p, &xs, &as_, &hs)?;
    let raw = model.head_graph(&mut g, &p, states[w - 1])?;
    let y = model.activate_graph(&mut g, raw)?;
    let app = match model.task() {
        Task::Value { .. } => {
            let values = tgt.values.as_ref().expect("value targets");
            let t: Vec<f64> = idx.iter().flat_map(|&i| values[i].iter().copied()).collect();
            let t = g.input(Tensor::matrix(rows, len, t)?);
            // Squared error summed over the window, averaged over the batch.
            let mse = crate::numcore::loss_mse(&mut g, y, t)?;
            g.scale(mse, len as f64)
        }
        Task::Event { .. } => {
            let classes = tgt.classes.as_ref().expect("class targets");
            let t: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
            g.cross_entropy(y, &t, tgt.weights.as_deref())?
        }
    };
    let mut objective = app;
    if let (Some(kl), Some(fr), Some(ff)) = (kl_sum, fr_sum, ff_sum) {
        let kl = g.scale(kl, 1.0 / w as f64);
        let fr = g.scale(fr, 1.0 / w as f64);
        let ff = g.scale(ff, 1.0 / w as f64);
        let fm = g_fm_loss_graph(&mut g, fr, ff)?;
        let gene = g.add(kl, fm)?;
        let gene = g.scale(gene, cfg.lambda1);
        objective = g.add(objective, gene)?;
    }
    if let Some(c) = c_sum {
        let c = g.scale(c, cfg.lambda2 / w as f64);
        objective = g.add(objective, c)?;
    }
    let grads = g.backward(objective)?;
    model.store.accumulate(&grads, &p.head);
    model.store.sgd_step(lr)?;
    let mut loss = g.value(objective).item();
    if tune {
        model.classifier.store.accumulate(&grads, &p.c);
        model.genes.encoder.accumulate(&grads, &p.genes.e);
        model.genes.generator.accumulate(&grads, &p.genes.g);
        model.classifier.store.sgd_step(cfg.fine_tune_lr)?;
        model.genes.encoder.sgd_step(cfg.fine_tune_lr)?;
        model.genes.generator.sgd_step(cfg.fine_tune_lr)?;
    }
    if gene_terms {
        // Discriminator step on every real window against detached fakes.
        let real: Vec<f64> = inputs.x.iter().flat_map(|t| t.data().iter().copied()).collect();
        let fake: Vec<f64> = fakes.iter().flat_map(|&f| g.value(f).data().iter().copied()).collect();
        let mut gd = Graph::new();
        let pd = model.genes.bind(&mut gd);
        let xr = gd.input(Tensor::matrix(rows * w, len, real)?);
        let xf = gd.input(Tensor::matrix(rows * w, len, fake)?);
        let (pr, _) = model.genes.discriminate_graph(&mut gd, &pd, xr)?;
        let (pf, _) = model.genes.discriminate_graph(&mut gd, &pd, xf)?;
        let ld = d_loss_graph(&mut gd, pr, pf)?;
        let ld = gd.scale(ld, cfg.lambda1);
        let grads = gd.backward(ld)?;
        model.genes.discriminator.accumulate(&grads, &pd.d);
        model.genes.discriminator.sgd_step(cfg.fine_tune_lr)?;
        loss += gd.value(ld).item();
    }
    Ok(loss)
}
