use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use super::config::*;
use crate::application::{train_end_to_end, write_predictions, Prediction, PredictorModel, TaskKind, TrainConfig};
use crate::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, SeriesDataset, SynthTask, SyntheticConfig,
};
use crate::error::{GeneError, Result};
use crate::eval::{
    baselines, default_positive, event_report, homogeneity, mape, silhouette, BaselineTask, MetricReport,
};
use crate::generation::{gene_kl, train_genes as fit_genes, write_distribution_csv, GeneConfig, GeneModel, GeneObjective, GeneTrainConfig};
use crate::numcore::Rng;
use crate::persistence::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint};
use crate::recognition::{
    classifier_apply, recognition_refine, window_features, write_assignment_csv, ClassifierC,
    ClassifierConfig, GeneAssignment, RefineConfig, Refinement,
};

/// Points used for the quadratic silhouette computation.
const SILHOUETTE_SAMPLE: usize = 5000;
/// Real windows per gene in the KL part of the train-genes report.
const REPORT_KL_CAP: usize = 500;

fn announce<C: Serialize>(command: &str, config: &C) -> String {
    let fp = fingerprint(config);
    println!("{command}: config fingerprint {fp}");
    fp
}

fn usage(msg: impl Into<String>) -> GeneError {
    GeneError::Usage(msg.into())
}

fn finish_report(mut r: MetricReport, seed: u64, fp: &str, path: Option<&Path>) -> Result<()> {
    r.seed = Some(seed);
    r.config_fingerprint = Some(fp.to_string());
    match path {
        Some(p) => r.save(p),
        None => {
            println!("{}", r.to_json());
            Ok(())
        }
    }
}

fn parse_synth_task(s: &str) -> Result<SynthTask> {
    match s {
        "none" => Ok(SynthTask::None),
        "value" => Ok(SynthTask::Value),
        "event" => Ok(SynthTask::Event),
        other => Err(usage(format!("unknown task `{other}` (none, value, event)"))),
    }
}

fn parse_task(s: &str) -> Result<TaskKind> {
    match s {
        "value" => Ok(TaskKind::Value),
        "event" => Ok(TaskKind::Event),
        other => Err(usage(format!("unknown task `{other}` (value, event)"))),
    }
}

pub fn synth(c: &SynthConfig) -> Result<()> {
    let out = required(&c.out, "out")?;
    announce("synth", c);
    let cfg = SyntheticConfig {
        n_clusters: c.clusters,
        samples_per_cluster: c.samples_per_cluster,
        windows: c.windows,
        points: c.points,
        variables: c.variables,
        task: parse_synth_task(&c.task)?,
        seed: c.seed,
        ..SyntheticConfig::default()
    };
    let (ds, _) = generate_synthetic(&cfg)?;
    save_dataset(&ds, out)?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn resolve_k(k: Option<usize>, ds: &SeriesDataset) -> Result<usize> {
    k.or(ds.meta.k_hint)
        .ok_or_else(|| usage("--k is required when the dataset has no K hint"))
}

/// Ground-truth cluster of every window, when every sample carries one.
fn window_truth(ds: &SeriesDataset) -> Option<Vec<usize>> {
    ds.samples
        .iter()
        .map(|s| s.truth)
        .collect::<Option<Vec<usize>>>()
        .map(|t| t.into_iter().flat_map(|c| std::iter::repeat_n(c, ds.meta.windows)).collect())
}

/// Silhouette on a seeded subsample of the window statistics.
fn sampled_silhouette(ds: &SeriesDataset, labels: &[usize], seed: u64) -> Result<Option<f64>> {
    let features = window_features(ds)?;
    let picks: Vec<usize> = if features.len() > SILHOUETTE_SAMPLE {
        let mut p = Rng::with_stream(seed, 0x5111).permutation(features.len());
        p.truncate(SILHOUETTE_SAMPLE);
        p.sort_unstable();
        p
    } else {
        (0..features.len()).collect()
    };
    let f: Vec<Vec<f64>> = picks.iter().map(|&i| features[i].clone()).collect();
    let l: Vec<usize> = picks.iter().map(|&i| labels[i]).collect();
    match silhouette(&f, &l) {
        Ok(s) => Ok(Some(s)),
        Err(GeneError::Data(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn assignment_report(ds: &SeriesDataset, r: &Refinement, seed: u64) -> Result<MetricReport> {
    let mut rep = MetricReport::new("assign");
    rep.set("k", r.assignment.k() as f64)?;
    rep.set("rounds", r.error_rates.len() as f64)?;
    rep.set("converged", if r.converged { 1.0 } else { 0.0 })?;
    for (i, e) in r.error_rates.iter().enumerate() {
        rep.set(&format!("error_rate_round_{}", i + 1), *e)?;
    }
    if let Some(truth) = window_truth(ds) {
        rep.set("homogeneity", homogeneity(&truth, r.assignment.hard())?)?;
        rep.set("kmeans_homogeneity", homogeneity(&truth, r.initial.hard())?)?;
    }
    if let Some(s) = sampled_silhouette(ds, r.assignment.hard(), seed)? {
        rep.set("silhouette", s)?;
    }
    if let Some(s) = sampled_silhouette(ds, r.initial.hard(), seed)? {
        rep.set("kmeans_silhouette", s)?;
    }
    Ok(rep)
}

pub fn assign(c: &AssignConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let fp = announce("assign", c);
    let ds = load_dataset(data)?;
    let rc = RefineConfig {
        k: resolve_k(c.k, &ds)?,
        seed: c.seed,
        max_outer: c.rounds,
        epochs_per_round: c.epochs,
        lr: c.lr,
        tol: c.tol,
        batch: c.batch.unwrap_or_else(|| default_batch(ds.len())),
        hidden: c.hidden,
    };
    let r = recognition_refine(&ds, &rc)?;
    if let Some(out) = &c.out {
        let mut buf = Vec::new();
        write_assignment_csv(&ds, &r.assignment, &mut buf)?;
        write_atomic(out, &buf)?;
    }
    if let Some(path) = &c.checkpoint {
        let mut tensors = Vec::new();
        r.classifier.to_tensors("C/", &mut tensors);
        let ckpt = Checkpoint {
            config: serde_json::json!({"kind": "classifier", "classifier": r.classifier.config}),
            tensors,
        };
        save_checkpoint(&ckpt, path)?;
    }
    let rep = assignment_report(&ds, &r, c.seed)?;
    println!("assign: {} rounds, converged {}", r.error_rates.len(), r.converged);
    finish_report(rep, c.seed, &fp, c.report.as_deref())
}

fn parse_objective(s: &str) -> Result<GeneObjective> {
    match s {
        "adversarial" => Ok(GeneObjective::Adversarial),
        "encoder-only" => Ok(GeneObjective::EncoderOnly),
        other => Err(usage(format!("unknown objective `{other}` (adversarial, encoder-only)"))),
    }
}

fn genes_checkpoint(classifier: &ClassifierC, genes: &GeneModel, fp: &str) -> Checkpoint {
    let mut tensors = Vec::new();
    classifier.to_tensors("C/", &mut tensors);
    genes.to_tensors("", &mut tensors);
    Checkpoint {
        config: serde_json::json!({
            "kind": "genes",
            "classifier": classifier.config,
            "genes": genes.config,
            "fingerprint": fp,
        }),
        tensors,
    }
}

/// Classifier and gene networks from a `train-genes` checkpoint.
pub fn load_gene_bundle(path: &Path) -> Result<(ClassifierC, GeneModel)> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some("genes") {
        return Err(GeneError::Checkpoint(format!("{} is not a gene checkpoint", path.display())));
    }
    let bad = |e: serde_json::Error| GeneError::Checkpoint(format!("{}: bad config: {e}", path.display()));
    let cc: ClassifierConfig = serde_json::from_value(ckpt.config["classifier"].clone()).map_err(bad)?;
    let gc: GeneConfig = serde_json::from_value(ckpt.config["genes"].clone()).map_err(bad)?;
    Ok((ClassifierC::from_checkpoint(cc, &ckpt, "C/")?, GeneModel::from_checkpoint(gc, &ckpt, "")?))
}

pub fn train_genes(c: &TrainGenesConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.checkpoint, "checkpoint")?;
    let fp = announce("train-genes", c);
    let ds = load_dataset(data)?;
    let batch = c.batch.unwrap_or_else(|| default_batch(ds.len()));
    let rc = RefineConfig {
        k: resolve_k(c.k, &ds)?,
        seed: c.seed,
        max_outer: c.rounds,
        epochs_per_round: c.assign_epochs,
        lr: c.assign_lr,
        tol: c.tol,
        batch,
        hidden: c.classifier_hidden,
    };
    let r = recognition_refine(&ds, &rc)?;
    let gc = GeneTrainConfig {
        seed: c.seed,
        epochs: c.epochs,
        lr: c.lr,
        batch,
        latent: c.latent,
        hidden: c.hidden,
        objective: parse_objective(&c.objective)?,
    };
    let (genes, trace) = fit_genes(&ds, &r.assignment, &gc)?;
    save_checkpoint(&genes_checkpoint(&r.classifier, &genes, &fp), out)?;
    let mut rep = assignment_report(&ds, &r, c.seed)?;
    rep.task = "train-genes".into();
    for (gene, kl) in gene_kl(&genes, &ds, &r.assignment, REPORT_KL_CAP, c.seed)?.iter().enumerate() {
        if let Some(v) = kl {
            rep.set(&format!("kl_gene_{gene}"), *v)?;
        }
    }
    if let Some(v) = trace.kl.last() {
        rep.set("final_kl_loss", *v)?;
    }
    if let Some(v) = trace.generator.last() {
        rep.set("final_generator_loss", *v)?;
    }
    if let Some(v) = trace.discriminator.last() {
        rep.set("final_discriminator_loss", *v)?;
    }
    println!("train-genes: wrote {}", out.display());
    match &c.report {
        Some(p) => finish_report(rep, c.seed, &fp, Some(p)),
        None => Ok(()),
    }
}

fn test_report(model: &PredictorModel, test: &SeriesDataset, positive: Option<i64>) -> Result<MetricReport> {
    let preds = model.predict_dataset(test)?;
    score(&preds, test, model.task().name(), positive)
}

/// Metrics of `preds` against `ds`, matched by sample id.
fn score(preds: &[Prediction], ds: &SeriesDataset, task: &str, positive: Option<i64>) -> Result<MetricReport> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let lookup = |id: &str| by_id.get(id).copied().ok_or_else(|| GeneError::data(format!("no prediction for sample {id}")));
    match task {
        "value" => {
            let mut actual = Vec::new();
            let mut predicted = Vec::new();
            for s in &ds.samples {
                let next = s.next.as_ref().ok_or_else(|| GeneError::data(format!("sample {} has no next window", s.id)))?;
                let p = lookup(&s.id)?
                    .pred_value
                    .as_ref()
                    .ok_or_else(|| GeneError::data(format!("prediction for {} has no value", s.id)))?;
                if p.len() != next.len() {
                    return Err(GeneError::dim(format!("prediction for {} has {} values, expected {}", s.id, p.len(), next.len())));
                }
                actual.extend_from_slice(next);
                predicted.extend_from_slice(p);
            }
            let m = mape(&actual, &predicted)?;
            let mut r = MetricReport::new("value");
            r.set("mape", m.value)?;
            r.set("mape_excluded", m.excluded as f64)?;
            Ok(r)
        }
        "event" => {
            let classes = &ds.meta.classes;
            let positive = positive
                .or_else(|| default_positive(classes))
                .ok_or_else(|| GeneError::data("dataset declares no classes"))?;
            let mut truth = Vec::new();
            let mut predicted = Vec::new();
            for s in &ds.samples {
                truth.push(s.label.ok_or_else(|| GeneError::data(format!("sample {} has no label", s.id)))?);
                predicted.push(
                    lookup(&s.id)?
                        .pred_class
                        .ok_or_else(|| GeneError::data(format!("prediction for {} has no class", s.id)))?,
                );
            }
            event_report(&truth, &predicted, classes, positive)
        }
        other => Err(usage(format!("unknown task `{other}` (value, event)"))),
    }
}

pub fn train(c: &TrainCommandConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let genes_path = required(&c.genes, "genes")?;
    let out = required(&c.checkpoint, "checkpoint")?;
    let fp = announce("train", c);
    let ds = load_dataset(data)?;
    let (classifier, genes) = load_gene_bundle(genes_path)?;
    let split = split_dataset(&ds, c.train_frac, c.val_frac, c.seed)?;
    let tc = TrainConfig {
        task: parse_task(&c.task)?,
        seed: c.seed,
        epochs: c.epochs,
        batch: c.batch.unwrap_or_else(|| default_batch(split.train.len())),
        lr: c.lr,
        fine_tune_lr: c.fine_tune_lr,
        lambda1: c.lambda1,
        lambda2: c.lambda2,
        freeze_genes: c.freeze_genes,
        class_weights: c.class_weights,
        fusion_hidden: c.fusion_hidden,
        head_hidden: c.head_hidden,
        ..TrainConfig::default()
    };
    let (model, trace) = train_end_to_end(&split.train, &split.val, classifier, genes, &tc)?;
    save_checkpoint(&model.to_checkpoint(), out)?;
    let mut rep = test_report(&model, &split.test, None)?;
    if let Some(e) = trace.best_epoch {
        rep.set("best_epoch", e as f64)?;
        rep.set(&format!("best_val_{}", trace.metric), trace.val_metric[e])?;
    }
    if let Some(l) = trace.train_loss.last() {
        rep.set("final_train_loss", *l)?;
    }
    if tc.task == TaskKind::Value {
        rep.set("persistence_mape", crate::eval::persistence_mape(&split.test)?.value)?;
    }
    println!("train: wrote {}", out.display());
    match &c.report {
        Some(p) => finish_report(rep, c.seed, &fp, Some(p)),
        None => Ok(()),
    }
}

pub fn predict(c: &PredictConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let ckpt = required(&c.checkpoint, "checkpoint")?;
    let out = required(&c.out, "out")?;
    announce("predict", c);
    let ds = load_dataset(data)?;
    let model = PredictorModel::from_checkpoint(&load_checkpoint(ckpt)?)?;
    let preds = model.predict_dataset(&ds)?;
    let mut buf = Vec::new();
    write_predictions(&preds, &mut buf)?;
    write_atomic(out, &buf)?;
    println!("predict: wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| GeneError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GeneError::data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn eval(c: &EvalConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let fp = announce("eval", c);
    let ds = load_dataset(data)?;
    let task = parse_task(&c.task)?;
    let rep = if c.baseline {
        let split = split_dataset(&ds, c.train_frac, c.val_frac, c.seed)?;
        let positive = c.positive.or_else(|| default_positive(&ds.meta.classes)).unwrap_or(1);
        let bt = match task {
            TaskKind::Value => BaselineTask::Value,
            TaskKind::Event => BaselineTask::Event,
        };
        baselines(&split.train, &split.test, bt, positive)?
    } else {
        let pred = required(&c.pred, "pred")?;
        score(&read_predictions(pred)?, &ds, &c.task, c.positive)?
    };
    finish_report(rep, c.seed, &fp, c.report.as_deref())
}

pub fn export_dist(c: &ExportConfig) -> Result<()> {
    let data = required(&c.data, "data")?;
    let ckpt = required(&c.checkpoint, "checkpoint")?;
    let out = required(&c.out, "out")?;
    announce("export-dist", c);
    let ds = load_dataset(data)?;
    let (classifier, genes) = load_gene_bundle(ckpt)?;
    let windows: Vec<&[f64]> = ds.windows().collect();
    let rows = classifier_apply(&classifier, &windows)?;
    let assignment = GeneAssignment::from_probs(&rows, classifier.k(), ds.meta.windows)?;
    let mut buf = Vec::new();
    write_distribution_csv(&genes, &ds, &assignment, c.cap, c.seed, &mut buf)?;
    write_atomic(out, &buf)?;
    println!("export-dist: wrote {}", out.display());
    Ok(())
}
