//! Gene recognition: k-means initialisation on window statistics, a
//! recurrent classifier, and the fit-then-relabel refinement loop.

mod classifier;
mod kmeans;

pub use classifier::{classifier_apply, fit_classifier, ClassifierC, ClassifierConfig, FitOptions};
pub use kmeans::{kmeans_best_of, kmeans_fit, KMeansFit};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{segment_stats, SeriesDataset, Standardizer};
use crate::error::{GeneError, Result};
use crate::numcore::argmax;

/// Per-window probability vectors over `K` genes plus their argmax.
///
/// Windows are ordered sample-major, matching [`SeriesDataset::windows`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneAssignment {
    k: usize,
    windows_per_sample: usize,
    probs: Vec<f64>,
    hard: Vec<usize>,
}

impl GeneAssignment {
    pub fn one_hot(labels: &[usize], k: usize, windows_per_sample: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(GeneError::data(format!("gene {bad} out of range for K = {k}")));
        }
        let mut probs = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            probs[i * k + l] = 1.0;
        }
        Self::check_layout(labels.len(), windows_per_sample)?;
        Ok(GeneAssignment {
            k,
            windows_per_sample,
            probs,
            hard: labels.to_vec(),
        })
    }

    pub fn from_probs(rows: &[Vec<f64>], k: usize, windows_per_sample: usize) -> Result<Self> {
        Self::check_layout(rows.len(), windows_per_sample)?;
        let mut probs = Vec::with_capacity(rows.len() * k);
        let mut hard = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(GeneError::dim(format!("window {i}: {} probabilities for K = {k}", r.len())));
            }
            if r.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(GeneError::data(format!("window {i}: not a probability vector")));
            }
            probs.extend_from_slice(r);
            hard.push(argmax(r));
        }
        Ok(GeneAssignment {
            k,
            windows_per_sample,
            probs,
            hard,
        })
    }

    fn check_layout(n: usize, w: usize) -> Result<()> {
        if w == 0 || !n.is_multiple_of(w) {
            return Err(GeneError::dim(format!("{n} windows do not split into samples of {w}")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn windows_per_sample(&self) -> usize {
        self.windows_per_sample
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn hard(&self) -> &[usize] {
        &self.hard
    }

    pub fn probs(&self, window: usize) -> &[f64] {
        &self.probs[window * self.k..(window + 1) * self.k]
    }

    /// Number of windows per gene.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &h in &self.hard {
            c[h] += 1;
        }
        c
    }
}

/// Fraction of windows whose hard gene differs.
pub fn assignment_error_rate(old: &GeneAssignment, new: &GeneAssignment) -> Result<f64> {
    if old.len() != new.len() || old.k != new.k {
        return Err(GeneError::dim(format!(
            "assignments of {}×{} and {}×{} windows/genes",
            old.len(),
            old.k,
            new.len(),
            new.k
        )));
    }
    if old.is_empty() {
        return Ok(0.0);
    }
    let diff = old.hard.iter().zip(&new.hard).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / old.len() as f64)
}

/// Concatenated mean and variance of every window (`2S` features).
pub fn window_features(ds: &SeriesDataset) -> Result<Vec<Vec<f64>>> {
    ds.windows()
        .map(|w| segment_stats(w, ds.meta.points, ds.meta.variables).map(|s| s.feature()))
        .collect()
}

/// Seeded k-means restarts used by [`init_assignment`].
pub const KMEANS_RESTARTS: usize = 4;

/// One-hot k-means clustering of the window statistics.
pub fn init_assignment(ds: &SeriesDataset, k: usize, seed: u64) -> Result<GeneAssignment> {
    let features = window_features(ds)?;
    let fit = kmeans_best_of(&features, k, seed, 100, KMEANS_RESTARTS)?;
    GeneAssignment::one_hot(&fit.labels, k, ds.meta.windows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub k: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub epochs_per_round: usize,
    pub lr: f64,
    pub tol: f64,
    pub batch: usize,
    pub hidden: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            k: 5,
            seed: 0,
            max_outer: 5,
            epochs_per_round: 10,
            lr: 0.01,
            tol: 0.01,
            batch: 64,
            hidden: 32,
        }
    }
}

pub struct Refinement {
    pub assignment: GeneAssignment,
    pub classifier: ClassifierC,
    /// Error rate between consecutive assignments, one entry per round.
    pub error_rates: Vec<f64>,
    /// Hard labels produced by the classifier after each round.
    pub round_labels: Vec<Vec<usize>>,
    pub initial: GeneAssignment,
    pub converged: bool,
}

/// k-means initialisation followed by [`refine_from`] with a fresh classifier.
pub fn recognition_refine(ds: &SeriesDataset, cfg: &RefineConfig) -> Result<Refinement> {
    let initial = init_assignment(ds, cfg.k, cfg.seed)?;
    let classifier = ClassifierC::new(ClassifierConfig {
        k: cfg.k,
        points: ds.meta.points,
        variables: ds.meta.variables,
        hidden: cfg.hidden,
        norm: Standardizer::fit(ds),
        seed: cfg.seed,
    })?;
    refine_from(ds, initial, classifier, cfg)
}

/// Each round warm-starts the classifier on the current hard labels, relabels
/// every window by its argmax, and compares. When the change rate drops to
/// `tol` the assignment the classifier was fitted to is kept; otherwise the
/// last relabelling is returned after `max_outer` rounds.
pub fn refine_from(
    ds: &SeriesDataset,
    initial: GeneAssignment,
    mut classifier: ClassifierC,
    cfg: &RefineConfig,
) -> Result<Refinement> {
    if initial.len() != ds.window_count() || classifier.k() != initial.k() {
        return Err(GeneError::dim("initial assignment does not cover the dataset"));
    }
    let segments: Vec<&[f64]> = ds.windows().collect();
    let mut current = initial.clone();
    let mut error_rates = Vec::new();
    let mut round_labels = Vec::new();
    let mut converged = false;
    for round in 0..cfg.max_outer {
        let opts = FitOptions {
            epochs: cfg.epochs_per_round,
            lr: cfg.lr,
            batch: cfg.batch,
            seed: cfg.seed,
            epoch_offset: (round * cfg.epochs_per_round) as u64,
        };
        fit_classifier(&mut classifier, &segments, current.hard(), &opts)
            .map_err(|e| e.context(format!("refinement round {}", round + 1)))?;
        let rows = classifier_apply(&classifier, &segments)?;
        let next = GeneAssignment::from_probs(&rows, cfg.k, ds.meta.windows)?;
        let rate = assignment_error_rate(&current, &next)?;
        log::info!("refinement round {}: error rate {rate:.4}", round + 1);
        error_rates.push(rate);
        round_labels.push(next.hard().to_vec());
        if rate <= cfg.tol {
            converged = true;
            break;
        }
        current = next;
    }
    Ok(Refinement {
        assignment: current,
        classifier,
        error_rates,
        round_labels,
        initial,
        converged,
    })
}

/// CSV `sample_id,window_index,hard_gene,p_0,…,p_{K-1}`.
pub fn write_assignment_csv<W: Write>(ds: &SeriesDataset, a: &GeneAssignment, mut w: W) -> Result<()> {
    if a.len() != ds.window_count() {
        return Err(GeneError::dim("assignment does not cover the dataset"));
    }
    let err = |e: std::io::Error| GeneError::data(format!("write failed: {e}"));
    let mut header = String::from("sample_id,window_index,hard_gene");
    for k in 0..a.k() {
        header.push_str(&format!(",p_{k}"));
    }
    writeln!(w, "{header}").map_err(err)?;
    let wps = ds.meta.windows;
    for (i, s) in ds.samples.iter().enumerate() {
        for n in 0..wps {
            let idx = i * wps + n;
            let mut line = format!("{},{},{}", s.id, n, a.hard()[idx]);
            for p in a.probs(idx) {
                line.push_str(&format!(",{p}"));
            }
            writeln!(w, "{line}").map_err(err)?;
        }
    }
    Ok(())
}
