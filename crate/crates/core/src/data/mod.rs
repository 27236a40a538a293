//! Dataset model, JSON Lines I/O, the synthetic mixture benchmark, segment
//! statistics, splitting and batching.

mod io;
mod split;
mod synthetic;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use split::{batches, split_dataset, Split};
pub use synthetic::{generate_from_params, generate_synthetic, ClusterParams, SynthTask, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{GeneError, Result};

/// Shape and class metadata shared by every sample of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(rename = "W")]
    pub windows: usize,
    #[serde(rename = "T")]
    pub points: usize,
    #[serde(rename = "S")]
    pub variables: usize,
    #[serde(default)]
    pub classes: Vec<i64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k_hint: Option<usize>,
}

impl Meta {
    /// Values per window (`T·S`).
    pub fn window_len(&self) -> usize {
        self.points * self.variables
    }

    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }
}

/// One multivariate series cut into `W` windows of `T×S` values.
///
/// Windows are stored flattened, window-major then time-major then variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub windows: Vec<f64>,
    pub label: Option<i64>,
    pub next: Option<Vec<f64>>,
    /// Generating cluster, when known (synthetic data).
    pub truth: Option<usize>,
    /// Start time used for chronological splits.
    pub time: Option<f64>,
}

impl Sample {
    pub fn window(&self, meta: &Meta, n: usize) -> &[f64] {
        let len = meta.window_len();
        &self.windows[n * len..(n + 1) * len]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub meta: Meta,
    pub samples: Vec<Sample>,
}

impl SeriesDataset {
    /// Validates shapes, labels and finiteness.
    pub fn new(meta: Meta, samples: Vec<Sample>) -> Result<Self> {
        let ds = SeriesDataset { meta, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.windows == 0 || m.points == 0 || m.variables == 0 {
            return Err(GeneError::data(format!(
                "W, T, S must be positive (got {}, {}, {})",
                m.windows, m.points, m.variables
            )));
        }
        if self.samples.is_empty() {
            return Err(GeneError::data("dataset has no samples"));
        }
        let with_label = self.samples[0].label.is_some();
        let with_next = self.samples[0].next.is_some();
        for s in &self.samples {
            if s.windows.len() != m.windows * m.window_len() {
                return Err(GeneError::data(format!(
                    "sample {:?}: {} values, expected W·T·S = {}",
                    s.id,
                    s.windows.len(),
                    m.windows * m.window_len()
                )));
            }
            if s.windows.iter().any(|v| !v.is_finite()) {
                return Err(GeneError::data(format!("sample {:?}: non-finite value", s.id)));
            }
            if s.label.is_some() != with_label || s.next.is_some() != with_next {
                return Err(GeneError::data(format!(
                    "sample {:?}: label/next presence differs from the first sample",
                    s.id
                )));
            }
            if let Some(l) = s.label {
                if m.class_index(l).is_none() {
                    return Err(GeneError::data(format!(
                        "sample {:?}: label {l} not in class set {:?}",
                        s.id, m.classes
                    )));
                }
            }
            if let Some(n) = &s.next {
                if n.len() != m.window_len() {
                    return Err(GeneError::data(format!(
                        "sample {:?}: next window has {} values, expected {}",
                        s.id,
                        n.len(),
                        m.window_len()
                    )));
                }
                if n.iter().any(|v| !v.is_finite()) {
                    return Err(GeneError::data(format!("sample {:?}: non-finite next value", s.id)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.samples.first().is_some_and(|s| s.label.is_some())
    }

    pub fn has_next(&self) -> bool {
        self.samples.first().is_some_and(|s| s.next.is_some())
    }

    /// Total number of windows across samples.
    pub fn window_count(&self) -> usize {
        self.samples.len() * self.meta.windows
    }

    /// Every window, sample-major.
    pub fn windows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let len = self.meta.window_len();
        self.samples.iter().flat_map(move |s| s.windows.chunks(len))
    }

    pub fn subset(&self, indices: &[usize]) -> SeriesDataset {
        SeriesDataset {
            meta: self.meta.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Per-variable mean and biased variance of one `T×S` window.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl SegmentStats {
    /// `[mean..., variance...]`, the clustering feature of a window.
    pub fn feature(&self) -> Vec<f64> {
        let mut f = self.mean.clone();
        f.extend_from_slice(&self.variance);
        f
    }
}

pub fn segment_stats(segment: &[f64], points: usize, variables: usize) -> Result<SegmentStats> {
    if points == 0 || segment.len() != points * variables {
        return Err(GeneError::dim(format!(
            "segment of {} values is not {points}×{variables}",
            segment.len()
        )));
    }
    let t = points as f64;
    let mut mean = vec![0.0; variables];
    for row in segment.chunks(variables) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut variance = vec![0.0; variables];
    for row in segment.chunks(variables) {
        for ((acc, v), m) in variance.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|v| *v /= t);
    Ok(SegmentStats { mean, variance })
}

/// Per-variable standardisation `(x - mean) / std`, fitted on training
/// windows. A zero spread falls back to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &SeriesDataset) -> Self {
        let s = ds.meta.variables;
        let mut mean = vec![0.0; s];
        let mut n = 0usize;
        for w in ds.windows() {
            for row in w.chunks(s) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
                n += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; s];
        for w in ds.windows() {
            for row in w.chunks(s) {
                for ((a, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(variables: usize) -> Self {
        Standardizer {
            mean: vec![0.0; variables],
            std: vec![1.0; variables],
        }
    }

    pub fn apply_into(&self, window: &[f64], out: &mut Vec<f64>) {
        let s = self.mean.len();
        for (i, v) in window.iter().enumerate() {
            out.push((v - self.mean[i % s]) / self.std[i % s]);
        }
    }

    pub fn invert(&self, window: &[f64]) -> Vec<f64> {
        let s = self.mean.len();
        window
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % s] + self.mean[i % s])
            .collect()
    }
}
