//! Metrics: MAPE, precision/recall/Fβ, homogeneity, silhouette and a
//! histogram KL estimate, plus the two sanity baselines.

mod baselines;
mod report;

pub use baselines::{baselines, one_nn_predict, persistence_mape, BaselineTask};
pub use report::{default_positive, event_report, MetricReport};

use crate::error::{GeneError, Result};

/// Entries with `|actual|` at or below this are left out of MAPE.
pub const MAPE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mape {
    /// Percentage.
    pub value: f64,
    pub excluded: usize,
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<Mape> {
    if actual.len() != predicted.len() {
        return Err(GeneError::dim(format!(
            "mape: {} actual vs {} predicted values",
            actual.len(),
            predicted.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &p) in actual.iter().zip(predicted) {
        if a.abs() > MAPE_EPS {
            sum += ((a - p) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(GeneError::data("mape: every actual value is zero"));
    }
    Ok(Mape {
        value: 100.0 * sum / used as f64,
        excluded: actual.len() - used,
    })
}

/// Binary scores for one positive class, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbetaMetrics {
    pub precision: f64,
    pub recall: f64,
    /// `(β, Fβ)` in the order requested.
    pub fbeta: Vec<(f64, f64)>,
    pub accuracy: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl FbetaMetrics {
    pub fn f(&self, beta: f64) -> Option<f64> {
        self.fbeta.iter().find(|(b, _)| *b == beta).map(|&(_, f)| f)
    }
}

pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Precision/recall from raw counts. `correct` and `total` give accuracy.
pub fn fbeta_from_counts(tp: usize, fp: usize, fn_: usize, correct: usize, total: usize, betas: &[f64]) -> FbetaMetrics {
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    FbetaMetrics {
        precision,
        recall,
        fbeta: betas.iter().map(|&b| (b, fbeta(precision, recall, b))).collect(),
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        precision_undefined,
        recall_undefined,
    }
}

/// One-vs-rest scores for `positive`. Every label must appear in `classes`.
pub fn fbeta_metrics(truth: &[i64], predicted: &[i64], classes: &[i64], positive: i64, betas: &[f64]) -> Result<FbetaMetrics> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(GeneError::dim(format!(
            "fbeta: {} true vs {} predicted labels",
            truth.len(),
            predicted.len()
        )));
    }
    if let Some(bad) = std::iter::once(&positive).chain(truth).chain(predicted).find(|l| !classes.contains(l)) {
        return Err(GeneError::data(format!("unknown class label {bad}")));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0, 0, 0, 0);
    for (&t, &p) in truth.iter().zip(predicted) {
        correct += usize::from(t == p);
        match (t == positive, p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    Ok(fbeta_from_counts(tp, fp, fn_, correct, truth.len(), betas))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `1 − H(C|K)/H(C)`; 0 when the ground truth has a single class.
pub fn homogeneity(truth: &[usize], assigned: &[usize]) -> Result<f64> {
    if truth.len() != assigned.len() {
        return Err(GeneError::dim("homogeneity: label lists differ in length"));
    }
    if truth.is_empty() {
        return Err(GeneError::data("homogeneity: no points"));
    }
    let n = truth.len() as f64;
    let nc = truth.iter().max().unwrap() + 1;
    let nk = assigned.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; nc * nk];
    let mut class_counts = vec![0usize; nc];
    let mut cluster_counts = vec![0usize; nk];
    for (&c, &k) in truth.iter().zip(assigned) {
        joint[k * nc + c] += 1;
        class_counts[c] += 1;
        cluster_counts[k] += 1;
    }
    let h_c = entropy(class_counts.into_iter(), n);
    if h_c <= 0.0 {
        return Ok(0.0);
    }
    let mut h_c_given_k = 0.0;
    for k in 0..nk {
        let nk_count = cluster_counts[k] as f64;
        for &j in &joint[k * nc..(k + 1) * nc] {
            if j > 0 {
                h_c_given_k -= j as f64 / n * (j as f64 / nk_count).ln();
            }
        }
    }
    Ok((1.0 - h_c_given_k / h_c).clamp(0.0, 1.0))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distances. Points alone in their cluster
/// score 0. Quadratic in the number of points.
pub fn silhouette(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(GeneError::dim("silhouette: features and labels differ in length"));
    }
    let nk = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; nk];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(GeneError::data("silhouette is undefined for a single cluster"));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; nk];
    for (i, fi) in features.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, fj) in features.iter().enumerate() {
            if i != j {
                sums[labels[j]] += euclid(fi, fj);
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..nk)
            .filter(|&k| k != own && sizes[k] > 0)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let den = a.max(b);
        if den > 0.0 {
            total += (b - a) / den;
        }
    }
    Ok(total / features.len() as f64)
}

/// KL(real‖generated) in nats between equal-bin histograms over the union
/// range, with one pseudo-count added to every bin.
pub fn empirical_kl(real: &[f64], generated: &[f64], bins: usize) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(GeneError::data("empirical_kl needs two non-empty samples"));
    }
    if bins == 0 {
        return Err(GeneError::data("empirical_kl needs at least one bin"));
    }
    let (lo, hi) = real
        .iter()
        .chain(generated)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(GeneError::numeric("empirical_kl: non-finite value"));
    }
    let width = (hi - lo) / bins as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![1.0; bins];
        for &x in xs {
            let b = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
            h[b.min(bins - 1)] += 1.0;
        }
        let total: f64 = h.iter().sum();
        h.iter_mut().for_each(|c| *c /= total);
        h
    };
    let p = hist(real);
    let q = hist(generated);
    let kl: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
    Ok(kl.max(0.0))
}
