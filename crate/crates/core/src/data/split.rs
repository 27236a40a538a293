use super::SeriesDataset;
use crate::error::{GeneError, Result};
use crate::numcore::Rng;

#[derive(Clone, Debug)]
pub struct Split {
    pub train: SeriesDataset,
    pub val: SeriesDataset,
    pub test: SeriesDataset,
}

/// Splits into train/validation/test. Samples that all carry a start time
/// are split chronologically (train, then validation, then test); otherwise
/// the order is a seeded permutation.
pub fn split_dataset(ds: &SeriesDataset, train_frac: f64, val_frac_of_train: f64, seed: u64) -> Result<Split> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(train_frac) || !in_unit(val_frac_of_train) {
        return Err(GeneError::data(format!(
            "split fractions must lie in (0, 1): {train_frac}, {val_frac_of_train}"
        )));
    }
    let n = ds.len();
    let n_train_total = (n as f64 * train_frac).round() as usize;
    let n_val = (n_train_total as f64 * val_frac_of_train).round() as usize;
    let n_train = n_train_total.saturating_sub(n_val);
    let n_test = n - n_train_total.min(n);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(GeneError::data(format!(
            "{n} samples are too few for a {train_frac}/{val_frac_of_train} split"
        )));
    }
    let order: Vec<usize> = if ds.samples.iter().all(|s| s.time.is_some()) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            let (ta, tb) = (ds.samples[a].time.unwrap(), ds.samples[b].time.unwrap());
            ta.total_cmp(&tb)
        });
        idx
    } else {
        Rng::new(seed).permutation(n)
    };
    Ok(Split {
        train: ds.subset(&order[..n_train]),
        val: ds.subset(&order[n_train..n_train_total]),
        test: ds.subset(&order[n_train_total..]),
    })
}

/// Index batches over `0..n` for one epoch: a permutation seeded by
/// `(seed, epoch)`, cut into chunks of `batch_size` (the last may be short).
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    Rng::with_stream(seed, epoch)
        .permutation(n)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}
