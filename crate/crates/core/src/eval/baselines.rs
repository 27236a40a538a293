use crate::data::SeriesDataset;
use crate::error::{GeneError, Result};

use super::{event_report, mape, Mape, MetricReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineTask {
    Value,
    Event,
}

/// MAPE of repeating the last observed window as the forecast.
pub fn persistence_mape(ds: &SeriesDataset) -> Result<Mape> {
    if !ds.has_next() {
        return Err(GeneError::data("persistence baseline needs next-window targets"));
    }
    let wl = ds.meta.window_len();
    let last = ds.meta.windows - 1;
    let mut actual = Vec::with_capacity(ds.len() * wl);
    let mut predicted = Vec::with_capacity(ds.len() * wl);
    for s in &ds.samples {
        actual.extend_from_slice(s.next.as_deref().unwrap_or_default());
        predicted.extend_from_slice(s.window(&ds.meta, last));
    }
    mape(&actual, &predicted)
}

/// Label of the nearest training series by Euclidean distance on the
/// flattened windows. Ties go to the earlier training sample.
pub fn one_nn_predict(train: &SeriesDataset, test: &SeriesDataset) -> Result<Vec<i64>> {
    if train.is_empty() || !train.has_labels() {
        return Err(GeneError::data("1NN baseline needs a labelled training set"));
    }
    if train.meta.window_len() * train.meta.windows != test.meta.window_len() * test.meta.windows {
        return Err(GeneError::dim("train and test series differ in length"));
    }
    Ok(test
        .samples
        .iter()
        .map(|q| {
            let mut best = (f64::INFINITY, 0);
            for (i, s) in train.samples.iter().enumerate() {
                let d: f64 = s.windows.iter().zip(&q.windows).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            train.samples[best.1].label.unwrap_or_default()
        })
        .collect())
}

/// Persistence MAPE for value tasks, 1NN-ED scores for event tasks, always
/// evaluated on `test`.
pub fn baselines(train: &SeriesDataset, test: &SeriesDataset, task: BaselineTask, positive: i64) -> Result<MetricReport> {
    match task {
        BaselineTask::Value => {
            if train.is_empty() {
                return Err(GeneError::data("empty training set"));
            }
            let m = persistence_mape(test)?;
            let mut r = MetricReport::new("value");
            r.set("persistence_mape", m.value)?;
            r.set("mape_excluded", m.excluded as f64)?;
            Ok(r)
        }
        BaselineTask::Event => {
            let pred = one_nn_predict(train, test)?;
            let truth: Vec<i64> = test
                .samples
                .iter()
                .map(|s| s.label.ok_or_else(|| GeneError::data(format!("sample {} has no label", s.id))))
                .collect::<Result<_>>()?;
            let mut r = event_report(&truth, &pred, &test.meta.classes, positive)?;
            r.task = "event-1nn".into();
            Ok(r)
        }
    }
}
