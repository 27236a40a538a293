use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fbeta_metrics;
use crate::error::{GeneError, Result};
use crate::persistence::write_atomic;

/// Named scalar results for one task, serialized as pretty JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
}

impl MetricReport {
    pub fn new(task: impl Into<String>) -> Self {
        MetricReport {
            task: task.into(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(GeneError::numeric(format!("metric {name} is {value}")));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        write_atomic(path.as_ref(), text.as_bytes())
    }
}

/// Accuracy plus P/R/F1/F0.5 for `positive`, and the same scores for every
/// class taken as positive. Percentages.
pub fn event_report(truth: &[i64], predicted: &[i64], classes: &[i64], positive: i64) -> Result<MetricReport> {
    let mut r = MetricReport::new("event");
    let m = fbeta_metrics(truth, predicted, classes, positive, &[1.0, 0.5])?;
    r.set("accuracy", 100.0 * m.accuracy)?;
    r.set("precision", 100.0 * m.precision)?;
    r.set("recall", 100.0 * m.recall)?;
    r.set("f1", 100.0 * m.f(1.0).unwrap_or(0.0))?;
    r.set("f0_5", 100.0 * m.f(0.5).unwrap_or(0.0))?;
    r.set("positive_class", positive as f64)?;
    if m.precision_undefined {
        r.flags.push("precision_undefined".into());
    }
    if m.recall_undefined {
        r.flags.push("recall_undefined".into());
    }
    for &c in classes {
        let m = fbeta_metrics(truth, predicted, classes, c, &[1.0])?;
        let mut row = BTreeMap::new();
        row.insert("precision".to_string(), 100.0 * m.precision);
        row.insert("recall".to_string(), 100.0 * m.recall);
        row.insert("f1".to_string(), 100.0 * m.f(1.0).unwrap_or(0.0));
        r.per_class.insert(c.to_string(), row);
    }
    Ok(r)
}

/// Class 1 when the label set has it, otherwise the last class.
pub fn default_positive(classes: &[i64]) -> Option<i64> {
    if classes.contains(&1) {
        Some(1)
    } else {
        classes.last().copied()
    }
}
