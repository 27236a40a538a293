use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Common;
use crate::error::{GeneError, Result};

/// Batch size when none is given: 2000, or 50 for datasets under
/// [`SMALL_DATASET`] units.
pub const LARGE_BATCH: usize = 2000;
pub const SMALL_BATCH: usize = 50;
pub const SMALL_DATASET: usize = 10_000;

pub fn default_batch(units: usize) -> usize {
    if units >= SMALL_DATASET {
        LARGE_BATCH
    } else {
        SMALL_BATCH
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub out: Option<PathBuf>,
    pub samples_per_cluster: usize,
    pub clusters: usize,
    pub windows: usize,
    pub points: usize,
    pub variables: usize,
    pub task: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            out: None,
            samples_per_cluster: 10_000,
            clusters: 5,
            windows: 10,
            points: 20,
            variables: 3,
            task: "none".into(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the dataset's `K` hint.
    pub k: Option<usize>,
    pub seed: u64,
    pub rounds: usize,
    pub epochs: usize,
    pub batch: Option<usize>,
    pub lr: f64,
    pub tol: f64,
    pub hidden: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            data: None,
            out: None,
            report: None,
            checkpoint: None,
            k: None,
            seed: 0,
            rounds: 5,
            epochs: 10,
            batch: None,
            lr: 0.01,
            tol: 0.01,
            hidden: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainGenesConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub k: Option<usize>,
    pub seed: u64,
    pub rounds: usize,
    pub assign_epochs: usize,
    pub assign_lr: f64,
    pub tol: f64,
    pub classifier_hidden: usize,
    pub epochs: usize,
    pub batch: Option<usize>,
    pub lr: f64,
    pub latent: usize,
    pub hidden: usize,
    pub objective: String,
}

impl Default for TrainGenesConfig {
    fn default() -> Self {
        TrainGenesConfig {
            data: None,
            checkpoint: None,
            report: None,
            k: None,
            seed: 0,
            rounds: 5,
            assign_epochs: 10,
            assign_lr: 0.01,
            tol: 0.01,
            classifier_hidden: 32,
            epochs: 30,
            batch: None,
            lr: 0.001,
            latent: 32,
            hidden: 64,
            objective: "adversarial".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCommandConfig {
    pub data: Option<PathBuf>,
    pub genes: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub task: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch: Option<usize>,
    pub lr: f64,
    pub fine_tune_lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub freeze_genes: bool,
    pub class_weights: bool,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            data: None,
            genes: None,
            checkpoint: None,
            report: None,
            task: "value".into(),
            seed: 0,
            epochs: 100,
            batch: None,
            lr: 0.01,
            fine_tune_lr: 1e-4,
            lambda1: 1.0,
            lambda2: 1.0,
            train_frac: 0.8,
            val_frac: 0.1,
            freeze_genes: false,
            class_weights: false,
            fusion_hidden: 128,
            head_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub data: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub task: String,
    /// Defaults to class 1 if present, otherwise the last class.
    pub positive: Option<i64>,
    pub report: Option<PathBuf>,
    pub baseline: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            data: None,
            pred: None,
            task: "value".into(),
            positive: None,
            report: None,
            baseline: false,
            train_frac: 0.8,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub cap: usize,
    pub seed: u64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            data: None,
            checkpoint: None,
            out: None,
            cap: 200,
            seed: 0,
        }
    }
}

fn usage(msg: impl Into<String>) -> GeneError {
    GeneError::Usage(msg.into())
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value, origin: &str) -> Result<()> {
    let (serde_json::Value::Object(b), serde_json::Value::Object(o)) = (base, over) else {
        return Err(usage(format!("{origin}: expected a JSON object")));
    };
    for (key, value) in o {
        if !b.contains_key(&key) {
            return Err(usage(format!("{origin}: unknown option `{key}`")));
        }
        b.insert(key, value);
    }
    Ok(())
}

/// Defaults, then the `--config` file, then explicit flags.
pub(super) fn resolve<C, A>(common: &Common, flags: &A) -> Result<C>
where
    C: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let mut value = serde_json::to_value(C::default()).expect("config serializes");
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| GeneError::io(path, e))?;
        let file: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge(&mut value, file, &path.display().to_string())?;
    }
    merge(&mut value, serde_json::to_value(flags).expect("flags serialize"), "flags")?;
    serde_json::from_value(value).map_err(|e| usage(format!("invalid option: {e}")))
}

/// SHA-256 of the compact JSON of `config` (keys sorted), as hex.
pub fn fingerprint<C: Serialize>(config: &C) -> String {
    let canonical = serde_json::to_value(config).expect("config serializes").to_string();
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub(super) fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Flags {
        #[serde(skip_serializing_if = "Option::is_none")]
        epochs: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lr: Option<f64>,
    }

    #[test]
    fn precedence_defaults_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 7, "lr": 0.5, "seed": 3}"#).unwrap();
        let common = Common {
            config: Some(path),
            seed: None,
        };
        let c: TrainCommandConfig = resolve(&common, &Flags { epochs: Some(9), lr: None }).unwrap();
        assert_eq!(c.epochs, 9);
        assert_eq!(c.lr, 0.5);
        assert_eq!(c.seed, 3);
        assert_eq!(c.lambda1, 1.0);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epoch": 7}"#).unwrap();
        let common = Common {
            config: Some(path),
            seed: None,
        };
        let r: Result<TrainCommandConfig> = resolve(&common, &Flags { epochs: None, lr: None });
        assert!(matches!(r, Err(GeneError::Usage(_))));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = TrainCommandConfig::default();
        let mut b = a.clone();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a).len(), 64);
        b.seed = 1;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn batch_rule() {
        assert_eq!(default_batch(9_999), 50);
        assert_eq!(default_batch(10_000), 2000);
    }
}
