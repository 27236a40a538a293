//! Synthetic benchmark: clusters whose every scalar is drawn from an
//! equal-weight two-component Gaussian mixture specific to the cluster and
//! variable.

use serde::{Deserialize, Serialize};

use super::{Meta, Sample, SeriesDataset};
use crate::error::{GeneError, Result};
use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    /// Windows only.
    #[default]
    None,
    /// Adds a next-window target drawn from the same cluster.
    Value,
    /// Labels every sample with its cluster index.
    Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_clusters: usize,
    pub samples_per_cluster: usize,
    pub windows: usize,
    pub points: usize,
    pub variables: usize,
    pub mu_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub task: SynthTask,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_clusters: 5,
            samples_per_cluster: 10_000,
            windows: 10,
            points: 20,
            variables: 3,
            mu_range: (20.0, 30.0),
            sigma_range: (0.0, 5.0),
            task: SynthTask::None,
            seed: 0,
        }
    }
}

/// Mixture components of one cluster, one pair per variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub mu: Vec<(f64, f64)>,
    pub sigma: Vec<(f64, f64)>,
}

impl ClusterParams {
    pub fn draw(variables: usize, mu_range: (f64, f64), sigma_range: (f64, f64), rng: &mut Rng) -> Self {
        let mut mu = Vec::with_capacity(variables);
        let mut sigma = Vec::with_capacity(variables);
        for _ in 0..variables {
            mu.push((rng.uniform(mu_range.0, mu_range.1), rng.uniform(mu_range.0, mu_range.1)));
            sigma.push((
                rng.uniform(sigma_range.0, sigma_range.1),
                rng.uniform(sigma_range.0, sigma_range.1),
            ));
        }
        ClusterParams { mu, sigma }
    }

    /// Mixture mean of variable `v`.
    pub fn mean(&self, v: usize) -> f64 {
        0.5 * (self.mu[v].0 + self.mu[v].1)
    }

    fn draw_value(&self, v: usize, rng: &mut Rng) -> f64 {
        if rng.next_f64() < 0.5 {
            rng.normal(self.mu[v].0, self.sigma[v].0)
        } else {
            rng.normal(self.mu[v].1, self.sigma[v].1)
        }
    }
}

/// Draws cluster parameters from `cfg` and generates the dataset together
/// with the ground-truth cluster of every sample.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(SeriesDataset, Vec<usize>)> {
    let mut rng = Rng::new(cfg.seed);
    let params: Vec<ClusterParams> = (0..cfg.n_clusters)
        .map(|_| ClusterParams::draw(cfg.variables, cfg.mu_range, cfg.sigma_range, &mut rng))
        .collect();
    generate_from_params(&params, cfg, &mut rng)
}

pub fn generate_from_params(
    params: &[ClusterParams],
    cfg: &SyntheticConfig,
    rng: &mut Rng,
) -> Result<(SeriesDataset, Vec<usize>)> {
    if params.is_empty() || cfg.samples_per_cluster == 0 || cfg.windows == 0 || cfg.points == 0 || cfg.variables == 0 {
        return Err(GeneError::data("synthetic generator needs positive sizes"));
    }
    if params.iter().any(|p| p.mu.len() != cfg.variables || p.sigma.len() != cfg.variables) {
        return Err(GeneError::dim("cluster parameters do not match the variable count"));
    }
    let (w, t, s) = (cfg.windows, cfg.points, cfg.variables);
    let mut samples = Vec::with_capacity(params.len() * cfg.samples_per_cluster);
    let mut truth = Vec::with_capacity(samples.capacity());
    let draw_window = |p: &ClusterParams, rng: &mut Rng, out: &mut Vec<f64>| {
        for _ in 0..t {
            for v in 0..s {
                out.push(p.draw_value(v, rng));
            }
        }
    };
    for (c, p) in params.iter().enumerate() {
        for _ in 0..cfg.samples_per_cluster {
            let mut windows = Vec::with_capacity(w * t * s);
            for _ in 0..w {
                draw_window(p, rng, &mut windows);
            }
            let next = match cfg.task {
                SynthTask::Value => {
                    let mut n = Vec::with_capacity(t * s);
                    draw_window(p, rng, &mut n);
                    Some(n)
                }
                _ => None,
            };
            let label = (cfg.task == SynthTask::Event).then_some(c as i64);
            samples.push(Sample {
                id: format!("s{:06}", samples.len()),
                windows,
                label,
                next,
                truth: Some(c),
                time: None,
            });
            truth.push(c);
        }
    }
    let classes = if cfg.task == SynthTask::Event {
        (0..params.len() as i64).collect()
    } else {
        Vec::new()
    };
    let meta = Meta {
        windows: w,
        points: t,
        variables: s,
        classes,
        k_hint: Some(params.len()),
    };
    Ok((SeriesDataset::new(meta, samples)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_matches_benchmark() {
        let cfg = SyntheticConfig::default();
        assert_eq!(cfg.n_clusters * cfg.samples_per_cluster, 50_000);
        let small = SyntheticConfig {
            samples_per_cluster: 2,
            ..cfg
        };
        let (ds, truth) = generate_synthetic(&small).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!((ds.meta.windows, ds.meta.points, ds.meta.variables), (10, 20, 3));
        assert_eq!(truth, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn empirical_cluster_mean_matches_mixture_mean() {
        let cfg = SyntheticConfig {
            n_clusters: 2,
            samples_per_cluster: 10_000,
            windows: 1,
            points: 1,
            seed: 3,
            ..SyntheticConfig::default()
        };
        let mut rng = Rng::new(cfg.seed);
        let params: Vec<_> = (0..2)
            .map(|_| ClusterParams::draw(3, cfg.mu_range, cfg.sigma_range, &mut rng))
            .collect();
        let (ds, truth) = generate_from_params(&params, &cfg, &mut rng).unwrap();
        for (c, p) in params.iter().enumerate() {
            for v in 0..3 {
                let vals: Vec<f64> = ds
                    .samples
                    .iter()
                    .zip(&truth)
                    .filter(|(_, &t)| t == c)
                    .map(|(s, _)| s.windows[v])
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!((m - p.mean(v)).abs() < 0.1, "cluster {c} var {v}: {m} vs {}", p.mean(v));
            }
        }
    }

    #[test]
    fn zero_sigma_gives_only_component_means() {
        let p = ClusterParams {
            mu: vec![(21.0, 27.5)],
            sigma: vec![(0.0, 0.0)],
        };
        let cfg = SyntheticConfig {
            samples_per_cluster: 50,
            variables: 1,
            task: SynthTask::Value,
            ..SyntheticConfig::default()
        };
        let (ds, _) = generate_from_params(&[p], &cfg, &mut Rng::new(1)).unwrap();
        for s in &ds.samples {
            for v in s.windows.iter().chain(s.next.as_ref().unwrap()) {
                assert!(*v == 21.0 || *v == 27.5);
            }
        }
    }
}
