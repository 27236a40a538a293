use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{d_loss_graph, g_fm_loss_graph, kl_loss_graph, one_hot, GeneConfig, GeneModel};
use crate::data::{batches, SeriesDataset, Standardizer};
use crate::error::{GeneError, Result};
use crate::eval::empirical_kl;
use crate::numcore::{Graph, Rng, Tensor};
use crate::recognition::GeneAssignment;

/// Which losses drive the encoder and generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneObjective {
    /// KL plus discriminator feature matching, with D trained alongside.
    #[default]
    Adversarial,
    /// KL plus squared reconstruction error and no discriminator (CVAE).
    EncoderOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub latent: usize,
    pub hidden: usize,
    pub objective: GeneObjective,
}

impl Default for GeneTrainConfig {
    fn default() -> Self {
        GeneTrainConfig {
            seed: 0,
            epochs: 30,
            lr: 0.001,
            batch: 64,
            latent: 32,
            hidden: 64,
            objective: GeneObjective::Adversarial,
        }
    }
}

/// Mean loss per gene step, one entry per epoch. `generator` holds feature
/// matching for the adversarial objective and reconstruction otherwise;
/// `discriminator` stays empty for the encoder-only objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneTrace {
    pub discriminator: Vec<f64>,
    pub kl: Vec<f64>,
    pub generator: Vec<f64>,
}

const NOISE_STREAM: u64 = 0x2A;
const BATCH_STREAM: u64 = 0x6E4E_0000;

/// Fresh model with standardisation fitted on `ds`, then [`train_genes_from`].
pub fn train_genes(ds: &SeriesDataset, assignment: &GeneAssignment, cfg: &GeneTrainConfig) -> Result<(GeneModel, GeneTrace)> {
    let mut model = GeneModel::new(GeneConfig {
        k: assignment.k(),
        points: ds.meta.points,
        variables: ds.meta.variables,
        latent: cfg.latent,
        hidden: cfg.hidden,
        norm: Standardizer::fit(ds),
        seed: cfg.seed,
    })?;
    let trace = train_genes_from(&mut model, ds, assignment, cfg)?;
    Ok((model, trace))
}

fn noise(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect())
}

/// Each batch of windows is split by hard gene. For every gene present, D
/// takes one step on real windows against detached fakes, then E and G take
/// one step against the updated D.
pub fn train_genes_from(
    model: &mut GeneModel,
    ds: &SeriesDataset,
    assignment: &GeneAssignment,
    cfg: &GeneTrainConfig,
) -> Result<GeneTrace> {
    let k = model.config.k;
    if assignment.len() != ds.window_count() || assignment.k() != k {
        return Err(GeneError::dim("assignment does not cover the dataset"));
    }
    for (gene, &c) in assignment.counts().iter().enumerate() {
        if c == 0 {
            log::warn!("gene {gene} has no windows and is skipped");
        }
    }
    let segments: Vec<&[f64]> = ds.windows().collect();
    let hard = assignment.hard();
    let conds: Vec<Vec<f64>> = (0..k).map(|j| one_hot(j, k)).collect();
    let mut rng = Rng::with_stream(cfg.seed, NOISE_STREAM);
    let mut trace = GeneTrace::default();
    for epoch in 0..cfg.epochs {
        let (mut sum_d, mut sum_kl, mut sum_g, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in batches(segments.len(), cfg.batch, cfg.seed ^ BATCH_STREAM, epoch as u64).iter().enumerate() {
            for (gene, cond_row) in conds.iter().enumerate() {
                let members: Vec<&[f64]> = idx.iter().filter(|&&i| hard[i] == gene).map(|&i| segments[i]).collect();
                if members.is_empty() {
                    continue;
                }
                let ctx = || format!("gene training epoch {epoch} batch {b} gene {gene}");
                let cond: Vec<&[f64]> = vec![cond_row.as_slice(); members.len()];
                let (ld, lkl, lg) = gene_step(model, &members, &cond, cfg, &mut rng).map_err(|e| e.context(ctx()))?;
                sum_d += ld;
                sum_kl += lkl;
                sum_g += lg;
                steps += 1;
            }
        }
        let n = steps.max(1) as f64;
        if cfg.objective == GeneObjective::Adversarial {
            trace.discriminator.push(sum_d / n);
        }
        trace.kl.push(sum_kl / n);
        trace.generator.push(sum_g / n);
        log::debug!("gene epoch {epoch}: kl {:.4} gen {:.4}", sum_kl / n, sum_g / n);
    }
    Ok(trace)
}

fn gene_step(
    model: &mut GeneModel,
    members: &[&[f64]],
    cond: &[&[f64]],
    cfg: &GeneTrainConfig,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let x_t = model.input_tensor(members)?;
    let a_t = model.condition_tensor(cond)?;
    let (rows, dh) = (members.len(), model.config.latent);
    let mut ld = 0.0;
    if cfg.objective == GeneObjective::Adversarial {
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let x = g.input(x_t.clone());
        let a = g.input(a_t.clone());
        let (mu, ls) = model.encode_graph(&mut g, &p, x, a)?;
        let h = model.latent_graph(&mut g, mu, ls, noise(rng, rows, dh)?)?;
        let fake = model.generate_graph(&mut g, &p, h, a)?;
        let detached = g.input(g.value(fake).clone());
        let (pr, _) = model.discriminate_graph(&mut g, &p, x)?;
        let (pf, _) = model.discriminate_graph(&mut g, &p, detached)?;
        let loss = d_loss_graph(&mut g, pr, pf)?;
        let grads = g.backward(loss)?;
        model.discriminator.accumulate(&grads, &p.d);
        model.discriminator.sgd_step(cfg.lr)?;
        ld = g.value(loss).item();
    }
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let x = g.input(x_t);
    let a = g.input(a_t);
    let (mu, ls) = model.encode_graph(&mut g, &p, x, a)?;
    let h = model.latent_graph(&mut g, mu, ls, noise(rng, rows, dh)?)?;
    let fake = model.generate_graph(&mut g, &p, h, a)?;
    let kl = kl_loss_graph(&mut g, mu, ls)?;
    let gen = match cfg.objective {
        GeneObjective::Adversarial => {
            let (_, fr) = model.discriminate_graph(&mut g, &p, x)?;
            let (_, ff) = model.discriminate_graph(&mut g, &p, fake)?;
            g_fm_loss_graph(&mut g, fr, ff)?
        }
        GeneObjective::EncoderOnly => {
            let d = g.sub(fake, x)?;
            let sq = g.square(d);
            let s = g.sum(sq);
            g.scale(s, 0.5 / rows as f64)
        }
    };
    let total = g.add(kl, gen)?;
    let grads = g.backward(total)?;
    model.encoder.accumulate(&grads, &p.e);
    model.generator.accumulate(&grads, &p.g);
    model.encoder.sgd_step(cfg.lr)?;
    model.generator.sgd_step(cfg.lr)?;
    Ok((ld, g.value(kl).item(), g.value(gen).item()))
}

/// Up to `cap` windows of `gene`, evenly strided through the dataset order.
fn gene_windows<'a>(segments: &[&'a [f64]], hard: &[usize], gene: usize, cap: usize) -> Vec<&'a [f64]> {
    let all: Vec<&[f64]> = segments.iter().zip(hard).filter(|(_, &h)| h == gene).map(|(s, _)| *s).collect();
    if all.len() <= cap {
        return all;
    }
    (0..cap).map(|i| all[i * all.len() / cap]).collect()
}

/// Generated counterparts of `real`: posterior sample from E, decoded by G,
/// in original units.
fn regenerate(model: &GeneModel, real: &[&[f64]], gene: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let k = model.config.k;
    let cond = one_hot(gene, k);
    let mut out = Vec::with_capacity(real.len());
    for chunk in real.chunks(1024) {
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let x = g.input(model.input_tensor(chunk)?);
        let a = g.input(model.condition_tensor(&vec![cond.as_slice(); chunk.len()])?);
        let (mu, ls) = model.encode_graph(&mut g, &p, x, a)?;
        let h = model.latent_graph(&mut g, mu, ls, noise(rng, chunk.len(), model.config.latent)?)?;
        let fake = model.generate_graph(&mut g, &p, h, a)?;
        let t = g.value(fake);
        if !t.is_finite() {
            return Err(GeneError::numeric("generator produced non-finite values"));
        }
        out.extend((0..t.rows()).map(|i| model.config.norm.invert(t.row(i))));
    }
    Ok(out)
}

/// 50-bin histogram KL(real‖generated) per gene, all variables pooled.
/// `None` for genes without windows.
pub fn gene_kl(model: &GeneModel, ds: &SeriesDataset, assignment: &GeneAssignment, cap: usize, seed: u64) -> Result<Vec<Option<f64>>> {
    let segments: Vec<&[f64]> = ds.windows().collect();
    let mut rng = Rng::with_stream(seed, NOISE_STREAM + 1);
    (0..model.config.k)
        .map(|gene| {
            let real = gene_windows(&segments, assignment.hard(), gene, cap);
            if real.is_empty() {
                return Ok(None);
            }
            let fake = regenerate(model, &real, gene, &mut rng)?;
            let r: Vec<f64> = real.concat();
            let f: Vec<f64> = fake.concat();
            empirical_kl(&r, &f, 50).map(Some)
        })
        .collect()
}

/// CSV `gene_id,source,value`, one row per scalar of up to `cap` real windows
/// per gene and of their generated counterparts.
pub fn write_distribution_csv<W: Write>(
    model: &GeneModel,
    ds: &SeriesDataset,
    assignment: &GeneAssignment,
    cap: usize,
    seed: u64,
    mut w: W,
) -> Result<()> {
    let err = |e: std::io::Error| GeneError::data(format!("write failed: {e}"));
    let segments: Vec<&[f64]> = ds.windows().collect();
    let mut rng = Rng::with_stream(seed, NOISE_STREAM + 1);
    writeln!(w, "gene_id,source,value").map_err(err)?;
    for gene in 0..model.config.k {
        let real = gene_windows(&segments, assignment.hard(), gene, cap);
        if real.is_empty() {
            continue;
        }
        let fake = regenerate(model, &real, gene, &mut rng)?;
        for v in real.iter().flat_map(|s| s.iter()) {
            writeln!(w, "{gene},real,{v}").map_err(err)?;
        }
        for v in fake.iter().flatten() {
            writeln!(w, "{gene},generated,{v}").map_err(err)?;
        }
    }
    Ok(())
}
