//! Gene generation: a conditional encoder, a shared conditional generator
//! and an unconditioned discriminator, trained gene by gene with the
//! feature-matching objective.

mod train;

pub use train::{gene_kl, train_genes, train_genes_from, write_distribution_csv, GeneObjective, GeneTrace, GeneTrainConfig};

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{GeneError, Result};
use crate::numcore::{Activation, Bound, Graph, Mlp, ParamStore, Rng, Tensor, Var};
use crate::persistence::{push_store, restore_store, Checkpoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneConfig {
    pub k: usize,
    pub points: usize,
    pub variables: usize,
    /// Latent width `d_h`.
    pub latent: usize,
    /// Width of both hidden layers in E, G and D.
    pub hidden: usize,
    pub norm: Standardizer,
    pub seed: u64,
}

/// Posterior parameters and one reparameterised draw.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
}

/// `h = mu + z ⊙ exp(log_scale)` for a given `z`.
pub fn latent_from(mu: &[f64], log_scale: &[f64], z: &[f64]) -> Result<LatentCode> {
    if mu.len() != log_scale.len() || mu.len() != z.len() {
        return Err(GeneError::dim("latent parameters differ in length"));
    }
    let h = mu.iter().zip(log_scale).zip(z).map(|((m, d), z)| m + z * d.exp()).collect();
    Ok(LatentCode {
        mu: mu.to_vec(),
        log_scale: log_scale.to_vec(),
        z: z.to_vec(),
        h,
    })
}

pub fn sample_latent(mu: &[f64], log_scale: &[f64], rng: &mut Rng) -> Result<LatentCode> {
    let z: Vec<f64> = (0..mu.len()).map(|_| rng.standard_normal()).collect();
    latent_from(mu, log_scale, &z)
}

/// `½(μᵀμ + Σ(exp(δ) − δ − 1))`.
pub fn kl_loss(mu: &[f64], log_scale: &[f64]) -> Result<f64> {
    if mu.len() != log_scale.len() {
        return Err(GeneError::dim("kl_loss: mu and log_scale differ in length"));
    }
    let quad: f64 = mu.iter().map(|m| m * m).sum();
    let spread: f64 = log_scale.iter().map(|d| d.exp() - d - 1.0).sum();
    Ok(0.5 * (quad + spread))
}

/// Batch mean of the per-row [`kl_loss`].
pub fn kl_loss_graph(g: &mut Graph, mu: Var, log_scale: Var) -> Result<Var> {
    let rows = g.value(mu).rows() as f64;
    let m2 = g.square(mu);
    let e = g.exp(log_scale);
    let d = g.sub(e, log_scale)?;
    let d = g.add_scalar(d, -1.0);
    let t = g.add(m2, d)?;
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / rows))
}

/// `−mean ln p_real − mean ln(1 − p_fake)` with clamped logs.
pub fn d_loss(p_real: &[f64], p_fake: &[f64]) -> Result<f64> {
    if p_real.is_empty() || p_fake.is_empty() {
        return Err(GeneError::data("d_loss needs non-empty batches"));
    }
    let ln = |p: f64| p.max(crate::numcore::PROB_CLAMP).ln();
    let r = p_real.iter().map(|&p| ln(p)).sum::<f64>() / p_real.len() as f64;
    let f = p_fake.iter().map(|&p| ln(1.0 - p)).sum::<f64>() / p_fake.len() as f64;
    Ok(-r - f)
}

pub fn d_loss_graph(g: &mut Graph, p_real: Var, p_fake: Var) -> Result<Var> {
    let lr = g.log_clamped(p_real);
    let lr = g.mean(lr);
    let neg = g.scale(p_fake, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let lf = g.log_clamped(one_minus);
    let lf = g.mean(lf);
    let s = g.add(lr, lf)?;
    Ok(g.scale(s, -1.0))
}

/// Squared distance between the batch-mean feature vectors.
pub fn g_fm_loss(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    let width = real.first().map(Vec::len).unwrap_or(0);
    if real.is_empty() || fake.is_empty() || real.iter().chain(fake).any(|r| r.len() != width) {
        return Err(GeneError::dim("g_fm_loss: batches must be non-empty with equal widths"));
    }
    let mean = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
    Ok((0..width).map(|j| (mean(real, j) - mean(fake, j)).powi(2)).sum())
}

pub fn g_fm_loss_graph(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    if g.value(real).cols() != g.value(fake).cols() {
        return Err(GeneError::dim("g_fm_loss: feature widths differ"));
    }
    let mr = g.mean_rows(real)?;
    let mf = g.mean_rows(fake)?;
    let d = g.sub(mr, mf)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// Encoder, generator and discriminator, each with its own parameter store
/// so one network can be stepped while the others' gradients are dropped.
#[derive(Clone, Debug)]
pub struct GeneModel {
    pub config: GeneConfig,
    pub encoder: ParamStore,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    enc: Mlp,
    gen: Mlp,
    disc: Mlp,
}

/// Graph handles for one forward pass.
pub struct GeneBound {
    pub e: Bound,
    pub g: Bound,
    pub d: Bound,
}

const CHUNK: usize = 1024;

impl GeneModel {
    pub fn new(config: GeneConfig) -> Result<Self> {
        if config.k == 0 || config.latent == 0 || config.hidden == 0 {
            return Err(GeneError::data("gene model needs K, latent and hidden widths >= 1"));
        }
        if config.norm.mean.len() != config.variables {
            return Err(GeneError::dim("standardizer does not match the variable count"));
        }
        let len = config.points * config.variables;
        let (k, dh, hid) = (config.k, config.latent, config.hidden);
        let mut rng = Rng::with_stream(config.seed, 0x6E4E);
        let mut encoder = ParamStore::new(config.seed);
        let mut generator = ParamStore::new(config.seed);
        let mut discriminator = ParamStore::new(config.seed);
        let act = Activation::Tanh;
        let enc = Mlp::new(&mut encoder, "enc", &[len + k, hid, hid, 2 * dh], act, Activation::Identity, &mut rng)?;
        let gen = Mlp::new(&mut generator, "gen", &[dh + k, hid, hid, len], act, Activation::Identity, &mut rng)?;
        let disc = Mlp::new(&mut discriminator, "disc", &[len, hid, hid, 1], act, Activation::Sigmoid, &mut rng)?;
        Ok(GeneModel {
            config,
            encoder,
            generator,
            discriminator,
            enc,
            gen,
            disc,
        })
    }

    pub fn window_len(&self) -> usize {
        self.config.points * self.config.variables
    }

    pub fn bind(&self, g: &mut Graph) -> GeneBound {
        GeneBound {
            e: self.encoder.bind(g),
            g: self.generator.bind(g),
            d: self.discriminator.bind(g),
        }
    }

    /// Zeroes the last layer of all three networks.
    pub fn zero_outputs(&mut self) {
        self.enc.last().zero(&mut self.encoder);
        self.gen.last().zero(&mut self.generator);
        self.disc.last().zero(&mut self.discriminator);
    }

    /// Standardised `rows × T·S` tensor.
    pub fn input_tensor(&self, segments: &[&[f64]]) -> Result<Tensor> {
        let len = self.window_len();
        let mut data = Vec::with_capacity(segments.len() * len);
        for s in segments {
            if s.len() != len {
                return Err(GeneError::dim(format!("segment of {} values, expected {len}", s.len())));
            }
            self.config.norm.apply_into(s, &mut data);
        }
        Tensor::matrix(segments.len(), len, data)
    }

    /// Checks every row is a length-`K` probability vector.
    pub fn condition_tensor(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let k = self.config.k;
        let mut data = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(GeneError::dim(format!("assignment of length {}, expected K = {k}", r.len())));
            }
            if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(GeneError::data("assignment does not sum to 1"));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), k, data)
    }

    /// `(mu, log_scale)` for standardised inputs `x` and condition `a`.
    pub fn encode_graph(&self, g: &mut Graph, p: &GeneBound, x: Var, a: Var) -> Result<(Var, Var)> {
        let inp = g.concat_cols(&[x, a])?;
        let out = self.enc.forward(g, &p.e, inp)?.output;
        let dh = self.config.latent;
        Ok((g.slice_cols(out, 0, dh)?, g.slice_cols(out, dh, dh)?))
    }

    /// Reparameterised latent on the graph for a fixed noise tensor.
    pub fn latent_graph(&self, g: &mut Graph, mu: Var, log_scale: Var, z: Tensor) -> Result<Var> {
        let z = g.input(z);
        let s = g.exp(log_scale);
        let zs = g.mul(z, s)?;
        g.add(mu, zs)
    }

    /// Standardised segments from latents and conditions.
    pub fn generate_graph(&self, g: &mut Graph, p: &GeneBound, h: Var, a: Var) -> Result<Var> {
        let inp = g.concat_cols(&[h, a])?;
        Ok(self.gen.forward(g, &p.g, inp)?.output)
    }

    /// `(p_real, features)` for standardised segments.
    pub fn discriminate_graph(&self, g: &mut Graph, p: &GeneBound, x: Var) -> Result<(Var, Var)> {
        let out = self.disc.forward(g, &p.d, x)?;
        Ok((out.output, out.features))
    }

    pub fn encode(&self, segment: &[f64], assignment: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let x = g.input(self.input_tensor(&[segment])?);
        let a = g.input(self.condition_tensor(&[assignment])?);
        let (mu, ls) = self.encode_graph(&mut g, &p, x, a)?;
        Ok((g.value(mu).data().to_vec(), g.value(ls).data().to_vec()))
    }

    /// Decoded segment in the data's original units.
    pub fn generate(&self, h: &[f64], assignment: &[f64]) -> Result<Vec<f64>> {
        Ok(self.generate_batch(&[h], &[assignment])?.remove(0))
    }

    pub fn generate_batch(&self, hs: &[&[f64]], assignments: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let dh = self.config.latent;
        if hs.len() != assignments.len() || hs.iter().any(|h| h.len() != dh) {
            return Err(GeneError::dim(format!("latents must have length d_h = {dh}, one per assignment")));
        }
        let mut out = Vec::with_capacity(hs.len());
        for (hc, ac) in hs.chunks(CHUNK).zip(assignments.chunks(CHUNK)) {
            let mut g = Graph::new();
            let p = self.bind(&mut g);
            let h = g.input(Tensor::matrix(hc.len(), dh, hc.concat())?);
            let a = g.input(self.condition_tensor(ac)?);
            let x = self.generate_graph(&mut g, &p, h, a)?;
            let t = g.value(x);
            if !t.is_finite() {
                return Err(GeneError::numeric("generator produced non-finite values"));
            }
            out.extend((0..t.rows()).map(|i| self.config.norm.invert(t.row(i))));
        }
        Ok(out)
    }

    pub fn discriminate(&self, segment: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let x = g.input(self.input_tensor(&[segment])?);
        let (pr, f) = self.discriminate_graph(&mut g, &p, x)?;
        Ok((g.value(pr).item(), g.value(f).data().to_vec()))
    }

    pub fn to_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        push_store(out, &format!("{prefix}E/"), &self.encoder);
        push_store(out, &format!("{prefix}G/"), &self.generator);
        push_store(out, &format!("{prefix}D/"), &self.discriminator);
    }

    pub fn from_checkpoint(config: GeneConfig, ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let mut m = GeneModel::new(config)?;
        restore_store(ckpt, &format!("{prefix}E/"), &mut m.encoder)?;
        restore_store(ckpt, &format!("{prefix}G/"), &mut m.generator)?;
        restore_store(ckpt, &format!("{prefix}D/"), &mut m.discriminator)?;
        Ok(m)
    }
}

/// Row `k` of the `K × K` identity.
pub fn one_hot(k: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[k] = 1.0;
    v
}
