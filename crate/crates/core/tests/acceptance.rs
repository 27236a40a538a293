//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- 4 8` runs a subset.

use std::path::Path;
use std::time::Instant;

use gene_core::application::{train_end_to_end, PredictorBound, PredictorConfig, PredictorModel, Task, TaskKind, TrainConfig};
use gene_core::data::{
    generate_synthetic, split_dataset, Meta, Sample, SeriesDataset, Standardizer, SynthTask, SyntheticConfig,
};
use gene_core::eval::{event_report, fbeta_metrics, homogeneity, persistence_mape, mape};
use gene_core::generation::{
    d_loss, d_loss_graph, g_fm_loss, g_fm_loss_graph, gene_kl, kl_loss, kl_loss_graph, train_genes, GeneBound,
    GeneConfig, GeneModel, GeneObjective, GeneTrainConfig,
};
use gene_core::numcore::gradcheck::check_gradients;
use gene_core::numcore::{
    affine, loss_cross_entropy, loss_mse, rnn_cell, Activation, Bound, Dense, Graph, Mlp, ParamStore, Rng, RnnLayer,
    Tensor, Var,
};
use gene_core::persistence::{load_checkpoint, Checkpoint, FORMAT_VERSION};
use gene_core::recognition::{recognition_refine, ClassifierC, ClassifierConfig, RefineConfig, Refinement};
use gene_core::GeneError;

const SEEDS: [u64; 3] = [1, 2, 3];
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rand_t(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

fn store_values(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

/// `sum(v ⊙ c)` for a constant `c`, so every output entry gets a distinct weight.
fn weighted_sum(g: &mut Graph, v: Var, c: &Tensor) -> gene_core::Result<Var> {
    let cv = g.input(c.clone());
    let m = g.mul(v, cv)?;
    Ok(g.sum(m))
}

fn weights_like(rng: &mut Rng, t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), (0..t.len()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn tiny_genes(rng: &mut Rng, k: usize, t: usize, s: usize) -> GeneModel {
    GeneModel::new(GeneConfig {
        k,
        points: t,
        variables: s,
        latent: 1 + rng.below(3),
        hidden: 2 + rng.below(4),
        norm: Standardizer::identity(s),
        seed: rng.next_u64(),
    })
    .unwrap()
}

fn tiny_classifier(rng: &mut Rng, k: usize, t: usize, s: usize) -> ClassifierC {
    ClassifierC::new(ClassifierConfig {
        k,
        points: t,
        variables: s,
        hidden: 2 + rng.below(4),
        norm: Standardizer::identity(s),
        seed: rng.next_u64(),
    })
    .unwrap()
}

fn grad_family(name: &str, worst: &mut Vec<(String, f64)>, mut check: impl FnMut(&mut Rng) -> f64) {
    let mut w: f64 = 0.0;
    for i in 0..GRAD_INSTANCES {
        let mut rng = Rng::with_stream(i, 0x6C);
        w = w.max(check(&mut rng));
    }
    worst.push((name.to_string(), w));
}

fn criterion_1() -> Outcome {
    let mut worst = Vec::new();

    grad_family("affine", &mut worst, |rng| {
        let (r, i, o) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5));
        let mut store = ParamStore::new(0);
        let d = Dense::new(&mut store, "d", i, o, rng).unwrap();
        let mut inputs = vec![rand_t(rng, r, i, -1.0, 1.0)];
        inputs.extend(store_values(&store));
        let c = rand_t(rng, r, o, -1.0, 1.0);
        let e1 = check_gradients(&inputs, |g, v| {
            let y = affine(g, v[0], v[1], v[2])?;
            weighted_sum(g, y, &c)
        })
        .unwrap();
        let e2 = check_gradients(&inputs, |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = d.forward(g, &p, v[0])?;
            weighted_sum(g, y, &c)
        })
        .unwrap();
        e1.max(e2)
    });

    grad_family("rnn_cell", &mut worst, |rng| {
        let (r, i, h) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
        let mut store = ParamStore::new(0);
        RnnLayer::new(&mut store, "rnn", i, h, rng).unwrap();
        let p = store_values(&store);
        let inputs = vec![
            rand_t(rng, r, i, -1.0, 1.0),
            rand_t(rng, r, h, -1.0, 1.0),
            p[0].clone(),
            p[1].clone(),
            p[2].clone(),
        ];
        let c = rand_t(rng, r, h, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let y = rnn_cell(g, v[0], v[1], v[2], v[3], v[4])?;
            weighted_sum(g, y, &c)
        })
        .unwrap()
    });

    grad_family("rnn_sequence", &mut worst, |rng| {
        let (r, steps, width, h) = (1 + rng.below(3), 2 + rng.below(4), 1 + rng.below(3), 1 + rng.below(4));
        let mut store = ParamStore::new(0);
        let layer = RnnLayer::new(&mut store, "rnn", width, h, rng).unwrap();
        let mut inputs = vec![rand_t(rng, r, steps * width, -1.0, 1.0)];
        inputs.extend(store_values(&store));
        let c = rand_t(rng, r, h, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = layer.run(g, &p, v[0], steps, width)?;
            weighted_sum(g, y, &c)
        })
        .unwrap()
    });

    grad_family("mlp", &mut worst, |rng| {
        let r = 1 + rng.below(3);
        let dims = [1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(3)];
        let out_act = [Activation::Identity, Activation::Sigmoid, Activation::Tanh][rng.below(3)];
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(&mut store, "m", &dims, Activation::Tanh, out_act, rng).unwrap();
        let mut inputs = vec![rand_t(rng, r, dims[0], -1.0, 1.0)];
        inputs.extend(store_values(&store));
        let c = rand_t(rng, r, dims[3], -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = mlp.forward(g, &p, v[0])?.output;
            weighted_sum(g, y, &c)
        })
        .unwrap()
    });

    grad_family("classifier", &mut worst, |rng| {
        let (k, t, s, r) = (2 + rng.below(3), 2 + rng.below(3), 1 + rng.below(2), 1 + rng.below(3));
        let c = tiny_classifier(rng, k, t, s);
        let targets: Vec<usize> = (0..r).map(|_| rng.below(k)).collect();
        let mut inputs = vec![rand_t(rng, r, t * s, -1.0, 1.0)];
        inputs.extend(store_values(&c.store));
        check_gradients(&inputs, |g, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let probs = c.forward(g, &p, v[0])?;
            loss_cross_entropy(g, probs, &targets)
        })
        .unwrap()
    });

    grad_family("encoder", &mut worst, |rng| {
        let (k, t, s, r) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2), 1 + rng.below(3));
        let m = tiny_genes(rng, k, t, s);
        let dh = m.config.latent;
        let mut inputs = vec![rand_t(rng, r, t * s, -1.0, 1.0), rand_t(rng, r, k, 0.0, 1.0)];
        inputs.extend(store_values(&m.encoder));
        let (c1, c2) = (rand_t(rng, r, dh, -1.0, 1.0), rand_t(rng, r, dh, -1.0, 1.0));
        check_gradients(&inputs, |g, v| {
            let p = GeneBound {
                e: Bound::from_vars(v[2..].to_vec()),
                g: m.generator.bind(g),
                d: m.discriminator.bind(g),
            };
            let (mu, ls) = m.encode_graph(g, &p, v[0], v[1])?;
            let a = weighted_sum(g, mu, &c1)?;
            let b = weighted_sum(g, ls, &c2)?;
            g.add(a, b)
        })
        .unwrap()
    });

    grad_family("latent", &mut worst, |rng| {
        let (r, dh) = (1 + rng.below(3), 1 + rng.below(4));
        let m = tiny_genes(rng, 1, 1, 1);
        let inputs = vec![rand_t(rng, r, dh, -1.0, 1.0), rand_t(rng, r, dh, -1.0, 1.0)];
        let z = rand_t(rng, r, dh, -2.0, 2.0);
        let c = rand_t(rng, r, dh, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let h = m.latent_graph(g, v[0], v[1], z.clone())?;
            weighted_sum(g, h, &c)
        })
        .unwrap()
    });

    grad_family("generator", &mut worst, |rng| {
        let (k, t, s, r) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2), 1 + rng.below(3));
        let m = tiny_genes(rng, k, t, s);
        let mut inputs = vec![rand_t(rng, r, m.config.latent, -1.0, 1.0), rand_t(rng, r, k, 0.0, 1.0)];
        inputs.extend(store_values(&m.generator));
        let c = rand_t(rng, r, t * s, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let p = GeneBound {
                e: m.encoder.bind(g),
                g: Bound::from_vars(v[2..].to_vec()),
                d: m.discriminator.bind(g),
            };
            let y = m.generate_graph(g, &p, v[0], v[1])?;
            weighted_sum(g, y, &c)
        })
        .unwrap()
    });

    grad_family("discriminator", &mut worst, |rng| {
        let (t, s, r) = (1 + rng.below(3), 1 + rng.below(2), 1 + rng.below(3));
        let m = tiny_genes(rng, 2, t, s);
        let mut inputs = vec![rand_t(rng, r, t * s, -1.0, 1.0)];
        inputs.extend(store_values(&m.discriminator));
        let c = rand_t(rng, r, 1, -1.0, 1.0);
        let cf = rand_t(rng, r, m.config.hidden, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let p = GeneBound {
                e: m.encoder.bind(g),
                g: m.generator.bind(g),
                d: Bound::from_vars(v[1..].to_vec()),
            };
            let (prob, feat) = m.discriminate_graph(g, &p, v[0])?;
            let a = weighted_sum(g, prob, &c)?;
            let b = weighted_sum(g, feat, &cf)?;
            g.add(a, b)
        })
        .unwrap()
    });

    let predictor = |rng: &mut Rng, task: Task| {
        let (k, t, s) = (2, 1 + rng.below(2), 1 + rng.below(2));
        let task = match task {
            Task::Value { .. } => Task::Value { scale: vec![1.0; s] },
            e => e,
        };
        let cfg = PredictorConfig {
            task,
            windows: 2 + rng.below(2),
            fusion_hidden: 2 + rng.below(3),
            head_hidden: 2 + rng.below(3),
            seed: rng.next_u64(),
        };
        PredictorModel::new(cfg, tiny_classifier(rng, k, t, s), tiny_genes(rng, k, t, s)).unwrap()
    };

    grad_family("fusion", &mut worst, |rng| {
        let m = predictor(rng, Task::Value { scale: vec![] });
        let (w, r) = (m.config.windows, 1 + rng.below(2));
        let (len, k, dh) = (m.genes.window_len(), m.k(), m.genes.config.latent);
        let mut inputs = Vec::new();
        for _ in 0..w {
            inputs.push(rand_t(rng, r, len, -1.0, 1.0));
            inputs.push(rand_t(rng, r, k, 0.0, 1.0));
            inputs.push(rand_t(rng, r, dh, -1.0, 1.0));
        }
        let n_head = m.store.len();
        inputs.extend(store_values(&m.store));
        let c = rand_t(rng, r, m.config.fusion_hidden, -1.0, 1.0);
        check_gradients(&inputs, |g, v| {
            let p = PredictorBound {
                head: Bound::from_vars(v[3 * w..3 * w + n_head].to_vec()),
                c: m.classifier.store.bind(g),
                genes: m.genes.bind(g),
            };
            let xs: Vec<Var> = (0..w).map(|n| v[3 * n]).collect();
            let as_: Vec<Var> = (0..w).map(|n| v[3 * n + 1]).collect();
            let hs: Vec<Var> = (0..w).map(|n| v[3 * n + 2]).collect();
            let states = m.fuse_graph(g, &p, &xs, &as_, &hs)?;
            weighted_sum(g, *states.last().unwrap(), &c)
        })
        .unwrap()
    });

    grad_family("heads", &mut worst, |rng| {
        let task = if rng.below(2) == 0 {
            Task::Value { scale: vec![] }
        } else {
            Task::Event { classes: vec![0, 1, 2] }
        };
        let m = predictor(rng, task);
        let r = 1 + rng.below(3);
        let mut inputs = vec![rand_t(rng, r, m.config.fusion_hidden, -1.0, 1.0)];
        inputs.extend(store_values(&m.store));
        let mut probe = Graph::new();
        let pb = m.bind(&mut probe);
        let sv = probe.input(inputs[0].clone());
        let raw = m.head_graph(&mut probe, &pb, sv).unwrap();
        let c = weights_like(rng, probe.value(raw));
        check_gradients(&inputs, |g, v| {
            let p = PredictorBound {
                head: Bound::from_vars(v[1..].to_vec()),
                c: m.classifier.store.bind(g),
                genes: m.genes.bind(g),
            };
            let raw = m.head_graph(g, &p, v[0])?;
            let y = m.activate_graph(g, raw)?;
            weighted_sum(g, y, &c)
        })
        .unwrap()
    });

    grad_family("losses", &mut worst, |rng| {
        let (r, c, r2) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
        let kl = check_gradients(&[rand_t(rng, r, c, -1.0, 1.0), rand_t(rng, r, c, -1.0, 1.0)], |g, v| {
            kl_loss_graph(g, v[0], v[1])
        })
        .unwrap();
        let d = check_gradients(&[rand_t(rng, r, 1, 0.05, 0.95), rand_t(rng, r2, 1, 0.05, 0.95)], |g, v| {
            d_loss_graph(g, v[0], v[1])
        })
        .unwrap();
        let fm = check_gradients(&[rand_t(rng, r, c, -1.0, 1.0), rand_t(rng, r2, c, -1.0, 1.0)], |g, v| {
            g_fm_loss_graph(g, v[0], v[1])
        })
        .unwrap();
        let mse = check_gradients(&[rand_t(rng, r, c, -1.0, 1.0), rand_t(rng, r, c, -1.0, 1.0)], |g, v| {
            loss_mse(g, v[0], v[1])
        })
        .unwrap();
        let k = 2 + rng.below(3);
        let targets: Vec<usize> = (0..r).map(|_| rng.below(k)).collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.uniform(0.5, 2.0)).collect();
        let ce = check_gradients(&[rand_t(rng, r, k, -2.0, 2.0)], |g, v| {
            let p = g.softmax_rows(v[0])?;
            let a = loss_cross_entropy(g, p, &targets)?;
            let b = g.cross_entropy(p, &targets, Some(&weights))?;
            g.add(a, b)
        })
        .unwrap();
        [kl, d, fm, mse, ce].into_iter().fold(0.0, f64::max)
    });

    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, e)| e.is_nan() || *e > GRAD_TOL)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let detail = if failing.is_empty() {
        format!(
            "{} families x {GRAD_INSTANCES} instances, worst relative error {max:.2e} (tol {GRAD_TOL:.0e})",
            worst.len()
        )
    } else {
        format!("over tolerance: {}", failing.join(", "))
    };
    outcome(failing.is_empty(), detail)
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    let kl0 = kl_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
    if kl0 != 0.0 {
        bad.push(format!("kl(0,0)={kl0}"));
    }
    let kl1 = kl_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
    if (kl1 - 1.0).abs() > 1e-12 {
        bad.push(format!("kl([1,1],0)={kl1}"));
    }
    for n in [1, 3, 64] {
        let d = d_loss(&vec![0.5; n], &vec![0.5; n]).unwrap();
        if (d - 2.0 * 2f64.ln()).abs() > 1e-12 {
            bad.push(format!("d_loss(0.5; {n})={d}"));
        }
    }
    let mut rng = Rng::new(2);
    let batch: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.normal(0.0, 3.0)).collect()).collect();
    let fm = g_fm_loss(&batch, &batch).unwrap();
    if fm != 0.0 {
        bad.push(format!("fm(identical)={fm}"));
    }
    for k in 2..=10usize {
        let mut g = Graph::new();
        let p = g.input(Tensor::matrix(3, k, vec![1.0 / k as f64; 3 * k]).unwrap());
        let ce = loss_cross_entropy(&mut g, p, &[0, k - 1, k / 2]).unwrap();
        let v = g.value(ce).item();
        if (v - (k as f64).ln()).abs() > 1e-12 {
            bad.push(format!("ce(uniform {k})={v}"));
        }
    }
    let detail = if bad.is_empty() {
        "kl, d_loss, feature matching and uniform cross-entropy identities hold".to_string()
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    // Counts chosen so precision and recall round to 80.33 and 58.17.
    let (tp, fp, fn_, tn) = (10_000usize, 2_449usize, 7_191usize, 5_000usize);
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, p, n) in [(1, 1, tp), (0, 1, fp), (1, 0, fn_), (0, 0, tn)] {
        truth.extend(std::iter::repeat_n(t, n));
        pred.extend(std::iter::repeat_n(p, n));
    }
    let m = fbeta_metrics(&truth, &pred, &[0, 1], 1, &[1.0, 0.5]).unwrap();
    let (p, r) = (100.0 * m.precision, 100.0 * m.recall);
    let (f1, f05) = (100.0 * m.f(1.0).unwrap(), 100.0 * m.f(0.5).unwrap());
    let pass = (p - 80.33).abs() < 0.005
        && (r - 58.17).abs() < 0.005
        && (f1 - 67.45).abs() <= 0.1
        && (f05 - 74.61).abs() <= 0.1;
    outcome(pass, format!("P={p:.2} R={r:.2} F1={f1:.2} (67.45) F0.5={f05:.2} (74.61), tol 0.1"))
}

// ------------------------------------------------------- shared benchmark runs

struct BenchRun {
    seed: u64,
    ds: SeriesDataset,
    truth: Vec<usize>,
    refinement: Refinement,
    secs: f64,
}

fn bench_runs() -> Vec<BenchRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = SyntheticConfig {
                samples_per_cluster: 2000,
                seed,
                ..SyntheticConfig::default()
            };
            let (ds, labels) = generate_synthetic(&cfg).unwrap();
            let truth: Vec<usize> = labels.iter().flat_map(|&c| std::iter::repeat_n(c, ds.meta.windows)).collect();
            let start = Instant::now();
            let refinement = recognition_refine(&ds, &RefineConfig { k: 5, seed, ..RefineConfig::default() }).unwrap();
            BenchRun {
                seed,
                ds,
                truth,
                refinement,
                secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(runs: &[BenchRun]) -> Outcome {
    let fin: Vec<f64> = runs.iter().map(|r| homogeneity(&r.truth, r.refinement.assignment.hard()).unwrap()).collect();
    let init: Vec<f64> = runs.iter().map(|r| homogeneity(&r.truth, r.refinement.initial.hard()).unwrap()).collect();
    let secs: f64 = runs.iter().map(|r| r.secs).sum();
    let (mf, mi) = (median(&fin), median(&init));
    let pass = mf >= 0.55 && mf > mi && secs <= 900.0;
    outcome(
        pass,
        format!("median homogeneity refine {mf:.4} vs k-means {mi:.4} (seeds {fin:.4?} / {init:.4?}), {secs:.0}s of 900s"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(runs: &[BenchRun]) -> Outcome {
    let rounds = 5;
    let per_seed: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let mut hs: Vec<f64> = r.refinement.round_labels.iter().map(|l| homogeneity(&r.truth, l).unwrap()).collect();
            // After convergence the assignment no longer changes.
            if r.refinement.converged {
                hs.pop();
            }
            let last = homogeneity(&r.truth, r.refinement.assignment.hard()).unwrap();
            hs.resize(rounds, last);
            hs
        })
        .collect();
    let med: Vec<f64> = (0..rounds).map(|i| median(&per_seed.iter().map(|h| h[i]).collect::<Vec<_>>())).collect();
    let worst_drop = med.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst_drop <= 0.02,
        format!("median homogeneity by round {med:.4?}, largest drop {worst_drop:.4} (tol 0.02)"),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(runs: &[BenchRun]) -> Outcome {
    let start = Instant::now();
    let mut margin_a = Vec::new();
    let mut margin_b = Vec::new();
    let mut notes = Vec::new();
    for r in runs {
        let a = &r.refinement.assignment;
        let cfg = |epochs, objective| GeneTrainConfig {
            seed: r.seed,
            epochs,
            objective,
            ..GeneTrainConfig::default()
        };
        let kl = |epochs, objective| {
            let (m, _) = train_genes(&r.ds, a, &cfg(epochs, objective)).unwrap();
            gene_kl(&m, &r.ds, a, 500, r.seed).unwrap()
        };
        let k0 = kl(0, GeneObjective::Adversarial);
        let k30 = kl(30, GeneObjective::Adversarial);
        let cvae = kl(30, GeneObjective::EncoderOnly);
        let pairs: Vec<(f64, f64, f64)> = k0
            .iter()
            .zip(&k30)
            .zip(&cvae)
            .filter_map(|((a, b), c)| Some(((*a)?, (*b)?, (*c)?)))
            .collect();
        let ma = pairs.iter().map(|(a, b, _)| a - b).fold(f64::INFINITY, f64::min);
        let agg = |f: fn(&(f64, f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
        let (full, ablation) = (agg(|p| p.1), agg(|p| p.2));
        margin_a.push(ma);
        margin_b.push(ablation - full);
        notes.push(format!(
            "seed {}: genes {} min(kl0-kl30) {ma:.3}, mean kl {full:.3} vs encoder-only {ablation:.3}",
            r.seed,
            pairs.len()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = median(&margin_a) > 0.0 && median(&margin_b) > 0.0 && secs <= 1200.0;
    outcome(pass, format!("{}; {secs:.0}s of 1200s", notes.join("; ")))
}

// ---------------------------------------------------------------- criterion 6

/// Windows drawn from one of two well-separated genes; the label is the gene
/// that produced most of the windows.
fn majority_fixture(n: usize, seed: u64) -> SeriesDataset {
    let (w, t, s) = (5, 8, 2);
    let means = [[20.0, 24.0], [28.0, 21.0]];
    let mut rng = Rng::new(seed);
    let samples = (0..n)
        .map(|i| {
            let mut windows = Vec::with_capacity(w * t * s);
            let mut ones = 0;
            for _ in 0..w {
                let gene = rng.below(2);
                ones += gene;
                for _ in 0..t {
                    for mean in &means[gene] {
                        windows.push(rng.normal(*mean, 1.0));
                    }
                }
            }
            Sample {
                id: format!("m{i:05}"),
                windows,
                label: Some(i64::from(2 * ones > w)),
                next: None,
                truth: None,
                time: None,
            }
        })
        .collect();
    let meta = Meta {
        windows: w,
        points: t,
        variables: s,
        classes: vec![0, 1],
        k_hint: Some(2),
    };
    SeriesDataset::new(meta, samples).unwrap()
}

fn pipeline(ds: &SeriesDataset, k: usize, task: TaskKind, seed: u64, epochs: usize) -> (PredictorModel, SeriesDataset) {
    let split = split_dataset(ds, 0.8, 0.1, seed).unwrap();
    let refine = RefineConfig {
        k,
        seed,
        batch: 50,
        ..RefineConfig::default()
    };
    let r = recognition_refine(&split.train, &refine).unwrap();
    let gcfg = GeneTrainConfig {
        seed,
        batch: 50,
        ..GeneTrainConfig::default()
    };
    let (genes, _) = train_genes(&split.train, &r.assignment, &gcfg).unwrap();
    let tcfg = TrainConfig {
        task,
        seed,
        epochs,
        batch: 50,
        ..TrainConfig::default()
    };
    let (model, _) = train_end_to_end(&split.train, &split.val, r.classifier, genes, &tcfg).unwrap();
    (model, split.test)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let ev = majority_fixture(1000, 6);
    let (model, test) = pipeline(&ev, 2, TaskKind::Event, 6, 40);
    let preds = model.predict_dataset(&test).unwrap();
    let truth: Vec<i64> = test.samples.iter().map(|s| s.label.unwrap()).collect();
    let pred: Vec<i64> = preds.iter().map(|p| p.pred_class.unwrap()).collect();
    let f1 = event_report(&truth, &pred, &[0, 1], 1).unwrap().get("f1").unwrap() / 100.0;
    let event_secs = start.elapsed().as_secs_f64();

    let cfg = SyntheticConfig {
        samples_per_cluster: 200,
        task: SynthTask::Value,
        seed: 6,
        ..SyntheticConfig::default()
    };
    let (vds, _) = generate_synthetic(&cfg).unwrap();
    let (model, test) = pipeline(&vds, 5, TaskKind::Value, 6, 60);
    let preds = model.predict_dataset(&test).unwrap();
    let actual: Vec<f64> = test.samples.iter().flat_map(|s| s.next.clone().unwrap()).collect();
    let predicted: Vec<f64> = preds.iter().flat_map(|p| p.pred_value.clone().unwrap()).collect();
    let ours = mape(&actual, &predicted).unwrap().value;
    let persistence = persistence_mape(&test).unwrap().value;
    let secs = start.elapsed().as_secs_f64();
    let pass = f1 >= 0.9 && ours <= persistence && secs <= 900.0;
    outcome(
        pass,
        format!(
            "majority-gene F1 {f1:.3} (>= 0.9, {event_secs:.0}s); value MAPE {ours:.2}% vs persistence {persistence:.2}%; {secs:.0}s of 900s"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn gene(args: &[&str]) -> i32 {
    let mut argv = vec!["gene"];
    argv.extend_from_slice(args);
    gene_core::cli::run(argv)
}

/// Gene checkpoint, predictor checkpoint and both reports.
type RunBytes = (Vec<u8>, Vec<u8>, Vec<u8>);

fn run_pair(dir: &Path, data: &str, tag: &str) -> Result<RunBytes, String> {
    let p = |name: &str| dir.join(format!("{tag}-{name}")).to_string_lossy().into_owned();
    let (genes, genes_report, pred, pred_report) = (p("genes.ckpt"), p("genes.json"), p("pred.ckpt"), p("pred.json"));
    let code = gene(&[
        "train-genes", "--data", data, "--checkpoint", &genes, "--report", &genes_report, "--seed", "5", "--rounds", "2",
        "--assign-epochs", "2", "--epochs", "3", "--latent", "4", "--hidden", "8", "--classifier-hidden", "8",
    ]);
    if code != 0 {
        return Err(format!("train-genes exited {code}"));
    }
    let code = gene(&[
        "train", "--data", data, "--genes", &genes, "--checkpoint", &pred, "--report", &pred_report, "--seed", "5",
        "--epochs", "3", "--fusion-hidden", "8", "--head-hidden", "4",
    ]);
    if code != 0 {
        return Err(format!("train exited {code}"));
    }
    let read = |f: &str| std::fs::read(f).map_err(|e| format!("{f}: {e}"));
    let mut reports = read(&genes_report)?;
    reports.extend(read(&pred_report)?);
    Ok((read(&genes)?, read(&pred)?, reports))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl").to_string_lossy().into_owned();
    let code = gene(&[
        "synth", "--out", &data, "--samples-per-cluster", "30", "--clusters", "3", "--windows", "4", "--points", "6",
        "--variables", "2", "--task", "value", "--seed", "5",
    ]);
    if code != 0 {
        return outcome(false, format!("synth exited {code}"));
    }
    // Same argv twice, so the second run overwrites the first run's files.
    let a = match run_pair(dir.path(), &data, "a") {
        Ok(a) => a,
        Err(e) => return outcome(false, e),
    };
    let b = match run_pair(dir.path(), &data, "a") {
        Ok(b) => b,
        Err(e) => return outcome(false, e),
    };
    let mut bad = Vec::new();
    if a.0 != b.0 {
        bad.push("gene checkpoints differ");
    }
    if a.1 != b.1 {
        bad.push("predictor checkpoints differ");
    }
    if a.2 != b.2 {
        bad.push("reports differ");
    }

    let path = dir.path().join("a-pred.ckpt");
    let ckpt = load_checkpoint(&path).unwrap();
    if ckpt.to_bytes().unwrap() != a.1 {
        bad.push("re-encoding a loaded checkpoint changes its bytes");
    }
    let restored = PredictorModel::from_checkpoint(&ckpt).unwrap().to_checkpoint();
    let bits = |c: &Checkpoint| -> Vec<(String, Vec<u64>)> {
        c.tensors.iter().map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
    };
    if bits(&restored) != bits(&ckpt) {
        bad.push("model round trip changes parameters");
    }

    let mut corrupt = a.1.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0x01;
    if !matches!(Checkpoint::from_bytes(&corrupt), Err(GeneError::Checkpoint(_))) {
        bad.push("flipped payload byte not detected");
    }
    let mut newer = a.1.clone();
    newer[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    if !matches!(Checkpoint::from_bytes(&newer), Err(GeneError::Version { .. })) {
        bad.push("newer format version not refused");
    }
    if !matches!(Checkpoint::from_bytes(&a.1[..a.1.len() / 2]), Err(GeneError::Checkpoint(_))) {
        bad.push("truncated file not refused");
    }
    let detail = if bad.is_empty() {
        format!(
            "reruns bit-identical ({} + {} checkpoint bytes, reports equal); round trip exact; corruption, version and truncation refused",
            a.0.len(),
            a.1.len()
        )
    } else {
        bad.join("; ")
    };
    outcome(bad.is_empty(), detail)
}

// ------------------------------------------------------------------- driver

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: u32| selected.is_empty() || selected.contains(&n);
    let names = [
        (1, "gradient integrity"),
        (2, "loss identities"),
        (3, "metric oracle"),
        (4, "assignment quality"),
        (5, "generation quality"),
        (6, "prediction lift"),
        (7, "determinism"),
        (8, "refinement sweep"),
    ];
    let runs = if wants(4) || wants(5) || wants(8) {
        let start = Instant::now();
        let r = bench_runs();
        eprintln!("benchmark refinement for {} seeds: {:.0}s", r.len(), start.elapsed().as_secs_f64());
        r
    } else {
        Vec::new()
    };
    let mut failed = 0;
    for (n, name) in names {
        if !wants(n) {
            continue;
        }
        let start = Instant::now();
        let o = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&runs),
            5 => criterion_5(&runs),
            6 => criterion_6(),
            7 => criterion_7(),
            _ => criterion_8(&runs),
        };
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {n} {tag} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
