//! Shared helpers for the integration tests: a standalone reference
//! implementation of the federated loop and an IDX byte builder.
//!
//! The reference code below uses nothing from the library except data
//! containers, so agreement with `Federation` is an end-to-end check.

#![allow(dead_code)]

use fedcontrol::{Dataset, ModelSpec, ParamVector, StrategyConfig, TrainerConfig};

/// Plain-array client data: rows of features plus labels.
#[derive(Debug, Clone)]
pub struct RefClient {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl RefClient {
    pub fn to_dataset(&self, classes: usize) -> Dataset {
        let dim = self.x[0].len();
        let flat = self.x.iter().flatten().copied().collect();
        Dataset::new(flat, self.y.clone(), dim, classes).unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefSetup {
    pub dim: usize,
    pub classes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr: f64,
    pub decay: f64,
    pub epochs: usize,
}

/// Softmax regression with `w[k * dim + j]` followed by `b[k]`.
fn logits(theta: &[f64], x: &[f64], dim: usize, classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|k| {
            let row = &theta[k * dim..(k + 1) * dim];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[classes * dim + k]
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn ref_loss(theta: &[f64], c: &RefClient, dim: usize, classes: usize) -> f64 {
    let mut total = 0.0;
    for (x, &y) in c.x.iter().zip(&c.y) {
        let p = softmax(&logits(theta, x, dim, classes));
        total -= p[y].ln();
    }
    total / c.x.len() as f64
}

fn ref_grad(theta: &[f64], c: &RefClient, dim: usize, classes: usize) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for (x, &y) in c.x.iter().zip(&c.y) {
        let p = softmax(&logits(theta, x, dim, classes));
        for k in 0..classes {
            let delta = p[k] - if k == y { 1.0 } else { 0.0 };
            for j in 0..dim {
                g[k * dim + j] += delta * x[j];
            }
            g[classes * dim + k] += delta;
        }
    }
    let n = c.x.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Per-round output of the reference loop.
#[derive(Debug, Clone)]
pub struct RefRound {
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
    pub global: Vec<f64>,
}

/// Full-participation, full-batch federated loop with the weighted
/// combination of sample share, loss ratio and discounted loss sum.
pub fn reference_trace(clients: &[RefClient], init: &[f64], s: RefSetup, rounds: usize) -> Vec<RefRound> {
    let n = clients.len();
    let eps = 1e-12;
    let gamma = 1.0 - s.alpha - s.beta;
    let mut global = init.to_vec();
    // history[i][r] = loss of client i at ledger round r; r = 0 is the
    // initial model.
    let mut history: Vec<Vec<f64>> = clients
        .iter()
        .map(|c| vec![ref_loss(&global, c, s.dim, s.classes)])
        .collect();
    let mut out = Vec::new();
    for round in 0..rounds {
        let lr = s.lr * s.decay.powi(round as i32);
        let mut locals = Vec::new();
        for c in clients {
            let mut theta = global.clone();
            for _ in 0..s.epochs {
                let g = ref_grad(&theta, c, s.dim, s.classes);
                for (t, gv) in theta.iter_mut().zip(&g) {
                    *t -= lr * gv;
                }
            }
            locals.push(theta);
        }
        let losses: Vec<f64> = locals
            .iter()
            .zip(clients)
            .map(|(t, c)| ref_loss(t, c, s.dim, s.classes))
            .collect();
        for (h, &l) in history.iter_mut().zip(&losses) {
            h.push(l);
        }
        let r = round + 1;

        let sizes: Vec<f64> = clients.iter().map(|c| c.x.len() as f64).collect();
        let big_s: f64 = sizes.iter().sum();
        let d: Vec<f64> = history
            .iter()
            .map(|h| h[r - 1].max(eps) / h[r].max(eps))
            .collect();
        let big_d: f64 = d.iter().sum();
        let k: Vec<f64> = history
            .iter()
            .map(|h| (1..=r).map(|rp| s.lambda.powi((r - rp) as i32) * h[rp]).sum())
            .collect();
        let big_k: f64 = k.iter().sum();
        let raw: Vec<f64> = (0..n)
            .map(|i| s.alpha * sizes[i] / big_s + s.beta * d[i] / big_d + gamma * k[i] / big_k)
            .collect();
        let z: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / z).collect();

        let mut next = vec![0.0; global.len()];
        for (theta, w) in locals.iter().zip(&weights) {
            for (acc, t) in next.iter_mut().zip(theta) {
                *acc += w * t;
            }
        }
        global = next;
        out.push(RefRound {
            weights,
            losses,
            global: global.clone(),
        });
    }
    out
}

/// Three small hand-made clients of unequal size, two features, three
/// classes.
pub fn oracle_clients() -> Vec<RefClient> {
    vec![
        RefClient {
            x: vec![vec![1.0, 0.5], vec![0.8, -0.2], vec![-1.2, 0.3], vec![0.1, 1.4]],
            y: vec![0, 0, 1, 2],
        },
        RefClient {
            x: vec![vec![-0.7, -0.9], vec![-1.5, 0.2], vec![0.3, 1.1], vec![0.9, 0.1], vec![-0.4, 1.6], vec![1.3, -0.6]],
            y: vec![1, 1, 2, 0, 2, 0],
        },
        RefClient {
            x: vec![vec![0.2, 2.0], vec![1.7, 0.4], vec![-2.1, -0.3]],
            y: vec![2, 0, 1],
        },
    ]
}

pub fn oracle_setup() -> RefSetup {
    RefSetup {
        dim: 2,
        classes: 3,
        alpha: 1.0 / 3.0,
        beta: 1.0 / 3.0,
        lambda: 0.8,
        lr: 0.5,
        decay: 0.9,
        epochs: 2,
    }
}

pub fn oracle_eval() -> RefClient {
    RefClient {
        x: vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
        y: vec![0, 1, 2],
    }
}

/// Run the library on the oracle problem with a batch size covering every
/// client, returning per-round (weights, losses, global params).
pub fn library_trace(rounds: usize) -> (Vec<f64>, Vec<RefRound>) {
    use fedcontrol::Federation;
    let s = oracle_setup();
    let clients = oracle_clients();
    let spec = ModelSpec::logistic(s.dim, s.classes, 17);
    let init = spec.init_params();
    let trainer = TrainerConfig {
        local_epochs: s.epochs,
        batch_size: 64,
        base_lr: s.lr,
        lr_decay: s.decay,
        shuffle_seed: 3,
    };
    let mut fed = Federation::new(
        spec,
        clients.iter().map(|c| c.to_dataset(s.classes)).collect(),
        oracle_eval().to_dataset(s.classes),
        init.clone(),
        StrategyConfig::fedcontrol(s.alpha, s.beta, s.lambda),
        trainer,
        1.0,
        5,
    )
    .unwrap();
    let trace = (0..rounds)
        .map(|_| {
            let rec = fed.run_round().unwrap();
            RefRound {
                weights: rec.weights.weights().to_vec(),
                losses: rec.client_losses.clone(),
                global: fed.global().as_slice().to_vec(),
            }
        })
        .collect();
    (init.into_inner(), trace)
}

/// Largest coordinate-wise difference between the library and reference
/// traces over weights, local losses and global parameters.
pub fn oracle_max_deviation(rounds: usize) -> f64 {
    let (init, lib) = library_trace(rounds);
    let reference = reference_trace(&oracle_clients(), &init, oracle_setup(), rounds);
    let mut worst: f64 = 0.0;
    for (a, b) in lib.iter().zip(&reference) {
        for (x, y) in a
            .weights
            .iter()
            .chain(&a.losses)
            .chain(&a.global)
            .zip(b.weights.iter().chain(&b.losses).chain(&b.global))
        {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn param(values: Vec<f64>) -> ParamVector {
    ParamVector::new(values).unwrap()
}

/// Bytes of an IDX image file.
pub fn idx_images(magic: u32, rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&magic.to_be_bytes());
    b.extend_from_slice(&(images.len() as u32).to_be_bytes());
    b.extend_from_slice(&rows.to_be_bytes());
    b.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        b.extend_from_slice(img);
    }
    b
}

/// Bytes of an IDX label file.
pub fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&magic.to_be_bytes());
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Two 3x3 images covering 0, 255 and a few values in between.
pub fn fixture_images() -> Vec<Vec<u8>> {
    vec![
        vec![0, 1, 2, 127, 128, 200, 253, 254, 255],
        vec![255, 0, 255, 0, 17, 0, 255, 0, 255],
    ]
}
