use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{gelu, gelu_derivative, Linear, NetworkSpec};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, gaussian_matrix, matmul, matmul_nt, matmul_tn, seeded_rng, Matrix};
use crate::losses::cross_entropy;
use crate::optim::{AdamWParams, Optimizer, OptimizerKind};

/// Backbone weights to be frozen, plus the pooled-task head they were
/// trained with (not reused by the adapted network).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub layers: Vec<Matrix>,
    pub head: Option<Linear>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        30
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        32
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: defaults::epochs(),
            lr: defaults::lr(),
            batch_size: defaults::batch_size(),
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

const INIT_STREAM: u64 = 0x5052;
const SHUFFLE_STREAM: u64 = 0x5348;

/// Fully trainable copy of the backbone used only for pretraining.
struct PlainNet {
    layers: Vec<Matrix>,
    head: Linear,
}

impl PlainNet {
    fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let layers = spec
            .layer_shapes()
            .iter()
            .enumerate()
            .map(|(l, &(d, d_in))| {
                let mut rng = seeded_rng(derive_seed(seed, &[INIT_STREAM, l as u64]));
                gaussian_matrix(&mut rng, d, d_in, 1.0 / (d_in as f64).sqrt())
            })
            .collect();
        let mut rng = seeded_rng(derive_seed(seed, &[INIT_STREAM, u64::MAX]));
        let head = Linear {
            w: gaussian_matrix(
                &mut rng,
                spec.num_classes,
                spec.hidden_dim,
                1.0 / (spec.hidden_dim as f64).sqrt(),
            ),
            b: Matrix::zeros(spec.num_classes, 1),
        };
        Self { layers, head }
    }

    fn forward(&self, x: &Matrix) -> Result<(Vec<Matrix>, Vec<Matrix>, Matrix)> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for w in &self.layers {
            let z = matmul(w, &h)?;
            inputs.push(h);
            h = z.map(gelu);
            pre.push(z);
        }
        let logits = self.head.forward(&h)?;
        inputs.push(h);
        Ok((inputs, pre, logits))
    }

    /// Gradients in the order `layers…, head.W, head.b`.
    fn gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Matrix, Vec<Option<Matrix>>)> {
        let (inputs, pre, logits) = self.forward(x)?;
        let (loss, dlogits) = cross_entropy(&logits, labels)?;
        let (dhw, dhb, mut up) = self.head.backward(inputs.last().expect("head input"), &dlogits)?;
        let mut grads = vec![None; self.layers.len() + 2];
        for l in (0..self.layers.len()).rev() {
            let z = &pre[l];
            let dz = Matrix::from_fn(z.rows(), z.cols(), |i, j| up[(i, j)] * gelu_derivative(z[(i, j)]));
            grads[l] = Some(matmul_nt(&dz, &inputs[l])?);
            up = matmul_tn(&self.layers[l], &dz)?;
        }
        grads[self.layers.len()] = Some(dhw);
        grads[self.layers.len() + 1] = Some(dhb);
        Ok((loss, logits, grads))
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.layers.iter_mut().collect();
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }
}

fn argmax_column(m: &Matrix, j: usize) -> usize {
    (0..m.rows())
        .max_by(|&a, &b| m[(a, j)].total_cmp(&m[(b, j)]).then(b.cmp(&a)))
        .unwrap_or(0)
}

/// Trains a plain copy of the backbone (all weights trainable, one head) on
/// data pooled from every domain, with AdamW. Returns the weights to freeze.
pub fn pretrain_base(
    spec: &NetworkSpec,
    pooled: &[&DomainDataset],
    config: &PretrainConfig,
) -> Result<(BaseWeights, PretrainReport)> {
    spec.validate()?;
    if config.batch_size == 0 || config.lr.is_nan() || config.lr <= 0.0 {
        return Err(Error::Config("pretraining needs batch_size > 0 and lr > 0".into()));
    }
    let samples: Vec<(&DomainDataset, usize)> = pooled
        .iter()
        .flat_map(|set| (0..set.len()).map(move |i| (*set, i)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("pretraining data is empty".into()));
    }
    if pooled.iter().any(|s| s.input_dim != spec.input_dim || s.num_classes != spec.num_classes) {
        return Err(Error::Config("pretraining data does not match the network spec".into()));
    }

    let mut net = PlainNet::init(spec, config.seed);
    let shapes: Vec<_> = net.params_mut().iter().map(|p| p.shape()).collect();
    let hp = AdamWParams {
        weight_decay: config.weight_decay,
        ..AdamWParams::default()
    };
    let mut opt = Optimizer::new(OptimizerKind::Adamw, hp, &shapes);
    let decay = vec![config.weight_decay > 0.0; shapes.len()];
    let mut rng = seeded_rng(derive_seed(config.seed, &[SHUFFLE_STREAM]));
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let gather = |idx: &[usize]| {
        let x = Matrix::from_fn(spec.input_dim, idx.len(), |f, j| {
            let (set, i) = samples[idx[j]];
            set.samples[i].features[f]
        });
        let labels: Vec<usize> = idx
            .iter()
            .map(|&k| {
                let (set, i) = samples[k];
                set.samples[i].label
            })
            .collect();
        (x, labels)
    };

    let mut steps = 0;
    let mut last_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = gather(chunk);
            let (loss, _, grads) = net.gradients(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: steps,
                    last_good: None,
                });
            }
            last_loss = loss;
            opt.step(net.params_mut(), &grads, &decay, config.lr)?;
            steps += 1;
        }
    }

    let all: Vec<usize> = (0..samples.len()).collect();
    let mut correct = 0;
    for chunk in all.chunks(256) {
        let (x, labels) = gather(chunk);
        let (_, _, logits) = net.forward(&x)?;
        correct += labels
            .iter()
            .enumerate()
            .filter(|(j, l)| argmax_column(&logits, *j) == **l)
            .count();
    }
    let report = PretrainReport {
        epochs: config.epochs,
        steps,
        final_loss: last_loss,
        train_accuracy: correct as f64 / samples.len() as f64,
    };
    Ok((
        BaseWeights {
            layers: net.layers,
            head: Some(net.head),
        },
        report,
    ))
}

pub(crate) fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.cols()).map(|j| argmax_column(logits, j)).collect()
}
