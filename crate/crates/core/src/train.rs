//! Multi-domain training: round-robin domain batches, regularized loss,
//! SGD/AdamW updates on adapters and heads, periodic validation through
//! merged weights, and a per-step metrics CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, DomainDataset};
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, seeded_rng, Matrix, RandomSource};
use crate::lora::{Constraint, LayerMode};
use crate::losses::{cross_entropy, orth_loss, ss_loss, total_loss, LossBreakdown};
use crate::model::{predict, MultiDomainNet, ParamKind};
use crate::optim::{AdamWParams, MultiStepLr, Optimizer, OptimizerKind};
use crate::persist::{save_checkpoint, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps at which the learning rate is multiplied by `gamma`. Defaults
    /// to 60% and 85% of `max_steps`.
    pub milestones: Option<Vec<usize>>,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub reproject_every_step: bool,
    /// Validation period in steps; the final step is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            max_steps: 2000,
            optimizer: OptimizerKind::Adamw,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            milestones: None,
            gamma: 0.1,
            lambda1: 1.0,
            lambda2: 1e-7,
            seed: 0,
            reproject_every_step: false,
            eval_every: 200,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn milestones(&self) -> Vec<usize> {
        self.milestones.clone().unwrap_or_else(|| {
            let at = |f: f64| (self.max_steps as f64 * f).round() as usize;
            let mut m = vec![at(0.6), at(0.85)];
            m.dedup();
            m.retain(|s| *s > 0);
            m
        })
    }

    pub fn schedule(&self) -> Result<MultiStepLr> {
        MultiStepLr::new(self.lr, self.milestones(), self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub domain: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub val_acc: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub rng: RandomSource,
    pub metrics: Vec<MetricsRow>,
    /// Regularizer pairs skipped because two Gram matrices coincided.
    pub degenerate_ss_pairs: usize,
}

const BATCH_STREAM: u64 = 0x4241;

impl TrainState {
    pub fn new(net: &MultiDomainNet, config: &TrainConfig) -> Self {
        let shapes: Vec<_> = net.params().iter().map(|p| p.shape()).collect();
        Self {
            step: 0,
            optimizer: Optimizer::new(config.optimizer, config.adamw(), &shapes),
            lr: config.lr,
            rng: seeded_rng(derive_seed(config.seed, &[BATCH_STREAM])),
            metrics: Vec::new(),
            degenerate_ss_pairs: 0,
        }
    }
}

pub fn schedule_lr(state: &TrainState, config: &TrainConfig) -> Result<f64> {
    Ok(config.schedule()?.lr_at(state.step))
}

/// Weight decay applies to `A` factors and heads, and to `B` factors only
/// when no subspace constraint is active.
pub fn decay_mask(net: &MultiDomainNet) -> Vec<bool> {
    let constrained = net.spec().constraint == Constraint::Subspace;
    net.param_infos()
        .iter()
        .map(|info| match info.kind {
            ParamKind::LoraB => !constrained,
            _ => true,
        })
        .collect()
}

/// Regularizer value over all layers with domain adapters, summed across
/// layers, with gradients keyed by canonical parameter index.
#[derive(Debug, Clone)]
pub struct RegularizerTerms {
    pub orth: f64,
    pub ss: f64,
    pub grads: Vec<(usize, Matrix)>,
    pub degenerate_pairs: usize,
}

pub fn regularizers(net: &MultiDomainNet, lambda1: f64, lambda2: f64) -> Result<RegularizerTerms> {
    let mut out = RegularizerTerms {
        orth: 0.0,
        ss: 0.0,
        grads: Vec::new(),
        degenerate_pairs: 0,
    };
    for (l, layer) in net.layers.iter().enumerate() {
        if layer.mode() != LayerMode::Both {
            continue;
        }
        let bs: Vec<&Matrix> = layer.specific.iter().map(|p| &p.b).collect();
        let (orth, orth_grads) = orth_loss(&bs)?;
        let ss = ss_loss(&bs)?;
        out.orth += orth;
        out.ss += ss.value;
        out.degenerate_pairs += ss.degenerate_pairs;
        if lambda1 == 0.0 && lambda2 == 0.0 {
            continue;
        }
        let base = net.layer_param_offset(l);
        for (i, (go, gs)) in orth_grads.iter().zip(&ss.grads).enumerate() {
            let mut g = go.scale(lambda1);
            g.axpy(lambda2, gs)?;
            out.grads.push((base + 3 + 2 * i, g));
        }
    }
    Ok(out)
}

/// One optimisation step on a single-domain batch.
pub fn step(
    net: &mut MultiDomainNet,
    batch: &Batch,
    state: &mut TrainState,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let lr = schedule_lr(state, config)?;
    state.lr = lr;

    let trace = net.forward_trace(&batch.x, batch.domain)?;
    let (ce, dlogits) = cross_entropy(&trace.logits, &batch.labels)?;
    let grads = net.backward(&trace, &dlogits)?;
    let mut flat = net.flatten_gradients(&grads);

    let reg = regularizers(net, config.lambda1, config.lambda2)?;
    state.degenerate_ss_pairs += reg.degenerate_pairs;
    for (idx, g) in reg.grads {
        match &mut flat[idx] {
            Some(existing) => existing.axpy(1.0, &g)?,
            slot @ None => *slot = Some(g),
        }
    }
    let loss = total_loss(ce, reg.orth, reg.ss, config.lambda1, config.lambda2);
    if !loss.total.is_finite() || flat.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            last_good: None,
        });
    }

    let decay = decay_mask(net);
    state.optimizer.step(net.params_mut(), &flat, &decay, lr)?;
    if config.reproject_every_step {
        for layer in &mut net.layers {
            layer.reproject()?;
        }
    }
    state.step += 1;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_ce: f64,
    pub count: usize,
}

/// Accuracy and mean cross-entropy of `net` on one domain's data, computed
/// with merged weights.
pub fn evaluate(net: &MultiDomainNet, dataset: &DomainDataset, domain: usize) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    if dataset.domain != domain {
        return Err(Error::Contract(format!(
            "dataset belongs to domain {}, evaluation asked for {domain}",
            dataset.domain
        )));
    }
    let merged = net.merged(domain)?;
    let batch = dataset.full_batch();
    let logits = merged.forward(&batch.x)?;
    let (mean_ce, _) = cross_entropy(&logits, &batch.labels)?;
    let correct = predict(&logits)
        .iter()
        .zip(&batch.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(EvalResult {
        accuracy: correct as f64 / batch.labels.len() as f64,
        mean_ce,
        count: batch.labels.len(),
    })
}

pub fn metrics_csv(rows: &[MetricsRow], num_domains: usize) -> String {
    let mut out = String::from("step,domain,ce,orth,ss,total,lr");
    for d in 0..num_domains {
        write!(out, ",val_acc_d{d}").expect("write to string");
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.domain, r.loss.ce, r.loss.orth, r.loss.ss, r.loss.total, r.lr
        )
        .expect("write to string");
        for d in 0..num_domains {
            match &r.val_acc {
                Some(acc) => write!(out, ",{}", acc[d]).expect("write to string"),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Where `train_loop` writes its artifacts.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Refreshed at every validation step.
    pub last_good: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("checkpoint.sslw"),
            metrics: dir.join("metrics.csv"),
            last_good: dir.join("last_good.sslw"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub final_val: Vec<EvalResult>,
    pub metrics_csv: String,
}

/// Trains until `config.max_steps`. Step `t` draws a batch (uniformly, with
/// replacement) from domain `t mod D`.
pub fn train_loop(
    net: &mut MultiDomainNet,
    train: &[DomainDataset],
    val: &[DomainDataset],
    config: &TrainConfig,
    resume: Option<TrainState>,
    out: Option<&OutputPaths>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let num_domains = net.spec().num_domains;
    if train.len() != num_domains || val.len() != num_domains {
        return Err(Error::Config(format!(
            "expected {num_domains} train and val sets, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    if let Some(empty) = train.iter().chain(val).find(|s| s.is_empty()) {
        return Err(Error::Config(format!("dataset for domain {} is empty", empty.domain)));
    }
    let mut state = resume.unwrap_or_else(|| TrainState::new(net, config));
    let mut last_good: Option<PathBuf> = None;

    while state.step < config.max_steps {
        let domain = state.step % num_domains;
        let set = &train[domain];
        let indices: Vec<usize> = (0..config.batch_size)
            .map(|_| state.rng.gen_range(0..set.len()))
            .collect();
        let batch = set.batch(&indices);
        let step_index = state.step;
        let loss = match step(net, &batch, &mut state, config) {
            Ok(loss) => loss,
            Err(Error::Diverged { step, .. }) => {
                return Err(Error::Diverged { step, last_good })
            }
            Err(e) => return Err(e),
        };
        let is_eval = (step_index + 1).is_multiple_of(config.eval_every) || state.step == config.max_steps;
        let val_acc = if is_eval {
            let acc = val
                .iter()
                .enumerate()
                .map(|(d, set)| evaluate(net, set, d).map(|r| r.accuracy))
                .collect::<Result<Vec<_>>>()?;
            if let Some(paths) = out {
                save_checkpoint(&paths.last_good, net, Some(&state))?;
                last_good = Some(paths.last_good.clone());
            }
            Some(acc)
        } else {
            None
        };
        state.metrics.push(MetricsRow {
            step: step_index,
            domain,
            loss,
            lr: state.lr,
            val_acc,
        });
    }

    let final_val = val
        .iter()
        .enumerate()
        .map(|(d, set)| evaluate(net, set, d))
        .collect::<Result<Vec<_>>>()?;
    let metrics_csv = metrics_csv(&state.metrics, num_domains);
    if let Some(paths) = out {
        save_checkpoint(&paths.checkpoint, net, Some(&state))?;
        write_atomic(&paths.metrics, metrics_csv.as_bytes())?;
    }
    Ok(TrainOutcome {
        state,
        final_val,
        metrics_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DomainDatasetSpec};
    use crate::linalg::gaussian_matrix;
    use crate::lora::{InitScheme, LoraPair};
    use crate::model::{Activation, BaseWeights, Linear, NetworkSpec, Structure};

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 6,
            hidden_dim: 6,
            num_blocks: 1,
            num_classes: 3,
            num_domains: 3,
            structure: Structure::AllFlat,
            rank: 2,
            threshold: 0.8,
            activation: Activation::Gelu,
            constraint: Constraint::Subspace,
            init: InitScheme::Gaussian { std: 0.2 },
            head_init_std: 0.1,
        }
    }

    fn tiny_setup() -> (MultiDomainNet, Vec<DomainDataset>, Vec<DomainDataset>) {
        let spec = tiny_spec();
        let mut rng = seeded_rng(1);
        let base = BaseWeights {
            layers: spec
                .layer_shapes()
                .iter()
                .map(|&(d, d_in)| gaussian_matrix(&mut rng, d, d_in, 0.5))
                .collect(),
            head: None,
        };
        let net = MultiDomainNet::build(&spec, &base, 2).unwrap();
        let data = generate(&DomainDatasetSpec {
            num_domains: 3,
            num_classes: 3,
            input_dim: 6,
            n_train: 5,
            n_val: 3,
            noise_std: 0.2,
            seed: 3,
            ..DomainDatasetSpec::default()
        })
        .unwrap();
        (net, data.train, data.val)
    }

    #[test]
    fn schedule_follows_milestones() {
        let cfg = TrainConfig {
            max_steps: 100,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.milestones(), vec![60, 85]);
        let (net, _, _) = tiny_setup();
        let mut state = TrainState::new(&net, &cfg);
        assert_eq!(schedule_lr(&state, &cfg).unwrap(), 1e-4);
        state.step = 61;
        assert_eq!(schedule_lr(&state, &cfg).unwrap(), 1e-4 * 0.1);
        state.step = 99;
        assert_eq!(schedule_lr(&state, &cfg).unwrap(), 1e-4 * 0.1 * 0.1);
    }

    #[test]
    fn zero_lr_and_lambdas_leave_parameters_unchanged() {
        let (mut net, train, _) = tiny_setup();
        let cfg = TrainConfig {
            lr: 1e-300,
            gamma: 0.0,
            milestones: Some(vec![0]),
            weight_decay: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let before: Vec<Matrix> = net.params().into_iter().cloned().collect();
        let mut state = TrainState::new(&net, &cfg);
        let loss = step(&mut net, &train[0].batch(&[0, 1, 2]), &mut state, &cfg).unwrap();
        assert!(loss.total.is_finite());
        assert_eq!(state.lr, 0.0);
        let after: Vec<Matrix> = net.params().into_iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn sgd_step_matches_hand_computation() {
        // W0 = diag(2, 0.1), W1 = diag(1, 0.1), threshold 0.9 → k = 1, s = 1.
        // GELU sits between layer and head, so the expected update is built
        // from explicitly written chain-rule arithmetic.
        let spec = NetworkSpec {
            input_dim: 2,
            hidden_dim: 2,
            num_blocks: 1,
            num_classes: 2,
            num_domains: 1,
            structure: Structure::AllFlat,
            rank: 1,
            threshold: 0.9,
            activation: Activation::Gelu,
            constraint: Constraint::Subspace,
            init: InitScheme::default(),
            head_init_std: 0.1,
        };
        let w0 = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 0.1]]);
        let w1 = Matrix::diag(&[1.0, 0.1]);
        let shared = LoraPair::new(
            Matrix::column_vector(&[0.5, -0.5]),
            Matrix::column_vector(&[0.3, 0.0]),
        )
        .unwrap();
        let dom = LoraPair::new(
            Matrix::column_vector(&[0.2, 0.4]),
            Matrix::column_vector(&[0.0, 0.6]),
        )
        .unwrap();
        let zero = LoraPair::zeros(2, 2, 1);
        let head = Linear {
            w: Matrix::from_rows(&[&[1.0, -1.0], &[0.5, 0.5]]),
            b: Matrix::zeros(2, 1),
        };
        let mut net = MultiDomainNet::from_parts(
            spec,
            vec![w0.clone(), w1],
            vec![shared.clone(), zero.clone()],
            vec![vec![dom.clone()], vec![zero]],
            vec![head.clone()],
        )
        .unwrap();
        let x = [1.0, 2.0];
        let label = 0;

        // Forward by hand. P_m = e1e1ᵀ, P_n = e2e2ᵀ.
        let u = 0.5 * x[0] - 0.5 * x[1]; // Aᵀx shared
        let ui = 0.2 * x[0] + 0.4 * x[1]; // Aᵀx domain
        let z0 = [2.0 * x[0] + 0.3 * u, 0.1 * x[1] + 0.6 * ui];
        let h0 = [crate::model::gelu(z0[0]), crate::model::gelu(z0[1])];
        let z1 = [h0[0], 0.1 * h0[1]]; // second layer: diag(1, 0.1), zero adapters
        let h1 = [crate::model::gelu(z1[0]), crate::model::gelu(z1[1])];
        let logits = [h1[0] - h1[1], 0.5 * h1[0] + 0.5 * h1[1]];
        let m = logits[0].max(logits[1]);
        let z = (logits[0] - m).exp() + (logits[1] - m).exp();
        let p = [(logits[0] - m).exp() / z, (logits[1] - m).exp() / z];
        let dlog = [p[0] - 1.0, p[1]];
        let dh1 = [dlog[0] + 0.5 * dlog[1], -dlog[0] + 0.5 * dlog[1]];
        let dz1 = [dh1[0] * crate::model::gelu_derivative(z1[0]), dh1[1] * crate::model::gelu_derivative(z1[1])];
        let dh0 = [dz1[0], 0.1 * dz1[1]]; // W1ᵀ dz1
        let dz0 = [dh0[0] * crate::model::gelu_derivative(z0[0]), dh0[1] * crate::model::gelu_derivative(z0[1])];
        // Shared: g = P_m dz0 = (dz0[0], 0); dB = g·u; dA = x·(Bᵀg) = x·0.3·dz0[0].
        let d_shared_b = [dz0[0] * u, 0.0];
        let d_shared_a = [x[0] * 0.3 * dz0[0], x[1] * 0.3 * dz0[0]];
        // Domain: g = P_n dz0 = (0, dz0[1]); dB = g·ui; dA = x·(0.6·dz0[1]).
        let d_dom_b = [0.0, dz0[1] * ui];
        let d_dom_a = [x[0] * 0.6 * dz0[1], x[1] * 0.6 * dz0[1]];

        let lr = 0.5;
        let cfg = TrainConfig {
            lr,
            milestones: Some(vec![]),
            optimizer: OptimizerKind::Sgd,
            lambda1: 0.0,
            lambda2: 0.0,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(&net, &cfg);
        let batch = Batch {
            domain: 0,
            x: Matrix::column_vector(&x),
            labels: vec![label],
        };
        step(&mut net, &batch, &mut state, &cfg).unwrap();
        let l0 = &net.layers[0];
        for i in 0..2 {
            assert!((l0.shared.b[(i, 0)] - (shared.b[(i, 0)] - lr * d_shared_b[i])).abs() < 1e-14);
            assert!((l0.shared.a[(i, 0)] - (shared.a[(i, 0)] - lr * d_shared_a[i])).abs() < 1e-14);
            assert!((l0.specific[0].b[(i, 0)] - (dom.b[(i, 0)] - lr * d_dom_b[i])).abs() < 1e-14);
            assert!((l0.specific[0].a[(i, 0)] - (dom.a[(i, 0)] - lr * d_dom_a[i])).abs() < 1e-14);
        }
        assert_eq!(net.layers[0].weight(), &w0);
    }

    #[test]
    fn round_robin_domain_order() {
        let (mut net, train, val) = tiny_setup();
        let cfg = TrainConfig {
            max_steps: 6,
            eval_every: 3,
            ..TrainConfig::default()
        };
        let out = train_loop(&mut net, &train, &val, &cfg, None, None).unwrap();
        let domains: Vec<usize> = out.state.metrics.iter().map(|r| r.domain).collect();
        assert_eq!(domains, vec![0, 1, 2, 0, 1, 2]);
        let evals: Vec<bool> = out.state.metrics.iter().map(|r| r.val_acc.is_some()).collect();
        assert_eq!(evals, vec![false, false, true, false, false, true]);
    }

    #[test]
    fn zero_steps_leave_network_untouched() {
        let (mut net, train, val) = tiny_setup();
        let before: Vec<Matrix> = net.params().into_iter().cloned().collect();
        let cfg = TrainConfig {
            max_steps: 0,
            ..TrainConfig::default()
        };
        let out = train_loop(&mut net, &train, &val, &cfg, None, None).unwrap();
        assert!(out.state.metrics.is_empty());
        let after: Vec<Matrix> = net.params().into_iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let (mut net, mut train, val) = tiny_setup();
        train[1].samples.clear();
        let err = train_loop(&mut net, &train, &val, &TrainConfig::default(), None, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn evaluate_errors_and_constant_predictor() {
        let (mut net, _, val) = tiny_setup();
        assert!(matches!(evaluate(&net, &val[0], 1), Err(Error::Contract(_))));
        let mut empty = val[0].clone();
        empty.samples.clear();
        assert!(matches!(evaluate(&net, &empty, 0), Err(Error::Data(_))));

        // A head that always prefers class 1 scores 1/C on balanced labels.
        net.heads[0].w = Matrix::zeros(3, 6);
        net.heads[0].b = Matrix::column_vector(&[0.0, 1.0, 0.0]);
        let r = evaluate(&net, &val[0], 0).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradients_reach_every_domain() {
        let (net, _, _) = tiny_setup();
        let reg = regularizers(&net, 1.0, 1e-3).unwrap();
        // two layers × three domains
        assert_eq!(reg.grads.len(), 6);
        let none = regularizers(&net, 0.0, 0.0).unwrap();
        assert!(none.grads.is_empty());
        assert!(none.orth > 0.0 && none.ss < 0.0);
    }

    #[test]
    fn same_seed_same_metrics() {
        let cfg = TrainConfig {
            max_steps: 9,
            eval_every: 4,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut net, train, val) = tiny_setup();
            train_loop(&mut net, &train, &val, &cfg, None, None).unwrap().metrics_csv
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.starts_with("step,domain,ce,orth,ss,total,lr,val_acc_d0,val_acc_d1,val_acc_d2\n"));
    }

    #[test]
    fn structure_equivalence_with_zero_specific_init() {
        let mut spec = tiny_spec();
        spec.num_blocks = 2;
        spec.init = InitScheme::ZeroB { std: 0.2 };
        let mut rng = seeded_rng(5);
        let base = BaseWeights {
            layers: spec
                .layer_shapes()
                .iter()
                .map(|&(d, d_in)| gaussian_matrix(&mut rng, d, d_in, 0.5))
                .collect(),
            head: None,
        };
        let flat = MultiDomainNet::build(&spec, &base, 9).unwrap();
        spec.structure = Structure::UpperHeavy;
        let upper = MultiDomainNet::build(&spec, &base, 9).unwrap();
        let x = gaussian_matrix(&mut rng, 6, 4, 1.0);
        assert_eq!(flat.forward(&x, 1).unwrap(), upper.forward(&x, 1).unwrap());
    }

    #[test]
    fn decay_mask_spares_constrained_b() {
        let (net, _, _) = tiny_setup();
        let mask = decay_mask(&net);
        for (info, d) in net.param_infos().iter().zip(mask) {
            assert_eq!(d, info.kind != ParamKind::LoraB, "{}", info.name);
        }
    }
}
