use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::container::{write_atomic, ContainerError, TensorContainer};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RandomSource};
use crate::lora::{LayerMode, LoraPair};
use crate::model::{fingerprint, BaseWeights, Linear, MultiDomainNet, NetworkSpec};
use crate::optim::{AdamWParams, MomentState, Optimizer, OptimizerKind};
use crate::train::{MetricsRow, TrainState};

const KIND: &str = "sslora-checkpoint";

/// Metadata stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network_spec: NetworkSpec,
    pub base_fingerprint: String,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub net: MultiDomainNet,
    /// Present when the checkpoint was written during training.
    pub state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    lr: f64,
    optimizer: OptimizerKind,
    hp: AdamWParams,
    moment_steps: Vec<u64>,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: u128,
    degenerate_ss_pairs: usize,
    metrics: Vec<MetricsRow>,
}

/// Encodes frozen weights, adapters, heads, spec and (optionally) the
/// optimizer/RNG state into a tensor container.
pub fn checkpoint_container(net: &MultiDomainNet, state: Option<&TrainState>) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    for (l, layer) in net.layers.iter().enumerate() {
        c.insert_matrix(format!("layer{l}.W"), layer.weight());
    }
    let infos = net.param_infos();
    for (info, p) in infos.iter().zip(net.params()) {
        c.insert_matrix(info.name.clone(), p);
    }
    let step = state.map_or(0, |s| s.step);
    c.metadata.insert("kind".into(), KIND.into());
    c.metadata
        .insert("network_spec".into(), serde_json::to_string(net.spec())?);
    c.metadata
        .insert("base_fingerprint".into(), net.base_fingerprint().into());
    c.metadata.insert("step".into(), step.to_string());

    if let Some(state) = state {
        let opt = &state.optimizer;
        for (info, m) in infos.iter().zip(&opt.moments) {
            c.insert_matrix(format!("opt.m.{}", info.name), &m.m);
            c.insert_matrix(format!("opt.v.{}", info.name), &m.v);
        }
        let meta = StateMeta {
            step: state.step,
            lr: state.lr,
            optimizer: opt.kind,
            hp: opt.hp,
            moment_steps: opt.moments.iter().map(|m| m.steps).collect(),
            rng_seed: state.rng.get_seed(),
            rng_stream: state.rng.get_stream(),
            rng_word_pos: state.rng.get_word_pos(),
            degenerate_ss_pairs: state.degenerate_ss_pairs,
            metrics: state.metrics.clone(),
        };
        c.metadata
            .insert("train_state".into(), serde_json::to_string(&meta)?);
    }
    Ok(c)
}

pub fn save_checkpoint(path: &Path, net: &MultiDomainNet, state: Option<&TrainState>) -> Result<()> {
    let c = checkpoint_container(net, state)?;
    write_atomic(path, &super::container::write_container(&c))?;
    Ok(())
}

fn meta_field<'a>(c: &'a TensorContainer, key: &str) -> Result<&'a str> {
    c.metadata
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Contract(format!("checkpoint metadata lacks `{key}`")))
}

fn pair(c: &TensorContainer, prefix: &str) -> Result<LoraPair> {
    LoraPair::new(c.matrix(&format!("{prefix}.A"))?, c.matrix(&format!("{prefix}.B"))?)
}

/// Decodes a checkpoint container and checks that the frozen weights still
/// hash to the recorded fingerprint.
pub fn checkpoint_from_container(c: &TensorContainer) -> Result<Checkpoint> {
    if meta_field(c, "kind")? != KIND {
        return Err(Error::Contract("container is not a checkpoint".into()));
    }
    let spec: NetworkSpec = serde_json::from_str(meta_field(c, "network_spec")?)?;
    spec.validate()?;
    let recorded = meta_field(c, "base_fingerprint")?.to_string();
    let step: usize = meta_field(c, "step")?
        .parse()
        .map_err(|_| Error::Contract("checkpoint step is not an integer".into()))?;

    let modes = spec.layer_modes();
    let mut weights = Vec::with_capacity(modes.len());
    let mut shared = Vec::with_capacity(modes.len());
    let mut specific = Vec::with_capacity(modes.len());
    for (l, mode) in modes.iter().enumerate() {
        weights.push(c.matrix(&format!("layer{l}.W"))?);
        shared.push(pair(c, &format!("layer{l}.shared"))?);
        specific.push(match mode {
            LayerMode::Both => (0..spec.num_domains)
                .map(|i| pair(c, &format!("layer{l}.dom{i}")))
                .collect::<Result<Vec<_>>>()?,
            LayerMode::SharedOnly => Vec::new(),
        });
    }
    let actual = fingerprint(&weights);
    if actual != recorded {
        return Err(Error::Contract(format!(
            "frozen weights changed: fingerprint {actual} does not match recorded {recorded}"
        )));
    }
    let heads = (0..spec.num_domains)
        .map(|i| {
            Ok(Linear {
                w: c.matrix(&format!("head{i}.W"))?,
                b: c.matrix(&format!("head{i}.b"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let net = MultiDomainNet::from_parts(spec.clone(), weights, shared, specific, heads)?;

    let state = match c.metadata.get("train_state") {
        None => None,
        Some(json) => Some(decode_state(c, &net, serde_json::from_str(json)?)?),
    };
    Ok(Checkpoint {
        meta: CheckpointMeta {
            network_spec: spec,
            base_fingerprint: recorded,
            step,
        },
        net,
        state,
    })
}

fn decode_state(c: &TensorContainer, net: &MultiDomainNet, meta: StateMeta) -> Result<TrainState> {
    let infos = net.param_infos();
    let moments = match meta.optimizer {
        OptimizerKind::Sgd => Vec::new(),
        OptimizerKind::Adamw => {
            if meta.moment_steps.len() != infos.len() {
                return Err(Error::Contract("optimizer state does not match parameters".into()));
            }
            infos
                .iter()
                .zip(&meta.moment_steps)
                .map(|(info, &steps)| {
                    Ok(MomentState {
                        m: c.matrix(&format!("opt.m.{}", info.name))?,
                        v: c.matrix(&format!("opt.v.{}", info.name))?,
                        steps,
                    })
                })
                .collect::<std::result::Result<Vec<_>, ContainerError>>()?
        }
    };
    let mut rng = RandomSource::from_seed(meta.rng_seed);
    rng.set_stream(meta.rng_stream);
    rng.set_word_pos(meta.rng_word_pos);
    Ok(TrainState {
        step: meta.step,
        optimizer: Optimizer {
            kind: meta.optimizer,
            hp: meta.hp,
            moments,
        },
        lr: meta.lr,
        rng,
        metrics: meta.metrics,
        degenerate_ss_pairs: meta.degenerate_ss_pairs,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_container(&TensorContainer::load(path)?)
}

/// Stores pretrained backbone weights as `layer{l}.W` plus the pooled head
/// (`head.W`, `head.b`) when present.
pub fn save_base_weights(path: &Path, spec: &NetworkSpec, base: &BaseWeights) -> Result<()> {
    let mut c = TensorContainer::new();
    for (l, w) in base.layers.iter().enumerate() {
        c.insert_matrix(format!("layer{l}.W"), w);
    }
    if let Some(head) = &base.head {
        c.insert_matrix("head.W", &head.w);
        c.insert_matrix("head.b", &head.b);
    }
    c.metadata.insert("kind".into(), "sslora-base".into());
    c.metadata
        .insert("network_spec".into(), serde_json::to_string(spec)?);
    c.metadata
        .insert("base_fingerprint".into(), fingerprint(&base.layers));
    write_atomic(path, &super::container::write_container(&c))?;
    Ok(())
}

/// Reads every consecutive `layer{l}.W` tensor from a container (a base
/// weight file or a checkpoint).
pub fn layer_weights(c: &TensorContainer) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    while let Some(t) = c.tensors.get(&format!("layer{}.W", out.len())) {
        out.push(t.to_matrix()?);
    }
    if out.is_empty() {
        return Err(Error::Container(ContainerError::MissingTensor("layer0.W".into())));
    }
    Ok(out)
}

pub fn load_base_weights(path: &Path) -> Result<BaseWeights> {
    let c = TensorContainer::load(path)?;
    let layers = layer_weights(&c)?;
    let head = match (c.tensors.get("head.W"), c.tensors.get("head.b")) {
        (Some(w), Some(b)) => Some(Linear {
            w: w.to_matrix()?,
            b: b.to_matrix()?,
        }),
        _ => None,
    };
    Ok(BaseWeights { layers, head })
}

/// Tensors needed to apply one domain's adaptation on top of the frozen
/// weights: every shared adapter, that domain's adapters and its head.
pub fn export_domain_adapters(net: &MultiDomainNet, domain: usize) -> Result<TensorContainer> {
    if domain >= net.spec().num_domains {
        return Err(Error::Contract(format!("domain {domain} out of range")));
    }
    let mut c = TensorContainer::new();
    let wanted = |name: &str| {
        name.contains(".shared.")
            || name.contains(&format!(".dom{domain}."))
            || name.starts_with(&format!("head{domain}."))
    };
    for (info, p) in net.param_infos().iter().zip(net.params()) {
        if wanted(&info.name) {
            c.insert_matrix(info.name.clone(), p);
        }
    }
    c.metadata.insert("domain".into(), domain.to_string());
    c.metadata
        .insert("base_fingerprint".into(), net.base_fingerprint().into());
    Ok(c)
}
