//! Frozen MLP backbone with constrained adapters and per-domain heads.
//!
//! The backbone is `num_blocks` blocks of two linear layers, each followed by
//! GELU. In the upper-heavy structure only the final block's two layers carry
//! domain adapters; the all-flat structure gives them to every layer. Every
//! layer carries a shared adapter. A sample of domain `i` is classified by
//! head `i`.

mod pretrain;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use pretrain::{pretrain_base, BaseWeights, PretrainConfig, PretrainReport};
pub(crate) use pretrain::predict;

use crate::error::{Error, Result};
use crate::linalg::{derive_seed, gaussian_matrix, matmul, matmul_nt, seeded_rng, Matrix};
use crate::lora::{
    init_projected, init_unprojected, ConstrainedLinearLayer, Constraint, InitScheme, LayerGradients,
    LayerMode, LoraPair,
};
use crate::subspace::decompose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    UpperHeavy,
    AllFlat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub structure: Structure,
    pub rank: usize,
    pub threshold: f64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub constraint: Constraint,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default = "default_head_std")]
    pub head_init_std: f64,
}

fn default_head_std() -> f64 {
    0.02
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden_dim: 64,
            num_blocks: 1,
            num_classes: 5,
            num_domains: 3,
            structure: Structure::UpperHeavy,
            rank: 8,
            threshold: 0.95,
            activation: Activation::default(),
            constraint: Constraint::default(),
            init: InitScheme::default(),
            head_init_std: default_head_std(),
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("num_blocks must be at least 1".into()));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.num_domains == 0 {
            return Err(Error::Config("at least one domain is required".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        let min_dim = self.hidden_dim.min(self.input_dim);
        if self.rank == 0 || self.rank > min_dim {
            return Err(Error::Config(format!(
                "rank {} must lie in 1..={min_dim}",
                self.rank
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        2 * self.num_blocks
    }

    /// `(d, d')` for every backbone layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers())
            .map(|l| {
                let d_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                (self.hidden_dim, d_in)
            })
            .collect()
    }

    pub fn layer_modes(&self) -> Vec<LayerMode> {
        let n = self.num_layers();
        (0..n)
            .map(|l| match self.structure {
                Structure::AllFlat => LayerMode::Both,
                Structure::UpperHeavy if l + 2 >= n => LayerMode::Both,
                Structure::UpperHeavy => LayerMode::SharedOnly,
            })
            .collect()
    }

    /// Trainable parameter count: adapters plus heads.
    pub fn trainable_parameters(&self) -> usize {
        let adapters: usize = self
            .layer_shapes()
            .iter()
            .zip(self.layer_modes())
            .map(|(&(d, d_in), mode)| {
                let copies = 1 + if mode == LayerMode::Both { self.num_domains } else { 0 };
                self.rank * (d + d_in) * copies
            })
            .sum();
        adapters + self.num_domains * (self.num_classes * self.hidden_dim + self.num_classes)
    }
}

/// Plain trainable affine map `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Matrix,
    /// out×1
    pub b: Matrix,
}

impl Linear {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = matmul(&self.w, x)?;
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out[(i, j)] += self.b[(i, 0)];
            }
        }
        Ok(out)
    }

    /// Returns `(dW, db, dx)`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let dw = matmul_nt(upstream, x)?;
        let db = Matrix::from_fn(upstream.rows(), 1, |i, _| {
            (0..upstream.cols()).map(|j| upstream[(i, j)]).sum()
        });
        let dx = crate::linalg::matmul_tn(&self.w, upstream)?;
        Ok((dw, db, dx))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Kind of a trainable parameter, used to pick optimizer behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    LoraA,
    LoraB,
    HeadWeight,
    HeadBias,
}

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    /// Layer index for adapter factors.
    pub layer: Option<usize>,
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub domain: usize,
    /// Input to each backbone layer; the last entry is the head input.
    pub inputs: Vec<Matrix>,
    /// Pre-activation output of each backbone layer.
    pub pre_activations: Vec<Matrix>,
    pub logits: Matrix,
}

#[derive(Debug, Clone)]
pub struct NetGradients {
    pub domain: usize,
    pub layers: Vec<LayerGradients>,
    pub head_w: Matrix,
    pub head_b: Matrix,
    pub dx: Matrix,
}

const LAYER_STREAM: u64 = 0x4c41;
const HEAD_STREAM: u64 = 0x4844;

#[derive(Debug, Clone)]
pub struct MultiDomainNet {
    spec: NetworkSpec,
    pub layers: Vec<ConstrainedLinearLayer>,
    pub heads: Vec<Linear>,
    base_fingerprint: String,
}

/// SHA-256 over the shapes and little-endian bytes of the given weights.
pub fn fingerprint<'a>(weights: impl IntoIterator<Item = &'a Matrix>) -> String {
    let mut hasher = Sha256::new();
    for w in weights {
        hasher.update((w.rows() as u64).to_le_bytes());
        hasher.update((w.cols() as u64).to_le_bytes());
        for v in w.as_slice() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl MultiDomainNet {
    /// Freezes `base` and attaches freshly initialised adapters and heads.
    ///
    /// Each layer's adapters come from their own seeded stream, so a layer's
    /// shared adapter does not depend on the structure chosen for the others.
    pub fn build(spec: &NetworkSpec, base: &BaseWeights, seed: u64) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if base.layers.len() != shapes.len()
            || base.layers.iter().zip(&shapes).any(|(w, s)| w.shape() != *s)
        {
            return Err(Error::shape(
                "MultiDomainNet::build",
                format!(
                    "base weights {:?} do not match spec {:?}",
                    base.layers.iter().map(Matrix::shape).collect::<Vec<_>>(),
                    shapes
                ),
            ));
        }
        let modes = spec.layer_modes();
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, (w, mode)) in base.layers.iter().zip(modes).enumerate() {
            let dec = decompose(w, spec.threshold)?;
            let domains = if mode == LayerMode::Both { spec.num_domains } else { 0 };
            let mut rng = seeded_rng(derive_seed(seed, &[LAYER_STREAM, l as u64]));
            let (shared, specific) = match spec.constraint {
                Constraint::Subspace => {
                    init_projected(&mut rng, w.cols(), spec.rank, &dec, spec.init, domains)
                        .map_err(|e| match e {
                            Error::Config(msg) => Error::Config(format!("layer {l}: {msg}")),
                            other => other,
                        })?
                }
                Constraint::Unconstrained => {
                    init_unprojected(&mut rng, w.rows(), w.cols(), spec.rank, spec.init, domains)?
                }
            };
            layers.push(ConstrainedLinearLayer::new(
                w.clone(),
                dec,
                shared,
                specific,
                mode,
                spec.constraint,
            )?);
        }
        let heads = (0..spec.num_domains)
            .map(|i| {
                let mut rng = seeded_rng(derive_seed(seed, &[HEAD_STREAM, i as u64]));
                Linear {
                    w: gaussian_matrix(&mut rng, spec.num_classes, spec.hidden_dim, spec.head_init_std),
                    b: Matrix::zeros(spec.num_classes, 1),
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            base_fingerprint: fingerprint(&base.layers),
            layers,
            heads,
        })
    }

    /// Reassembles a network from stored parts. The decompositions are
    /// recomputed from the frozen weights.
    pub fn from_parts(
        spec: NetworkSpec,
        weights: Vec<Matrix>,
        shared: Vec<LoraPair>,
        specific: Vec<Vec<LoraPair>>,
        heads: Vec<Linear>,
    ) -> Result<Self> {
        spec.validate()?;
        let modes = spec.layer_modes();
        if weights.len() != modes.len() || shared.len() != modes.len() || specific.len() != modes.len() {
            return Err(Error::shape("MultiDomainNet::from_parts", "layer count mismatch"));
        }
        if heads.len() != spec.num_domains {
            return Err(Error::shape("MultiDomainNet::from_parts", "head count mismatch"));
        }
        let base_fingerprint = fingerprint(&weights);
        let mut layers = Vec::with_capacity(weights.len());
        for (((w, mode), sh), sp) in weights.into_iter().zip(modes).zip(shared).zip(specific) {
            let dec = decompose(&w, spec.threshold)?;
            layers.push(ConstrainedLinearLayer::new(w, dec, sh, sp, mode, spec.constraint)?);
        }
        Ok(Self {
            spec,
            layers,
            heads,
            base_fingerprint,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Fingerprint recorded when the network was built.
    pub fn base_fingerprint(&self) -> &str {
        &self.base_fingerprint
    }

    /// Fingerprint of the frozen weights as they are now.
    pub fn current_fingerprint(&self) -> String {
        fingerprint(self.layers.iter().map(|l| l.weight()))
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.spec.num_domains {
            return Err(Error::Contract(format!(
                "domain {domain} out of range for {} domains",
                self.spec.num_domains
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &Matrix, domain: usize) -> Result<ForwardTrace> {
        self.check_domain(domain)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.forward(&h, Some(domain))?;
            inputs.push(h);
            h = z.map(gelu);
            pre_activations.push(z);
        }
        let logits = self.heads[domain].forward(&h)?;
        inputs.push(h);
        Ok(ForwardTrace {
            domain,
            inputs,
            pre_activations,
            logits,
        })
    }

    pub fn forward(&self, x: &Matrix, domain: usize) -> Result<Matrix> {
        Ok(self.forward_trace(x, domain)?.logits)
    }

    /// Backpropagates `∂L/∂logits` through the head and every layer. The
    /// frozen weights receive no gradient.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Result<NetGradients> {
        let domain = trace.domain;
        let head_input = trace.inputs.last().expect("trace has head input");
        let (head_w, head_b, mut upstream) = self.heads[domain].backward(head_input, dlogits)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[l];
            let dz = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
                upstream[(i, j)] * gelu_derivative(z[(i, j)])
            });
            let grads = layer.backward(&trace.inputs[l], Some(domain), &dz)?;
            upstream = grads.dx.clone();
            layers.push(grads);
        }
        layers.reverse();
        Ok(NetGradients {
            domain,
            layers,
            head_w,
            head_b,
            dx: upstream,
        })
    }

    /// Inference through merged weights `W + P_m B Aᵀ (+ P_n B_i A_iᵀ)`.
    pub fn merged(&self, domain: usize) -> Result<MergedNet> {
        self.check_domain(domain)?;
        let weights = self
            .layers
            .iter()
            .map(|l| l.effective_weight(Some(domain)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MergedNet {
            weights,
            head: self.heads[domain].clone(),
        })
    }

    /// Canonical parameter order: per layer `shared.A, shared.B, dom0.A,
    /// dom0.B, …`, then per domain `head.W, head.b`.
    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut push = |name: String, kind| {
                out.push(ParamInfo {
                    name,
                    kind,
                    layer: Some(l),
                })
            };
            push(format!("layer{l}.shared.A"), ParamKind::LoraA);
            push(format!("layer{l}.shared.B"), ParamKind::LoraB);
            for i in 0..layer.num_domains() {
                push(format!("layer{l}.dom{i}.A"), ParamKind::LoraA);
                push(format!("layer{l}.dom{i}.B"), ParamKind::LoraB);
            }
        }
        for i in 0..self.heads.len() {
            out.push(ParamInfo {
                name: format!("head{i}.W"),
                kind: ParamKind::HeadWeight,
                layer: None,
            });
            out.push(ParamInfo {
                name: format!("head{i}.b"),
                kind: ParamKind::HeadBias,
                layer: None,
            });
        }
        out
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(&layer.shared.a);
            out.push(&layer.shared.b);
            for pair in &layer.specific {
                out.push(&pair.a);
                out.push(&pair.b);
            }
        }
        for head in &self.heads {
            out.push(&head.w);
            out.push(&head.b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.shared.a);
            out.push(&mut layer.shared.b);
            for pair in &mut layer.specific {
                out.push(&mut pair.a);
                out.push(&mut pair.b);
            }
        }
        for head in &mut self.heads {
            out.push(&mut head.w);
            out.push(&mut head.b);
        }
        out
    }

    /// Index of `layer{l}.shared.A` in the canonical order; `shared.B` is
    /// the next slot and `dom{i}.A` sits at `+ 2 + 2i`.
    pub fn layer_param_offset(&self, layer: usize) -> usize {
        self.layers[..layer]
            .iter()
            .map(|l| 2 + 2 * l.num_domains())
            .sum()
    }

    pub fn head_param_offset(&self, domain: usize) -> usize {
        self.layer_param_offset(self.layers.len()) + 2 * domain
    }

    /// Scatters gradients into the canonical parameter order. Parameters
    /// that received no gradient stay `None`.
    pub fn flatten_gradients(&self, grads: &NetGradients) -> Vec<Option<Matrix>> {
        let mut flat: Vec<Option<Matrix>> = vec![None; self.layer_param_offset(self.layers.len()) + 2 * self.heads.len()];
        for (l, g) in grads.layers.iter().enumerate() {
            let base = self.layer_param_offset(l);
            flat[base] = Some(g.shared.a.clone());
            flat[base + 1] = Some(g.shared.b.clone());
            if let Some((i, spec)) = &g.specific {
                flat[base + 2 + 2 * i] = Some(spec.a.clone());
                flat[base + 3 + 2 * i] = Some(spec.b.clone());
            }
        }
        let h = self.head_param_offset(grads.domain);
        flat[h] = Some(grads.head_w.clone());
        flat[h + 1] = Some(grads.head_b.clone());
        flat
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.rows() * p.cols()).sum()
    }
}

/// Plain feed-forward network with adapters folded into the weights.
#[derive(Debug, Clone)]
pub struct MergedNet {
    pub weights: Vec<Matrix>,
    pub head: Linear,
}

impl MergedNet {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for w in &self.weights {
            h = matmul(w, &h)?.map(gelu);
        }
        self.head.forward(&h)
    }
}
