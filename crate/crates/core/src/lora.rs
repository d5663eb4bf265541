//! Subspace-constrained LoRA layer.
//!
//! A layer holds a frozen weight `W` (d×d'), its [`SubspaceDecomposition`],
//! one shared adapter `(A, B)` and optionally one adapter per domain. The
//! forward pass is
//!
//! ```text
//! h = W x + P_m B Aᵀ x + P_n B_i A_iᵀ x
//! ```
//!
//! so the shared update lands in the retained column space and the
//! domain-specific update in the truncated left null space. Gradients of `B`
//! carry the projector on the left, which keeps SGD updates confined to the
//! same subspaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, matmul, matmul_nt, matmul_tn, Matrix, RandomSource};
use crate::subspace::SubspaceDecomposition;

/// Low-rank factor pair with `ΔW = B Aᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// d'×r
    pub a: Matrix,
    /// d×r
    pub b: Matrix,
}

impl LoraPair {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.cols() != b.cols() || a.cols() == 0 {
            return Err(Error::shape(
                "LoraPair::new",
                format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
            ));
        }
        if a.cols() > a.rows().min(b.rows()) {
            return Err(Error::Config(format!(
                "rank {} exceeds min(d, d') = {}",
                a.cols(),
                a.rows().min(b.rows())
            )));
        }
        Ok(Self { a, b })
    }

    pub fn zeros(d: usize, d_in: usize, rank: usize) -> Self {
        Self {
            a: Matrix::zeros(d_in, rank),
            b: Matrix::zeros(d, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Materialises `B Aᵀ` (d×d').
    pub fn delta(&self) -> Matrix {
        matmul_nt(&self.b, &self.a).expect("factor ranks agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    SharedOnly,
    Both,
}

/// Whether adapters are routed through the subspace projectors.
/// `Unconstrained` is plain shared + specific LoRA, used as a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    Subspace,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    /// A and B both Gaussian, then B projected onto its subspace.
    Gaussian { std: f64 },
    /// Conventional LoRA: A Gaussian, B zero.
    ZeroB { std: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian { std: 0.02 }
    }
}

impl InitScheme {
    fn draw(&self, rng: &mut RandomSource, d: usize, d_in: usize, rank: usize) -> LoraPair {
        match *self {
            InitScheme::Gaussian { std } => {
                let a = gaussian_matrix(rng, d_in, rank, std);
                let b = gaussian_matrix(rng, d, rank, std);
                LoraPair { a, b }
            }
            InitScheme::ZeroB { std } => LoraPair {
                a: gaussian_matrix(rng, d_in, rank, std),
                b: Matrix::zeros(d, rank),
            },
        }
    }
}

/// Draws the shared adapter and `num_domains` specific adapters from `rng`
/// (shared first, then domains in order) and projects each `B` onto its
/// subspace: `B ← P_m B` for the shared one, `B_i ← P_n B_i` for the rest.
pub fn init_projected(
    rng: &mut RandomSource,
    d_in: usize,
    rank: usize,
    decomposition: &SubspaceDecomposition,
    scheme: InitScheme,
    num_domains: usize,
) -> Result<(LoraPair, Vec<LoraPair>)> {
    let d = decomposition.out_dim();
    if rank == 0 || rank > d.min(d_in) {
        return Err(Error::Config(format!(
            "rank {rank} must lie in 1..={}",
            d.min(d_in)
        )));
    }
    if num_domains > 0 && decomposition.s == 0 {
        return Err(Error::Config(
            "left null space empty; lower threshold".into(),
        ));
    }
    let mut shared = scheme.draw(rng, d, d_in, rank);
    shared.b = matmul(&decomposition.p_m, &shared.b)?;
    let mut specific = Vec::with_capacity(num_domains);
    for _ in 0..num_domains {
        let mut pair = scheme.draw(rng, d, d_in, rank);
        pair.b = matmul(&decomposition.p_n, &pair.b)?;
        specific.push(pair);
    }
    Ok((shared, specific))
}

/// Same draws as [`init_projected`] without any projection.
pub fn init_unprojected(
    rng: &mut RandomSource,
    d: usize,
    d_in: usize,
    rank: usize,
    scheme: InitScheme,
    num_domains: usize,
) -> Result<(LoraPair, Vec<LoraPair>)> {
    if rank == 0 || rank > d.min(d_in) {
        return Err(Error::Config(format!(
            "rank {rank} must lie in 1..={}",
            d.min(d_in)
        )));
    }
    let shared = scheme.draw(rng, d, d_in, rank);
    let specific = (0..num_domains)
        .map(|_| scheme.draw(rng, d, d_in, rank))
        .collect();
    Ok((shared, specific))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad {
    pub a: Matrix,
    pub b: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub shared: LoraGrad,
    /// Gradient of the active domain's adapter, if the layer has one.
    pub specific: Option<(usize, LoraGrad)>,
    /// Gradient with respect to the layer input.
    pub dx: Matrix,
}

#[derive(Debug, Clone)]
pub struct ConstrainedLinearLayer {
    w: Matrix,
    decomposition: SubspaceDecomposition,
    pub shared: LoraPair,
    pub specific: Vec<LoraPair>,
    mode: LayerMode,
    constraint: Constraint,
}

impl ConstrainedLinearLayer {
    pub fn new(
        w: Matrix,
        decomposition: SubspaceDecomposition,
        shared: LoraPair,
        specific: Vec<LoraPair>,
        mode: LayerMode,
        constraint: Constraint,
    ) -> Result<Self> {
        let (d, d_in) = w.shape();
        if decomposition.out_dim() != d || decomposition.v_m.rows() != d_in {
            return Err(Error::shape(
                "ConstrainedLinearLayer::new",
                "decomposition does not belong to this weight",
            ));
        }
        let check = |pair: &LoraPair| pair.a.rows() == d_in && pair.b.rows() == d;
        if !check(&shared) || !specific.iter().all(check) {
            return Err(Error::shape(
                "ConstrainedLinearLayer::new",
                format!("adapter factors must be {d_in}×r and {d}×r"),
            ));
        }
        match (mode, specific.is_empty()) {
            (LayerMode::SharedOnly, false) => {
                return Err(Error::Config(
                    "shared-only layer cannot carry domain adapters".into(),
                ))
            }
            (LayerMode::Both, true) => {
                return Err(Error::Config(
                    "layer with both adapter kinds needs at least one domain".into(),
                ))
            }
            _ => {}
        }
        if mode == LayerMode::Both && constraint == Constraint::Subspace && decomposition.s == 0 {
            return Err(Error::Config(
                "left null space empty; lower threshold".into(),
            ));
        }
        Ok(Self {
            w,
            decomposition,
            shared,
            specific,
            mode,
            constraint,
        })
    }

    pub fn weight(&self) -> &Matrix {
        &self.w
    }

    pub fn decomposition(&self) -> &SubspaceDecomposition {
        &self.decomposition
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn num_domains(&self) -> usize {
        self.specific.len()
    }

    /// `P_m · m`, or `m` itself when unconstrained.
    pub fn project_shared(&self, m: &Matrix) -> Result<Matrix> {
        match self.constraint {
            Constraint::Subspace => matmul(&self.decomposition.p_m, m),
            Constraint::Unconstrained => Ok(m.clone()),
        }
    }

    /// `P_n · m`, or `m` itself when unconstrained.
    pub fn project_specific(&self, m: &Matrix) -> Result<Matrix> {
        match self.constraint {
            Constraint::Subspace => matmul(&self.decomposition.p_n, m),
            Constraint::Unconstrained => Ok(m.clone()),
        }
    }

    fn active_adapter(&self, domain: Option<usize>) -> Result<Option<(usize, &LoraPair)>> {
        match (self.mode, domain) {
            (LayerMode::SharedOnly, _) => Ok(None),
            (LayerMode::Both, None) => Err(Error::Contract(
                "a domain index is required for a layer with domain adapters".into(),
            )),
            (LayerMode::Both, Some(i)) => self
                .specific
                .get(i)
                .map(|p| Some((i, p)))
                .ok_or_else(|| {
                    Error::Contract(format!(
                        "domain {i} out of range for {} domains",
                        self.specific.len()
                    ))
                }),
        }
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.rows() != self.in_dim() {
            return Err(Error::shape(
                op,
                format!("input has {} rows, layer expects {}", x.rows(), self.in_dim()),
            ));
        }
        Ok(())
    }

    /// `h = W x + P_m B (Aᵀ x) + P_n B_i (A_iᵀ x)` for a d'×batch input.
    /// The adapter product `B Aᵀ` is never formed.
    pub fn forward(&self, x: &Matrix, domain: Option<usize>) -> Result<Matrix> {
        self.check_input(x, "ConstrainedLinearLayer::forward")?;
        let active = self.active_adapter(domain)?;
        let mut h = matmul(&self.w, x)?;
        let shared = matmul(&self.shared.b, &matmul_tn(&self.shared.a, x)?)?;
        h.axpy(1.0, &self.project_shared(&shared)?)?;
        if let Some((_, pair)) = active {
            let specific = matmul(&pair.b, &matmul_tn(&pair.a, x)?)?;
            h.axpy(1.0, &self.project_specific(&specific)?)?;
        }
        Ok(h)
    }

    /// Gradients for the layer given the input `x` and `upstream = ∂L/∂h`.
    pub fn backward(
        &self,
        x: &Matrix,
        domain: Option<usize>,
        upstream: &Matrix,
    ) -> Result<LayerGradients> {
        self.check_input(x, "ConstrainedLinearLayer::backward")?;
        if upstream.shape() != (self.out_dim(), x.cols()) {
            return Err(Error::shape(
                "ConstrainedLinearLayer::backward",
                format!(
                    "upstream is {:?}, expected {:?}",
                    upstream.shape(),
                    (self.out_dim(), x.cols())
                ),
            ));
        }
        let active = self.active_adapter(domain)?;

        let mut dx = matmul_tn(&self.w, upstream)?;

        let g_shared = self.project_shared(upstream)?;
        let (shared, dx_shared) = adapter_grads(&self.shared, x, &g_shared)?;
        dx.axpy(1.0, &dx_shared)?;

        let specific = match active {
            Some((i, pair)) => {
                let g_specific = self.project_specific(upstream)?;
                let (grad, dx_specific) = adapter_grads(pair, x, &g_specific)?;
                dx.axpy(1.0, &dx_specific)?;
                Some((i, grad))
            }
            None => None,
        };

        Ok(LayerGradients {
            shared,
            specific,
            dx,
        })
    }

    /// `W + P_m B Aᵀ + P_n B_i A_iᵀ`. Only defined for layers that carry
    /// domain adapters.
    pub fn merge(&self, domain: usize) -> Result<Matrix> {
        if self.mode != LayerMode::Both {
            return Err(Error::Contract(
                "merge requires a layer with domain adapters".into(),
            ));
        }
        self.effective_weight(Some(domain))
    }

    /// Merged weight for any mode; `domain` is ignored by shared-only layers.
    pub fn effective_weight(&self, domain: Option<usize>) -> Result<Matrix> {
        let active = self.active_adapter(domain)?;
        let mut merged = self.w.clone();
        merged.axpy(1.0, &self.project_shared(&self.shared.delta())?)?;
        if let Some((_, pair)) = active {
            merged.axpy(1.0, &self.project_specific(&pair.delta())?)?;
        }
        Ok(merged)
    }

    /// `W + B Aᵀ + B_i A_iᵀ` with no projectors.
    pub fn merge_unprojected(&self, domain: usize) -> Result<Matrix> {
        if self.mode != LayerMode::Both {
            return Err(Error::Contract(
                "merge requires a layer with domain adapters".into(),
            ));
        }
        let (_, pair) = self.active_adapter(Some(domain))?.expect("mode is Both");
        let mut merged = self.w.clone();
        merged.axpy(1.0, &self.shared.delta())?;
        merged.axpy(1.0, &pair.delta())?;
        Ok(merged)
    }

    /// Restores `B ← P_m B` and `B_i ← P_n B_i`. No-op when unconstrained.
    pub fn reproject(&mut self) -> Result<()> {
        if self.constraint == Constraint::Unconstrained {
            return Ok(());
        }
        self.shared.b = matmul(&self.decomposition.p_m, &self.shared.b)?;
        for pair in &mut self.specific {
            pair.b = matmul(&self.decomposition.p_n, &pair.b)?;
        }
        Ok(())
    }

    /// `‖(I − P_m) B‖_F` for the shared adapter and `‖(I − P_n) B_i‖_F` per
    /// domain.
    pub fn confinement_residuals(&self) -> (f64, Vec<f64>) {
        let off = |p: &Matrix, b: &Matrix| {
            b.sub(&matmul(p, b).expect("projector conforms"))
                .expect("same shape")
                .frobenius_norm()
        };
        (
            off(&self.decomposition.p_m, &self.shared.b),
            self.specific
                .iter()
                .map(|pair| off(&self.decomposition.p_n, &pair.b))
                .collect(),
        )
    }
}

/// With `g = P ∂L/∂h` and `u = Aᵀx`: `dB = g uᵀ`, `dA = x (Bᵀ g)ᵀ`, and the
/// adapter's share of `∂L/∂x` is `A (Bᵀ g)`.
fn adapter_grads(pair: &LoraPair, x: &Matrix, g: &Matrix) -> Result<(LoraGrad, Matrix)> {
    let u = matmul_tn(&pair.a, x)?;
    let bt_g = matmul_tn(&pair.b, g)?;
    let db = matmul_nt(g, &u)?;
    let da = matmul_nt(x, &bt_g)?;
    let dx = matmul(&pair.a, &bt_g)?;
    Ok((LoraGrad { a: da, b: db }, dx))
}
