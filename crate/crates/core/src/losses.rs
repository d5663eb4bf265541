//! Cross-entropy plus the two regularizers on domain-specific `B` factors:
//!
//! ```text
//! L_orth = Σ_i ‖B_iᵀB_i − I_r‖_F²
//! L_ss   = −(1/√2) Σ_{i<j} ‖B_iB_iᵀ − B_jB_jᵀ‖_F
//! L      = L_ce + λ1·L_orth + λ2·L_ss
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub orth: f64,
    pub ss: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn total_loss(ce: f64, orth: f64, ss: f64, lambda1: f64, lambda2: f64) -> LossBreakdown {
    LossBreakdown {
        ce,
        orth,
        ss,
        total: ce + lambda1 * orth + lambda2 * ss,
        lambda1,
        lambda2,
    }
}

/// Mean cross-entropy over the batch for C×batch logits, with gradient
/// `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (classes, batch) = logits.shape();
    if batch == 0 || labels.is_empty() {
        return Err(Error::Data("cross-entropy over an empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for a batch of {batch}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    let mut grad = Matrix::zeros(classes, batch);
    let mut loss = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let max = (0..classes).map(|c| logits[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes).map(|c| (logits[(c, j)] - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - logits[(label, j)];
        for c in 0..classes {
            let p = (logits[(c, j)] - log_z).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad[(c, j)] = (p - target) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}

fn check_shapes(bs: &[&Matrix], op: &'static str) -> Result<()> {
    if let Some(first) = bs.first() {
        if bs.iter().any(|b| b.shape() != first.shape()) {
            return Err(Error::shape(op, "all B factors must share one shape"));
        }
    }
    Ok(())
}

/// `Σ_i ‖B_iᵀB_i − I‖_F²` with gradients `4 B_i (B_iᵀB_i − I)`.
pub fn orth_loss(bs: &[&Matrix]) -> Result<(f64, Vec<Matrix>)> {
    check_shapes(bs, "orth_loss")?;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(bs.len());
    for b in bs {
        let residual = matmul_tn(b, b)?.sub(&Matrix::identity(b.cols()))?;
        loss += residual.frobenius_norm_sq();
        grads.push(matmul(b, &residual)?.scale(4.0));
    }
    Ok((loss, grads))
}

/// Subspace-separation loss and its gradients.
#[derive(Debug, Clone)]
pub struct SeparationLoss {
    pub value: f64,
    pub grads: Vec<Matrix>,
    /// Pairs whose Gram difference was exactly zero; they contribute neither
    /// loss nor gradient.
    pub degenerate_pairs: usize,
}

/// `−(1/√2) Σ_{i<j} ‖B_iB_iᵀ − B_jB_jᵀ‖_F`. With `M = B_iB_iᵀ − B_jB_jᵀ`,
/// the pair term's gradient is `2 M B_i / ‖M‖` for `B_i` and `−2 M B_j / ‖M‖`
/// for `B_j`, scaled by `−1/√2`.
pub fn ss_loss(bs: &[&Matrix]) -> Result<SeparationLoss> {
    check_shapes(bs, "ss_loss")?;
    let mut grads: Vec<Matrix> = bs.iter().map(|b| Matrix::zeros(b.rows(), b.cols())).collect();
    if bs.len() < 2 {
        return Ok(SeparationLoss {
            value: 0.0,
            grads,
            degenerate_pairs: 0,
        });
    }
    let scale = -std::f64::consts::FRAC_1_SQRT_2;
    let grams = bs
        .iter()
        .map(|b| matmul_nt(b, b))
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut degenerate_pairs = 0;
    for i in 0..bs.len() {
        for j in i + 1..bs.len() {
            let m = grams[i].sub(&grams[j])?;
            let norm = m.frobenius_norm();
            if norm == 0.0 {
                degenerate_pairs += 1;
                continue;
            }
            value += scale * norm;
            let coeff = 2.0 * scale / norm;
            grads[i].axpy(coeff, &matmul(&m, bs[i])?)?;
            grads[j].axpy(-coeff, &matmul(&m, bs[j])?)?;
        }
    }
    Ok(SeparationLoss {
        value,
        grads,
        degenerate_pairs,
    })
}
