//! Column-space / left-null-space split of a frozen weight.
//!
//! The weight is decomposed with a thin SVD, singular values are truncated by
//! cumulative squared energy, and the left singular vectors are split into a
//! retained block `U_m` (dimension `k`) and a discarded block `U_n`
//! (dimension `s = min(d, d') - k`). Shared adapters live in `span(U_m)`,
//! domain-specific adapters in `span(U_n)`.
//!
//! When `d > d'` the true left null space is larger than `span(U_n)`; only
//! `U_n` is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, svd, Matrix};

/// Cumulative squared-singular-value energy `C_1..C_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionCurve {
    values: Vec<f64>,
}

impl ContributionCurve {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `C_k = Σ_{i≤k} σ_i² / Σ_j σ_j²`.
pub fn contribution_curve(sigma: &[f64]) -> Result<ContributionCurve> {
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Degenerate(
            "singular values must be finite and non-negative".into(),
        ));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let mut acc = 0.0;
    let values = sigma
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect();
    Ok(ContributionCurve { values })
}

/// Smallest `k` (1-based) with `C_k ≥ threshold`. Equality counts.
pub fn truncation_rank(curve: &ContributionCurve, threshold: f64) -> usize {
    curve
        .values
        .iter()
        .position(|c| *c >= threshold)
        .map_or(curve.values.len(), |i| i + 1)
}

#[derive(Debug, Clone)]
pub struct SubspaceDecomposition {
    /// Dimension of the retained column space.
    pub k: usize,
    /// Dimension of the (used part of the) left null space.
    pub s: usize,
    pub threshold: f64,
    pub u_m: Matrix,
    pub u_n: Matrix,
    pub sigma_m: Vec<f64>,
    pub v_m: Matrix,
    /// Kept for completeness; nothing downstream reads it.
    pub v_n: Matrix,
    pub p_m: Matrix,
    pub p_n: Matrix,
    /// Full singular spectrum, descending.
    pub sigma: Vec<f64>,
}

impl SubspaceDecomposition {
    /// Output dimension `d` of the decomposed weight.
    pub fn out_dim(&self) -> usize {
        self.u_m.rows()
    }

    /// Share of `‖W‖_F²` carried by the retained singular values.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.sigma.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 1.0;
        }
        self.sigma_m.iter().map(|s| s * s).sum::<f64>() / total
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(())
}

/// Truncated-SVD split of `w` at the given cumulative-energy threshold.
///
/// An all-zero weight has no column space: `k = 0` and every left singular
/// vector goes to `U_n`.
pub fn decompose(w: &Matrix, threshold: f64) -> Result<SubspaceDecomposition> {
    check_threshold(threshold)?;
    let (d, d_in) = w.shape();
    let full = svd(w)?;
    let width = d.min(d_in);
    let k = match contribution_curve(&full.sigma) {
        Ok(curve) => truncation_rank(&curve, threshold),
        Err(Error::Degenerate(_)) => 0,
        Err(e) => return Err(e),
    };
    let v = full.vt.transpose();
    let u_m = full.u.columns(0, k);
    let u_n = full.u.columns(k, width);
    let p_m = matmul_nt(&u_m, &u_m)?;
    let p_n = matmul_nt(&u_n, &u_n)?;
    Ok(SubspaceDecomposition {
        k,
        s: width - k,
        threshold,
        sigma_m: full.sigma[..k].to_vec(),
        v_m: v.columns(0, k),
        v_n: v.columns(k, width),
        u_m,
        u_n,
        p_m,
        p_n,
        sigma: full.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, matmul, seeded_rng};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn curve_examples() {
        let c = contribution_curve(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.values(), &[0.25, 0.5, 0.75, 1.0]);
        let c = contribution_curve(&[3.0, 1.0]).unwrap();
        assert!(close(c.values(), &[0.9, 1.0], 1e-15));
        assert!(matches!(
            contribution_curve(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn curve_matches_direct_sums() {
        let mut rng = seeded_rng(17);
        let mut sigma: Vec<f64> = gaussian_matrix(&mut rng, 1, 30, 1.0)
            .as_slice()
            .iter()
            .map(|v| v.abs())
            .collect();
        sigma.sort_by(|a, b| b.total_cmp(a));
        let curve = contribution_curve(&sigma).unwrap();
        for k in 0..sigma.len() {
            let mut num = 0.0;
            for s in &sigma[..=k] {
                num += s * s;
            }
            let mut den = 0.0;
            for s in &sigma {
                den += s * s;
            }
            assert!((curve.values()[k] - num / den).abs() <= 1e-12);
        }
        assert!(curve.values().windows(2).all(|w| w[0] <= w[1]));
        assert!((curve.values().last().unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn truncation_examples() {
        let c = contribution_curve(&[3.0, 1.0]).unwrap();
        assert_eq!(truncation_rank(&c, 0.90), 1);
        assert_eq!(truncation_rank(&c, 0.95), 2);
        let c = contribution_curve(&[1.0; 20]).unwrap();
        assert_eq!(truncation_rank(&c, 0.95), 19);
        assert_eq!(truncation_rank(&c, 1.0), 20);
    }

    #[test]
    fn decompose_rank_one_diagonal() {
        let w = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let dec = decompose(&w, 0.95).unwrap();
        assert_eq!((dec.k, dec.s), (1, 1));
        assert!(dec.u_m.max_abs_diff(&Matrix::column_vector(&[1.0, 0.0])) < 1e-15);
        assert!(dec.u_n.max_abs_diff(&Matrix::column_vector(&[0.0, 1.0])) < 1e-15);
        assert!(dec
            .p_n
            .max_abs_diff(&Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0]]))
            < 1e-15);
    }

    #[test]
    fn decompose_identity_keeps_everything() {
        let dec = decompose(&Matrix::identity(4), 0.95).unwrap();
        assert_eq!((dec.k, dec.s), (4, 0));
        assert_eq!(dec.p_n, Matrix::zeros(4, 4));
        assert!(dec.p_m.max_abs_diff(&Matrix::identity(4)) < 1e-14);
    }

    #[test]
    fn decompose_rejects_bad_threshold() {
        let w = Matrix::identity(2);
        assert!(matches!(decompose(&w, 0.0), Err(Error::Config(_))));
        assert!(matches!(decompose(&w, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn decompose_zero_weight_is_all_null_space() {
        let dec = decompose(&Matrix::zeros(3, 5), 0.95).unwrap();
        assert_eq!((dec.k, dec.s), (0, 3));
        assert!(dec.p_n.max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn projector_algebra_on_wide_and_tall() {
        let mut rng = seeded_rng(4);
        for (d, d_in) in [(12, 20), (20, 12), (16, 16)] {
            let w = gaussian_matrix(&mut rng, d, d_in, 1.0);
            let dec = decompose(&w, 0.9).unwrap();
            assert_eq!(dec.k + dec.s, d.min(d_in));
            let pm2 = matmul(&dec.p_m, &dec.p_m).unwrap();
            assert!(pm2.sub(&dec.p_m).unwrap().frobenius_norm() < 1e-12);
            let cross = matmul(&dec.p_m, &dec.p_n).unwrap();
            assert!(cross.frobenius_norm() < 1e-12);
            assert!(dec.p_m.sub(&dec.p_m.transpose()).unwrap().frobenius_norm() < 1e-15);
            if d <= d_in {
                let sum = dec.p_m.add(&dec.p_n).unwrap();
                assert!(sum.sub(&Matrix::identity(d)).unwrap().frobenius_norm() < 1e-8);
            }
            assert!(dec.retained_energy() >= 0.9);
        }
    }
}
