//! Post-hoc inspection of trained adapters: contribution curves of the
//! factors, effective dimension, pairwise distances between domain
//! subspaces and orthonormality residuals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, matmul_tn, svd, Matrix};
use crate::lora::{LayerMode, LoraPair};
use crate::model::MultiDomainNet;
use crate::subspace::{contribution_curve, truncation_rank, ContributionCurve};

pub const EFFECTIVE_DIM_THRESHOLD: f64 = 0.95;

/// Which matrix an adapter curve is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveTarget {
    #[default]
    B,
    DeltaW,
}

/// Contribution curve of the leading `rank` singular values of `m`.
/// Fails with a degenerate-input error when `m` is zero.
pub fn adapter_curve(m: &Matrix, rank: usize) -> Result<ContributionCurve> {
    let dec = svd(m)?;
    let take = rank.min(dec.sigma.len());
    contribution_curve(&dec.sigma[..take])
}

/// `sup_k |C_k − k/r|` with `r` the curve length.
pub fn linearity_gap(curve: &ContributionCurve) -> f64 {
    let r = curve.len() as f64;
    curve
        .values()
        .iter()
        .enumerate()
        .map(|(k, c)| (c - (k + 1) as f64 / r).abs())
        .fold(0.0, f64::max)
}

/// `‖BᵀB − I‖_F`.
pub fn orth_residual(b: &Matrix) -> f64 {
    let mut gram = matmul_tn(b, b).expect("BᵀB conforms");
    for i in 0..gram.rows() {
        gram[(i, i)] -= 1.0;
    }
    gram.frobenius_norm()
}

/// `‖B_iB_iᵀ − B_jB_jᵀ‖_F`.
pub fn subspace_distance(bi: &Matrix, bj: &Matrix) -> Result<f64> {
    Ok(matmul_nt(bi, bi)?.sub(&matmul_nt(bj, bj)?)?.frobenius_norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    pub layer: usize,
    /// `shared` or `dom{i}`.
    pub adapter: String,
    pub rank: usize,
    /// `None` when the analysed matrix is zero.
    pub curve: Option<ContributionCurve>,
    pub effective_dim: Option<usize>,
    pub linearity_gap: Option<f64>,
    pub orth_residual: f64,
}

impl AdapterRecord {
    pub fn is_degenerate(&self) -> bool {
        self.curve.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub layer: usize,
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub target: CurveTarget,
    pub adapters: Vec<AdapterRecord>,
    pub pairs: Vec<PairDistance>,
}

fn record(layer: usize, adapter: String, pair: &LoraPair, target: CurveTarget) -> Result<AdapterRecord> {
    let m = match target {
        CurveTarget::B => pair.b.clone(),
        CurveTarget::DeltaW => pair.delta(),
    };
    let curve = match adapter_curve(&m, pair.rank()) {
        Ok(c) => Some(c),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(AdapterRecord {
        layer,
        adapter,
        rank: pair.rank(),
        effective_dim: curve.as_ref().map(|c| truncation_rank(c, EFFECTIVE_DIM_THRESHOLD)),
        linearity_gap: curve.as_ref().map(linearity_gap),
        curve,
        orth_residual: orth_residual(&pair.b),
    })
}

/// Analyses every adapter in `net`. Domain adapters are reported only for
/// layers that carry them.
pub fn report(net: &MultiDomainNet, target: CurveTarget) -> Result<AdapterReport> {
    let mut adapters = Vec::new();
    let mut pairs = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        adapters.push(record(l, "shared".into(), &layer.shared, target)?);
        if layer.mode() != LayerMode::Both {
            continue;
        }
        if layer.specific.is_empty() {
            return Err(Error::Contract(format!("layer {l} has no domain adapters")));
        }
        for (i, pair) in layer.specific.iter().enumerate() {
            adapters.push(record(l, format!("dom{i}"), pair, target)?);
        }
        for i in 0..layer.specific.len() {
            for j in i + 1..layer.specific.len() {
                pairs.push(PairDistance {
                    layer: l,
                    i,
                    j,
                    distance: subspace_distance(&layer.specific[i].b, &layer.specific[j].b)?,
                });
            }
        }
    }
    Ok(AdapterReport {
        target,
        adapters,
        pairs,
    })
}

impl AdapterReport {
    fn domain_records(&self) -> impl Iterator<Item = &AdapterRecord> {
        self.adapters.iter().filter(|a| a.adapter != "shared")
    }

    pub fn mean_pair_distance(&self) -> Option<f64> {
        mean(self.pairs.iter().map(|p| p.distance))
    }

    /// Mean linearity gap over non-degenerate domain adapters.
    pub fn mean_linearity_gap(&self) -> Option<f64> {
        mean(self.domain_records().filter_map(|a| a.linearity_gap))
    }

    pub fn max_orth_residual(&self) -> Option<f64> {
        self.domain_records().map(|a| a.orth_residual).reduce(f64::max)
    }

    /// One row per `(layer, adapter, k)`; degenerate adapters leave `C_k`
    /// and `linearity_gap` blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,adapter,k,C_k,linearity_gap,orth_residual\n");
        for a in &self.adapters {
            for k in 0..a.rank {
                let (c, gap) = match (&a.curve, a.linearity_gap) {
                    (Some(curve), Some(gap)) => (curve.values()[k].to_string(), gap.to_string()),
                    _ => (String::new(), String::new()),
                };
                writeln!(out, "{},{},{},{c},{gap},{}", a.layer, a.adapter, k + 1, a.orth_residual)
                    .expect("write to string");
            }
        }
        out
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("layer,i,j,distance\n");
        for p in &self.pairs {
            writeln!(out, "{},{},{},{}", p.layer, p.i, p.j, p.distance).expect("write to string");
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, qr, seeded_rng};
    use crate::model::{BaseWeights, Structure};

    fn orthonormal(d: usize, r: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        qr(&gaussian_matrix(&mut rng, d, r, 1.0)).unwrap().0
    }

    #[test]
    fn equal_singular_values_give_linear_curve() {
        let b = orthonormal(10, 4, 1).scale(3.0);
        let c = adapter_curve(&b, 4).unwrap();
        for (k, v) in c.values().iter().enumerate() {
            assert!((v - (k + 1) as f64 / 4.0).abs() < 1e-12);
        }
        assert!(linearity_gap(&c) < 1e-12);
    }

    #[test]
    fn rank_one_curve() {
        let u = Matrix::column_vector(&[1.0, 2.0, 0.0, -1.0, 0.5]);
        let v = Matrix::column_vector(&[0.3, -0.2, 0.1, 0.4]);
        let b = matmul_nt(&u, &v).unwrap();
        let c = adapter_curve(&b, 4).unwrap();
        assert!((c.values()[0] - 1.0).abs() < 1e-12);
        assert!((linearity_gap(&c) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        assert!(matches!(
            adapter_curve(&Matrix::zeros(5, 3), 3),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn gap_matches_loop() {
        let mut rng = seeded_rng(3);
        let b = gaussian_matrix(&mut rng, 12, 5, 1.0);
        let c = adapter_curve(&b, 5).unwrap();
        let mut best: f64 = 0.0;
        for k in 1..=5 {
            best = best.max((c.values()[k - 1] - k as f64 / 5.0).abs());
        }
        assert_eq!(linearity_gap(&c), best);
        let vals = c.values();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!((vals[4] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_orthonormal_b_has_small_gap() {
        let mut rng = seeded_rng(8);
        let b = orthonormal(16, 4, 4);
        let noise = gaussian_matrix(&mut rng, 16, 4, 1.0);
        let b = {
            let mut b = b;
            b.axpy(1e-4 / noise.frobenius_norm(), &noise).unwrap();
            b
        };
        assert!(orth_residual(&b) <= 1e-3);
        assert!(linearity_gap(&adapter_curve(&b, 4).unwrap()) <= 0.05);
    }

    #[test]
    fn report_shape_and_degenerate_rows() {
        let mut spec = crate::model::tests::spec(Structure::UpperHeavy, 1);
        spec.init = crate::lora::InitScheme::ZeroB { std: 0.1 };
        let mut rng = seeded_rng(2);
        let base = BaseWeights {
            layers: spec
                .layer_shapes()
                .iter()
                .map(|&(d, d_in)| gaussian_matrix(&mut rng, d, d_in, 1.0))
                .collect(),
            head: None,
        };
        let net = MultiDomainNet::build(&spec, &base, 1).unwrap();
        let rep = report(&net, CurveTarget::B).unwrap();
        let adapters: usize = net
            .layers
            .iter()
            .map(|l| 1 + if l.mode() == LayerMode::Both { l.num_domains() } else { 0 })
            .sum();
        assert_eq!(rep.adapters.len(), adapters);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count() - 1, adapters * spec.rank);
        assert!(rep.adapters.iter().all(AdapterRecord::is_degenerate));
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
        let d = spec.num_domains;
        assert_eq!(rep.pairs.len(), 2 * d * (d - 1) / 2);
    }
}
