//! Cross-checks against independent implementations: nalgebra for the SVD
//! and least squares, direct loops for curve arithmetic, file counting for
//! persisted datasets.

mod common;

use nalgebra::DMatrix;

use common::*;
use sslora::analysis::{adapter_curve, linearity_gap};
use sslora::data::{generate, load_dataset, save_dataset, DomainDatasetSpec};
use sslora::linalg::{gaussian_matrix, seeded_rng, svd, Matrix};
use sslora::model::{MultiDomainNet, NetworkSpec, Structure};
use sslora::subspace::decompose;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

#[test]
fn singular_values_match_nalgebra() {
    let mut rng = seeded_rng(31);
    for (d, d_in) in [(64, 64), (48, 96), (96, 48), (7, 3), (1, 5)] {
        let w = gaussian_matrix(&mut rng, d, d_in, 1.0);
        let ours = svd(&w).unwrap().sigma;
        let mut theirs: Vec<f64> = to_na(&w).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() <= 1e-10 * theirs[0], "{d}×{d_in}: {a} vs {b}");
        }
    }
}

#[test]
fn column_space_projector_matches_nalgebra() {
    let mut rng = seeded_rng(32);
    for tau in [0.8, 0.95] {
        let w = decaying_weight(&mut rng, 20, 30, 0.8);
        let dec = decompose(&w, tau).unwrap();
        let na = to_na(&w).svd(true, false);
        let mut order: Vec<usize> = (0..na.singular_values.len()).collect();
        order.sort_by(|&a, &b| na.singular_values[b].total_cmp(&na.singular_values[a]));
        let u = na.u.unwrap();
        let um = DMatrix::from_fn(20, dec.k, |i, j| u[(i, order[j])]);
        let p = &um * um.transpose();
        let diff = (p - to_na(&dec.p_m)).norm();
        assert!(diff <= 1e-9, "τ={tau}: {diff}");
    }
}

#[test]
fn adapter_curve_matches_direct_sum() {
    let mut rng = seeded_rng(33);
    for r in 1..6 {
        let b = gaussian_matrix(&mut rng, 16, r, 1.0);
        let curve = adapter_curve(&b, r).unwrap();
        let sv = to_na(&b).singular_values();
        let mut sq: Vec<f64> = sv.iter().map(|s| s * s).collect();
        sq.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sq.iter().sum();
        let mut acc = 0.0;
        let mut gap: f64 = 0.0;
        for (k, s) in sq.iter().enumerate() {
            acc += s;
            let c = acc / total;
            assert!((curve.values()[k] - c).abs() <= 1e-10);
            gap = gap.max((c - (k + 1) as f64 / r as f64).abs());
        }
        assert!((linearity_gap(&curve) - gap).abs() <= 1e-10);
    }
}

/// Least-squares one-vs-rest linear classifier (with bias) fit per domain.
fn least_squares_accuracy(train: &sslora::data::DomainDataset, val: &sslora::data::DomainDataset, classes: usize) -> f64 {
    let dim = train.input_dim;
    let design = |set: &sslora::data::DomainDataset| {
        DMatrix::from_fn(set.len(), dim + 1, |i, j| {
            if j == dim {
                1.0
            } else {
                set.samples[i].features[j]
            }
        })
    };
    let x = design(train);
    let y = DMatrix::from_fn(train.len(), classes, |i, c| {
        if train.samples[i].label == c {
            1.0
        } else {
            0.0
        }
    });
    let w = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let scores = design(val) * w;
    let correct = (0..val.len())
        .filter(|&i| {
            let row = scores.row(i);
            let best = (0..classes).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == val.samples[i].label
        })
        .count();
    correct as f64 / val.len() as f64
}

#[test]
fn linear_classifier_separates_domains_at_small_noise() {
    let probe = generate(&DomainDatasetSpec::default()).unwrap();
    let sigma = 0.2 * probe.min_class_margin();
    let spec = DomainDatasetSpec {
        noise_std: sigma,
        ..DomainDatasetSpec::default()
    };
    let data = generate(&spec).unwrap();
    assert_eq!(data.class_means, probe.class_means);
    for d in 0..spec.num_domains {
        let acc = least_squares_accuracy(&data.train[d], &data.val[d], spec.num_classes);
        assert!(acc >= 0.95, "domain {d}: {acc}");
    }
}

#[test]
fn saved_dataset_counts_match_manifest() {
    let spec = DomainDatasetSpec {
        num_domains: 2,
        num_classes: 4,
        input_dim: 6,
        n_train: 7,
        n_val: 3,
        ..DomainDatasetSpec::default()
    };
    let data = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&data, dir.path()).unwrap();
    for d in 0..2 {
        for (split, per_class) in [("train", 7), ("val", 3)] {
            let text = std::fs::read_to_string(dir.path().join(format!("domain{d}_{split}.csv"))).unwrap();
            let mut lines = text.lines();
            let header = lines.next().unwrap();
            assert_eq!(header.split(',').count(), 2 + 6);
            let rows: Vec<&str> = lines.collect();
            assert_eq!(rows.len(), 4 * per_class);
            for c in 0..4 {
                let n = rows
                    .iter()
                    .filter(|r| r.split(',').nth(1).unwrap() == c.to_string())
                    .count();
                assert_eq!(n, per_class);
            }
        }
    }
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.train, data.train);
    assert_eq!(loaded.val, data.val);
}

#[test]
fn trainable_parameter_count_matches_formula() {
    let spec = NetworkSpec {
        input_dim: 8,
        hidden_dim: 8,
        num_blocks: 1,
        num_classes: 3,
        num_domains: 3,
        structure: Structure::UpperHeavy,
        rank: 2,
        threshold: 0.8,
        ..NetworkSpec::default()
    };
    let mut rng = seeded_rng(1);
    let base = sslora::model::BaseWeights {
        layers: vec![gaussian_matrix(&mut rng, 8, 8, 1.0), gaussian_matrix(&mut rng, 8, 8, 1.0)],
        head: None,
    };
    let net = MultiDomainNet::build(&spec, &base, 0).unwrap();
    // Both layers of the single block carry domain adapters.
    let per_layer = 2 * (8 + 8) * (1 + 3);
    let heads = 3 * (3 * 8 + 3);
    assert_eq!(net.trainable_parameter_count(), 2 * per_layer + heads);
    assert_eq!(spec.trainable_parameters(), 2 * per_layer + heads);
}
