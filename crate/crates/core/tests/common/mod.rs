#![allow(dead_code)]

use sslora::data::{generate, DomainDataset, DomainDatasetSpec, MultiDomainData};
use sslora::linalg::{gaussian_matrix, matmul, seeded_rng, Matrix, RandomSource};
use sslora::lora::{init_projected, ConstrainedLinearLayer, Constraint, InitScheme, LayerMode};
use sslora::model::{pretrain_base, BaseWeights, NetworkSpec, PretrainConfig};
use sslora::subspace::decompose;

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with tiny norms treated as absolute error.
pub fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    let diff = analytic.sub(numeric).expect("same shape").frobenius_norm();
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `m`.
pub fn numeric_grad(m: &mut Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let (rows, cols) = m.shape();
    let mut g = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let orig = m[(i, j)];
            m[(i, j)] = orig + FD_STEP;
            let up = f(m);
            m[(i, j)] = orig - FD_STEP;
            let down = f(m);
            m[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * FD_STEP);
        }
    }
    g
}

/// Gaussian matrix with singular values decaying like `decay^i`, so that
/// truncation thresholds select a range of ranks.
pub fn decaying_weight(rng: &mut RandomSource, d: usize, d_in: usize, decay: f64) -> Matrix {
    let n = d.min(d_in);
    let u = sslora::linalg::qr(&gaussian_matrix(rng, d, n, 1.0)).unwrap().0;
    let v = sslora::linalg::qr(&gaussian_matrix(rng, d_in, n, 1.0)).unwrap().0;
    let s = Matrix::from_fn(n, n, |i, j| if i == j { decay.powi(i as i32) } else { 0.0 });
    sslora::linalg::matmul_nt(&matmul(&u, &s).unwrap(), &v).unwrap()
}

pub fn random_layer(
    seed: u64,
    d: usize,
    d_in: usize,
    rank: usize,
    domains: usize,
    threshold: f64,
    std: f64,
) -> ConstrainedLinearLayer {
    let mut rng = seeded_rng(seed);
    let w = gaussian_matrix(&mut rng, d, d_in, 1.0);
    let dec = decompose(&w, threshold).unwrap();
    let (shared, specific) =
        init_projected(&mut rng, d_in, rank, &dec, InitScheme::Gaussian { std }, domains).unwrap();
    let mode = if domains == 0 {
        LayerMode::SharedOnly
    } else {
        LayerMode::Both
    };
    ConstrainedLinearLayer::new(w, dec, shared, specific, mode, Constraint::Subspace).unwrap()
}

pub struct Experiment {
    pub data: MultiDomainData,
    pub spec: NetworkSpec,
    pub base: BaseWeights,
}

/// Default synthetic task with a pretrained backbone.
pub fn default_experiment() -> Experiment {
    let data = generate(&DomainDatasetSpec::default()).unwrap();
    let spec = NetworkSpec::default();
    let pooled: Vec<&DomainDataset> = data.train.iter().collect();
    let (base, _) = pretrain_base(&spec, &pooled, &PretrainConfig::default()).unwrap();
    Experiment { data, spec, base }
}
