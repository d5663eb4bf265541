//! Compare the analytic gradients of a small network against central finite
//! differences.

use sslora::linalg::{gaussian_matrix, seeded_rng, Matrix};
use sslora::losses::cross_entropy;
use sslora::lora::InitScheme;
use sslora::model::{BaseWeights, MultiDomainNet, NetworkSpec, Structure};

const STEP: f64 = 1e-5;

fn main() -> sslora::Result<()> {
    let spec = NetworkSpec {
        input_dim: 6,
        hidden_dim: 8,
        num_blocks: 1,
        num_classes: 3,
        num_domains: 2,
        structure: Structure::AllFlat,
        rank: 2,
        threshold: 0.7,
        init: InitScheme::Gaussian { std: 0.3 },
        head_init_std: 0.5,
        ..NetworkSpec::default()
    };
    let mut rng = seeded_rng(5);
    let base = BaseWeights {
        layers: spec
            .layer_shapes()
            .iter()
            .map(|&(d, d_in)| gaussian_matrix(&mut rng, d, d_in, 0.4))
            .collect(),
        head: None,
    };
    let mut net = MultiDomainNet::build(&spec, &base, 2)?;
    let x = gaussian_matrix(&mut rng, 6, 4, 1.0);
    let labels = [0, 2, 1, 2];
    let domain = 1;

    let trace = net.forward_trace(&x, domain)?;
    let (_, dlogits) = cross_entropy(&trace.logits, &labels)?;
    let flat = net.flatten_gradients(&net.backward(&trace, &dlogits)?);
    let loss = |net: &MultiDomainNet| -> f64 { cross_entropy(&net.forward(&x, domain).unwrap(), &labels).unwrap().0 };

    for (idx, info) in net.param_infos().into_iter().enumerate() {
        let Some(analytic) = &flat[idx] else {
            println!("{:<18} no gradient (inactive domain)", info.name);
            continue;
        };
        let (rows, cols) = analytic.shape();
        let mut numeric = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let orig = net.params()[idx][(i, j)];
                net.params_mut()[idx][(i, j)] = orig + STEP;
                let up = loss(&net);
                net.params_mut()[idx][(i, j)] = orig - STEP;
                let down = loss(&net);
                net.params_mut()[idx][(i, j)] = orig;
                numeric[(i, j)] = (up - down) / (2.0 * STEP);
            }
        }
        let rel = analytic.sub(&numeric)?.frobenius_norm()
            / analytic.frobenius_norm().max(numeric.frobenius_norm()).max(1e-12);
        println!("{:<18} relative error {rel:.2e}", info.name);
    }
    Ok(())
}
