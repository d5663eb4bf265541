//! Paired runs with and without the orthogonality and separation
//! regularizers, compared through the adapter report: mean pairwise
//! subspace distance, mean linearity gap and orthonormality residual.

use sslora::analysis::{report, CurveTarget};
use sslora::data::{generate, DomainDataset, DomainDatasetSpec};
use sslora::model::{pretrain_base, MultiDomainNet, NetworkSpec, PretrainConfig};
use sslora::optim::OptimizerKind;
use sslora::train::{train_loop, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = generate(&DomainDatasetSpec::default())?;
    let spec = NetworkSpec::default();
    let pooled: Vec<&DomainDataset> = data.train.iter().collect();
    let (base, _) = pretrain_base(&spec, &pooled, &PretrainConfig::default())?;

    for (lambda1, lambda2) in [(1.0, 1e-3), (0.0, 0.0)] {
        let config = TrainConfig {
            lr: 1e-3,
            optimizer: OptimizerKind::Adamw,
            reproject_every_step: true,
            lambda1,
            lambda2,
            ..TrainConfig::default()
        };
        let mut net = MultiDomainNet::build(&spec, &base, 1)?;
        let out = train_loop(&mut net, &data.train, &data.val, &config, None, None)?;
        let rep = report(&net, CurveTarget::B)?;
        let acc: Vec<String> = out.final_val.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
        println!(
            "λ1={lambda1}, λ2={lambda2}: mean distance {:.4}, mean linearity gap {:.4}, max orth residual {:.2e}, val accuracy [{}]",
            rep.mean_pair_distance().unwrap_or(0.0),
            rep.mean_linearity_gap().unwrap_or(0.0),
            rep.max_orth_residual().unwrap_or(0.0),
            acc.join(", ")
        );
    }
    Ok(())
}
