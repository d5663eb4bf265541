//! Train a network briefly, then print the adapter report: contribution
//! curves, effective dimensions and pairwise subspace distances.

use sslora::analysis::{report, CurveTarget};
use sslora::data::{generate, DomainDataset, DomainDatasetSpec};
use sslora::model::{pretrain_base, MultiDomainNet, NetworkSpec, PretrainConfig};
use sslora::train::{train_loop, TrainConfig};

fn main() -> sslora::Result<()> {
    let data = generate(&DomainDatasetSpec::default())?;
    let spec = NetworkSpec::default();
    let pooled: Vec<&DomainDataset> = data.train.iter().collect();
    let (base, _) = pretrain_base(&spec, &pooled, &PretrainConfig::default())?;
    let mut net = MultiDomainNet::build(&spec, &base, 1)?;
    let config = TrainConfig {
        lr: 1e-3,
        lambda2: 1e-3,
        max_steps: 1000,
        reproject_every_step: true,
        ..TrainConfig::default()
    };
    train_loop(&mut net, &data.train, &data.val, &config, None, None)?;

    for target in [CurveTarget::B, CurveTarget::DeltaW] {
        let rep = report(&net, target)?;
        println!("curves on {target:?}:");
        for a in &rep.adapters {
            let curve = a
                .curve
                .as_ref()
                .map(|c| c.values().iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "))
                .unwrap_or_else(|| "degenerate".into());
            println!(
                "  layer {} {:<6} eff. dim {:?}  ‖BᵀB − I‖ {:.1e}  [{curve}]",
                a.layer, a.adapter, a.effective_dim, a.orth_residual
            );
        }
    }
    let rep = report(&net, CurveTarget::B)?;
    print!("{}", rep.pairs_csv());
    Ok(())
}
