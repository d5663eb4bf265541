//! Full pipeline on synthetic data: generate three domains, pretrain the
//! backbone on pooled data, then train shared and per-domain adapters for
//! both structures and compare against an unconstrained twin.

use std::time::Instant;

use sslora::data::{generate, DomainDataset, DomainDatasetSpec};
use sslora::lora::Constraint;
use sslora::model::{pretrain_base, MultiDomainNet, NetworkSpec, PretrainConfig, Structure};
use sslora::train::{train_loop, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = generate(&DomainDatasetSpec::default())?;
    let spec = NetworkSpec::default();
    let pooled: Vec<&DomainDataset> = data.train.iter().collect();
    let (base, pre) = pretrain_base(&spec, &pooled, &PretrainConfig::default())?;
    println!("pretrain: {} steps, pooled train accuracy {:.3}", pre.steps, pre.train_accuracy);

    let config = TrainConfig::default();
    for structure in [Structure::UpperHeavy, Structure::AllFlat] {
        for constraint in [Constraint::Subspace, Constraint::Unconstrained] {
            let spec = NetworkSpec {
                structure,
                constraint,
                ..spec.clone()
            };
            let start = Instant::now();
            let mut net = MultiDomainNet::build(&spec, &base, 1)?;
            let out = train_loop(&mut net, &data.train, &data.val, &config, None, None)?;
            let acc: Vec<String> = out.final_val.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
            println!(
                "{structure:?}/{constraint:?}: val accuracy [{}] in {:.1}s",
                acc.join(", "),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
