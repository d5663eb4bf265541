//! Save a trained network as a checkpoint, reload it, resume training and
//! inspect the raw tensor container.

use sslora::data::{generate, DomainDataset, DomainDatasetSpec};
use sslora::model::{pretrain_base, MultiDomainNet, NetworkSpec, PretrainConfig};
use sslora::persist::{load_checkpoint, save_checkpoint, TensorContainer};
use sslora::train::{train_loop, TrainConfig};

fn main() -> sslora::Result<()> {
    let data = generate(&DomainDatasetSpec::default())?;
    let spec = NetworkSpec::default();
    let pooled: Vec<&DomainDataset> = data.train.iter().collect();
    let (base, _) = pretrain_base(&spec, &pooled, &PretrainConfig::default())?;
    let mut net = MultiDomainNet::build(&spec, &base, 1)?;
    let config = TrainConfig {
        max_steps: 600,
        milestones: Some(vec![800]),
        ..TrainConfig::default()
    };
    let half = TrainConfig {
        max_steps: 300,
        ..config.clone()
    };
    let first = train_loop(&mut net, &data.train, &data.val, &half, None, None)?;

    let dir = std::env::temp_dir().join("sslora-checkpoint-example");
    let path = dir.join("half.sslw");
    save_checkpoint(&path, &net, Some(&first.state))?;
    let ck = load_checkpoint(&path)?;
    println!("reloaded step {} with base fingerprint {}…", ck.meta.step, &ck.meta.base_fingerprint[..16]);

    let mut resumed = ck.net;
    train_loop(&mut resumed, &data.train, &data.val, &config, ck.state, None)?;
    let mut straight = MultiDomainNet::build(&spec, &base, 1)?;
    train_loop(&mut straight, &data.train, &data.val, &config, None, None)?;
    println!("resumed run equals uninterrupted run: {}", resumed.params() == straight.params());

    let raw = TensorContainer::load(&path)?;
    println!("{} tensors, metadata keys {:?}", raw.tensors.len(), raw.metadata.keys().collect::<Vec<_>>());
    for (name, t) in raw.tensors.iter().take(6) {
        println!("  {name:<22} {:?} {:?}", t.shape(), t.dtype());
    }
    Ok(())
}
