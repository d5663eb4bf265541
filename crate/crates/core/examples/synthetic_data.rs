//! Generate the multi-domain dataset, write it to disk and read it back.

use sslora::data::{generate, load_dataset, save_dataset, DomainDatasetSpec};

fn main() -> sslora::Result<()> {
    let spec = DomainDatasetSpec::default();
    let data = generate(&spec)?;
    println!(
        "{} domains × {} classes, input_dim {}, minimum class-mean margin {:.3}",
        spec.num_domains,
        spec.num_classes,
        spec.input_dim,
        data.min_class_margin()
    );
    for (train, val) in data.train.iter().zip(&data.val) {
        println!(
            "domain {}: {} train / {} val samples, train class counts {:?}",
            train.domain,
            train.len(),
            val.len(),
            train.class_counts()
        );
    }
    let dir = std::env::temp_dir().join("sslora-synthetic-data");
    save_dataset(&data, &dir)?;
    let loaded = load_dataset(&dir)?;
    println!(
        "round trip through {}: identical = {}",
        dir.display(),
        loaded.train == data.train && loaded.val == data.val
    );
    Ok(())
}
