//! File formats: the `SSLW` tensor container, checkpoints built on it, and
//! JSON run configuration.

mod checkpoint;
mod container;
mod config;

pub use checkpoint::{
    checkpoint_container, checkpoint_from_container, export_domain_adapters, layer_weights,
    load_base_weights, load_checkpoint, save_base_weights, save_checkpoint, Checkpoint, CheckpointMeta,
};
pub use config::RunConfig;
pub use container::{
    read_container, write_atomic, write_container, ContainerError, DType, Tensor, TensorContainer,
    TensorData, FORMAT_VERSION, MAGIC,
};
