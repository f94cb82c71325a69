//! Network architecture specs, the two reference classifiers, built
//! networks, and the checkpoint format.

pub mod checkpoint;
pub mod network;
pub mod spec;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_data, save_checkpoint, Checkpoint, CheckpointError, TrainMeta,
};
pub use network::{NetError, Network};
pub use spec::{
    build_full_alexnet, build_mini_alexnet, build_mini_inception_net, ChainDims,
    InceptionBlockSpec, LayerSpec, NetSpec, SpecError,
};
