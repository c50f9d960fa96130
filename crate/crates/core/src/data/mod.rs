//! Datasets with clean and noisy labels, label corruption, splitting and
//! minibatch sampling.

pub mod cifar;
pub mod dataset;
pub mod noise;
pub mod sampler;
pub mod split;

pub use cifar::{load_cifar_binary, Standardizer, CIFAR_RECORD_BYTES};
pub use dataset::{make_blobs, LabeledDataset};
pub use noise::{corrupt, NoiseKind, NoiseSpec};
pub use sampler::{BatchSampler, SamplingMode};
pub use split::split;
