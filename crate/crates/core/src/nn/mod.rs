//! Minimal dense network engine: parameters, forward/backward, optimizers,
//! finite-difference checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
pub mod params;

pub use network::{Activation, EmbeddingSpec, FeatureBatch, ForwardCache, Network, TrunkConfig};
pub use ops::{cross_entropy, sigmoid, softmax, softplus};
pub use optim::{Method, Optimizer};
pub use params::{ModelParams, TensorSpec};
