//! Weakly-supervised part discovery on voxel grids: tensors and autodiff,
//! voxelization, synthetic corpora, stacked U networks, training, evaluation
//! and part-based retrieval.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod ops;
pub mod network;
pub mod optim;
pub mod params;
pub mod postprocess;
pub mod retrieval;
pub mod scalar;
pub mod segmap;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod voxel;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
pub type Trainer32 = training::Trainer<f32>;
pub type Trainer64 = training::Trainer<f64>;
