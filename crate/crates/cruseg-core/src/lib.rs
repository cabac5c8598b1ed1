//! Segmentation engine for small grayscale regions of interest.

pub mod autodiff;
pub mod crf;
pub mod data;
pub mod error;
pub mod fsio;
pub mod net;
pub mod parallel;
pub mod rng;

pub use autodiff::{ConvSpec, NodeId, Shape, SymMatrix, Tape, Tensor};
pub use crf::{CrfParams, KernelCache, MeanFieldState, PairwiseKernels};
pub use error::{Error, Result};
pub use net::{build_network, CruNet, NetworkConfig, ParamSet};

/// Floor for every `log` argument in the loss terms.
pub const LOG_EPS: f64 = 1e-12;
