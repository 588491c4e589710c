//! Volumetric sequence classification toolkit built around a hybrid
//! CNN-LSTM model: per-slice convolutional features aggregated over the
//! depth axis by a recurrent network.
//!
//! The pipeline covers NIfTI-1 ingestion with Hounsfield rescaling,
//! spline-interpolated zoom to a fixed grid, deterministic dataset
//! splitting/batching with rotation augmentation, a from-scratch layer zoo
//! with exact analytic gradients, a pretrain/head-swap/fine-tune transfer
//! protocol, and confusion-matrix evaluation (Cohen's kappa, accuracy,
//! per-class F1).
//!
//! See the `examples/` directory for one runnable program per capability;
//! the `viptt` binary exposes the same operations as subcommands.

pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod volume_io;

pub use tensor::Tensor;
pub use volume_io::{Volume, VoxelDomain};
