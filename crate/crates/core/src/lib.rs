//! Neural networks whose activations carry a trainable, per-neuron shape
//! parameter.
//!
//! Building blocks, bottom up:
//!
//! * [`tensor`]: dense row-major `f64` arrays.
//! * [`activations`]: sigmoid/ReLU plus the adaptive Gumbel, adaptive ReLU
//!   (exponential smoother) and logistic-smoothed ReLU families, each with
//!   derivatives in `x` and in the shape `alpha`.
//! * [`network`]: dense, convolutional and pooling layers, losses with
//!   L1/L2 penalties, and back-propagation that also yields gradients for
//!   `ln alpha`.
//! * [`trainer`]: initialization schemes, mini-batch SGD and a
//!   finite-difference gradient checker.
//! * [`data`]: synthetic data from a random generator network, MNIST IDX
//!   files, k-fold splits and classification metrics.

pub mod activations;
pub mod data;
pub mod network;
pub mod numfmt;
pub mod tensor;
pub mod trainer;

pub use activations::{ActivationKind, ShapeParam};
pub use data::{Dataset, Metrics};
pub use network::{Architecture, BaseLoss, Gradients, LayerSpec, LossSpec, Network, OutputSpec};
pub use tensor::Tensor;
pub use trainer::{InitScheme, TrainConfig};
