//! Desk-scale deep-learning core for MRI-like volumes: a tape-based autograd
//! engine, l2-norm pooling (with both its analytic gradient and a published
//! alternative kept for comparison), convolutional building blocks, spatial
//! pyramid region pooling, region-proposal machinery, a synthetic multi-modal
//! dataset generator, and the evaluation metrics used by the CLI.

pub mod boxes;
pub mod error;
pub mod fdiff;
pub mod gradcheck;
pub mod l2pool;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pyramid;
pub mod report;
pub mod slices;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use tape::{ElementwiseOp, GradTape, Gradients};
pub use tensor::{Tensor, TensorId};
