//! From-scratch network core: tensors, layers, backprop, momentum SGD with
//! linear learning-rate decay, early stopping, and binary weight storage.

pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod scalar;
pub mod sgd;
pub mod tensor;
pub mod train;
pub mod weights_io;

pub use layer::{ActKind, LayerSpec, Mode};
pub use network::{Network, NetworkSpec};
pub use scalar::Scalar;
pub use sgd::{sgd_step, TrainConfig};
pub use tensor::{Tensor, Tensor32};
pub use train::{train, train_from, EpochStats, StopReason, TrainOutcome, TrainingProblem};
