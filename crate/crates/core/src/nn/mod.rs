//! Minimal dense neural-network kernel with hand-written backward passes.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{bce_with_logits, gelu, gelu_grad, sigmoid, DenseGrads, DenseLayer};
pub use optim::{early_stop, Adam, EarlyStopping, PlateauScheduler, StopDecision};
pub use tensor::{Tensor2, Trans};
pub use train::{fit, gradient_check, Classifier, EpochRecord, History, TrainConfig};
