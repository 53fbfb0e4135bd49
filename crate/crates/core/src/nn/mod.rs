//! Small deterministic CNN engine.

mod arch;
pub mod gradcheck;
mod layers;
mod model;
mod train;

pub use arch::Architecture;
pub use layers::LayerSpec;
pub use model::{forward_with, loss_and_grad_with, Model, ParamId, ParamKind, ParamMap};
pub use train::{
    argmax, evaluate_accuracy, split_indices, split_train_val, train, TrainConfig, Trainer,
};
