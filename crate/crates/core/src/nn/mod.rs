//! Feed-forward network engine: layers, forward and partial-forward
//! evaluation, per-sample losses, reverse-mode gradients and SGD.

mod builder;
mod layer;
pub mod loss;
mod model;
mod train;

pub use builder::{mlp, small_cnn, ModelBuilder};
pub(crate) use layer::{maxpool_winners, ConvGeometry};
pub use layer::{Activation, BatchNorm, Conv2d, Dense, Layer};
pub use loss::{accuracy, compute_loss, LossKind, Targets};
pub(crate) use model::EVAL_CHUNK;
pub use model::{ActivationCache, Evaluation, Gradients, Model, Site};
pub use train::{sgd_train, sgd_train_in_place, SgdConfig, SgdState};
