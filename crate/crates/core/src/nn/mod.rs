//! Small differentiable network engine: forward evaluation, input gradients, SGD training.

mod layer;
mod model;
mod train;

pub use layer::LayerSpec;
pub use model::{argmax, cross_entropy_grad, softmax, Gradients, Layer, Model, Trace};
pub use train::{accuracy, train, train_with, TrainConfig, TrainOptions, TrainReport};
pub(crate) use train::fit;
