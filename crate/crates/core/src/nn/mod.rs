//! Learned bias estimator: a small ReLU MLP with hand-written backprop,
//! mini-batch gradient descent, and a portable weight format.

mod mlp;
mod train;
mod weights;

pub use mlp::{
    compensate, default_dims, loss_and_gradient, Mlp, MlpModel, Normalizer, TrainingSample, HIDDEN_LAYERS, MIN_STD,
};
pub use train::{filter_training_set, train, EpochLoss, TrainConfig, TrainHistory};
pub use weights::{load_weights, load_weights_for, save_weights, weights_from_str, weights_to_string, WEIGHTS_VERSION};
