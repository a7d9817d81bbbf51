//! Margin loss, initialization, the gradient-descent loop, and checkpoints.

mod checkpoint;
mod fit;
mod init;
mod loss;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC_PREFIX};
pub use fit::{
    batch_gradient, batch_sizes, fit, fit_from, param_distance, predict, EarlyStop, Optimizer,
    TrainConfig, TrainHistory, DROPOUT_STREAM, SHUFFLE_STREAM,
};
pub use init::{init_params, INIT_STREAM};
pub use loss::{margin_loss, margin_loss_on_tape, LossConfig, LossNorm};
