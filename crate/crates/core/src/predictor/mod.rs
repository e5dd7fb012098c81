//! Encoder–decoder height regressor with explicit backpropagation, plus a
//! deterministic non-learned baseline.

mod baseline;
mod io;
mod network;
pub mod tensor;
mod train;

pub use baseline::{baseline_predict, predict_city, predict_tile};
pub use io::{
    decode_weights, encode_weights, read_weights, write_loss_history, write_weights,
};
pub use network::{forward, init_weights, loss, loss_and_gradient, ModelConfig, Weights};
pub use tensor::{Scalar, Tensor};
pub use train::{train, TrainConfig};
