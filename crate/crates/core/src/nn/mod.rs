//! Neural network building blocks with explicit backward passes.

mod activation;
mod adam;
mod conv;
mod init;
mod pool;
mod shuffle;

pub use activation::{relu_backward, relu_forward};
pub use adam::AdamState;
pub use conv::{Conv2d, ConvGrads, PaddingMode};
pub use init::xavier_uniform;
pub use pool::{max_pool2, max_pool2_backward, MaxPool};
pub use shuffle::{pixel_shuffle, space_to_depth};
