//! Gradient-domain image stylization.
//!
//! A small convolutional network maps the six-channel gradient field of an
//! image (vertical and horizontal forward differences of R, G, B) to a
//! stylized gradient field. The output image is recovered by a screened
//! Poisson solve that trades fidelity to the input colours against
//! fidelity to the predicted gradients.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below fix the precision used by the command-line tool.

pub mod error;
pub mod gradient;
pub mod imageio;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod reconstruct;
pub mod scalar;
pub mod stylenet;
pub mod styles;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vgg;
pub mod video;
pub mod weights;

pub use error::{Error, Result};
pub use gradient::{forward_gradients, gradient_adjoint, GradientField};
pub use pipeline::{stylize, StylizeOptions};
pub use reconstruct::{reconstruct, ReconstructionProblem, Solver};
pub use scalar::Scalar;
pub use stylenet::StyleNet;
pub use tensor::{Shape, Tensor};
pub use train::{PairDataset, TrainConfig, Trainer};
pub use vgg::VggTrunk;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type GradientField32 = GradientField<f32>;
pub type StyleNet32 = StyleNet<f32>;
pub type VggTrunk32 = VggTrunk<f32>;
pub type Trainer32 = Trainer<f32>;
pub type PairDataset32 = PairDataset<f32>;
/// Reconstruction problems are solved in double precision.
pub type ReconstructionProblem64 = ReconstructionProblem<f64>;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "GRADSTYLE_THREADS";

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}
