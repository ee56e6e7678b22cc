use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a kernel
/// `(out, in, kh, kw)`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor<T> {
    let receptive = shape.h * shape.w;
    let fan_in = shape.c * receptive;
    let fan_out = shape.n * receptive;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_, _, _, _| T::lit(rng.gen_range(-bound..bound)))
}
