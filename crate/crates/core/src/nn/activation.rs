use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `max(x, 0)` elementwise.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_raw(x.shape(), x.data().iter().map(|&v| v.max(T::zero())).collect())
}

/// Passes `grad_out` where `x > 0`; the gradient at exactly zero is zero.
///
/// `x` may be either the pre-activation or the ReLU output, since both are
/// positive at the same positions.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            left: x.shape(),
            right: grad_out.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_raw(x.shape(), data))
}
