use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Output of a 2x2 stride-2 max pool with the winning input offsets.
#[derive(Clone, Debug)]
pub struct MaxPool<T> {
    pub output: Tensor<T>,
    /// Flat index into the input for every output element.
    pub argmax: Vec<usize>,
}

/// 2x2 max pool, stride 2. Ties go to the first element in row-major order.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<MaxPool<T>> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::invalid(format!(
            "max_pool2: spatial size {}x{} must be even",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(shape.len());
    let mut argmax = Vec::with_capacity(shape.len());
    let data = x.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * s.w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * s.w + 2 * xx + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok(MaxPool {
        output: Tensor::from_raw(shape, out),
        argmax,
    })
}

/// Routes each upstream gradient to the input element that won the max.
pub fn max_pool2_backward<T: Scalar>(input_shape: Shape, pool: &MaxPool<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != pool.output.shape() {
        return Err(Error::ShapeMismatch {
            op: "max_pool2_backward",
            left: pool.output.shape(),
            right: grad_out.shape(),
        });
    }
    let mut gx = vec![T::zero(); input_shape.len()];
    for (&i, &g) in pool.argmax.iter().zip(grad_out.data()) {
        gx[i] += g;
    }
    Ok(Tensor::from_raw(input_shape, gx))
}
