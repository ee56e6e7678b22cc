//! Sub-pixel upsampling (depth-to-space) and its inverse.
//!
//! Nearest-neighbour duplication of every channel group into an `r x r`
//! block followed by keeping only the sub-pixel whose position matches the
//! channel offset selects exactly one source value per output pixel, which
//! is the permutation implemented here.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `(N, C, H, W) -> (N, C/r², H·r, W·r)` with
/// `out[c, h·r+i, w·r+j] = in[c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.c % (r * r) != 0 {
        return Err(Error::invalid(format!(
            "pixel_shuffle: {} channels not divisible by {r}²",
            s.c
        )));
    }
    let oc = s.c / (r * r);
    let (oh, ow) = (s.h * r, s.w * r);
    let mut out = vec![T::zero(); s.len()];
    for n in 0..s.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    let base = (n * oc + c) * oh * ow;
                    for h in 0..s.h {
                        let row = base + (h * r + i) * ow;
                        for w in 0..s.w {
                            out[row + w * r + j] = src[h * s.w + w];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(Shape::new(s.n, oc, oh, ow), out))
}

/// Inverse of [`pixel_shuffle`]; also its adjoint, hence its backward pass.
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || s.h % r != 0 || s.w % r != 0 {
        return Err(Error::invalid(format!(
            "space_to_depth: spatial size {}x{} not divisible by {r}",
            s.h, s.w
        )));
    }
    let oc = s.c * r * r;
    let (oh, ow) = (s.h / r, s.w / r);
    let mut out = vec![T::zero(); s.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for i in 0..r {
                for j in 0..r {
                    let base = (n * oc + c * r * r + i * r + j) * oh * ow;
                    for h in 0..oh {
                        for w in 0..ow {
                            out[base + h * ow + w] = src[(h * r + i) * s.w + w * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(Shape::new(s.n, oc, oh, ow), out))
}
