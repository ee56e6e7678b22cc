//! Forward-difference image gradients and their adjoints.
//!
//! Horizontal: `g(y, x) = I(y, x+1) - I(y, x)`, zero in the last column.
//! Vertical:   `g(y, x) = I(y+1, x) - I(y, x)`, zero in the last row.
//!
//! The plane-level operators here are the only gradient definition in the
//! crate; training targets and the reconstruction system both use them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Number of channels in a packed gradient field.
pub const FIELD_CHANNELS: usize = 6;

/// Horizontal forward difference of one `h x w` plane into `out`.
pub fn diff_h<T: Scalar>(plane: &[T], h: usize, w: usize, out: &mut [T]) {
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..w.saturating_sub(1) {
            o[x] = row[x + 1] - row[x];
        }
        if w > 0 {
            o[w - 1] = T::zero();
        }
    }
}

/// Vertical forward difference of one `h x w` plane into `out`.
pub fn diff_v<T: Scalar>(plane: &[T], h: usize, w: usize, out: &mut [T]) {
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            out[y * w + x] = plane[(y + 1) * w + x] - plane[y * w + x];
        }
    }
    if h > 0 {
        out[(h - 1) * w..h * w].fill(T::zero());
    }
}

/// Transpose of [`diff_h`]. The last column of `v` lies outside the
/// operator's range and is ignored.
pub fn diff_h_adjoint<T: Scalar>(v: &[T], h: usize, w: usize, out: &mut [T]) {
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        let o = &mut out[y * w..(y + 1) * w];
        for x in 0..w {
            let left = if x > 0 { row[x - 1] } else { T::zero() };
            let here = if x + 1 < w { row[x] } else { T::zero() };
            o[x] = left - here;
        }
    }
}

/// Transpose of [`diff_v`]. The last row of `v` is ignored.
pub fn diff_v_adjoint<T: Scalar>(v: &[T], h: usize, w: usize, out: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let up = if y > 0 { v[(y - 1) * w + x] } else { T::zero() };
            let here = if y + 1 < h { v[y * w + x] } else { T::zero() };
            out[y * w + x] = up - here;
        }
    }
}

/// Six-channel gradient stack: channels 0..3 hold the vertical gradients of
/// R, G, B and channels 3..6 the horizontal ones.
///
/// Fields computed from images have a zero last row in the vertical half and
/// a zero last column in the horizontal half; network outputs need not.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField<T>(Tensor<T>);

impl<T: Scalar> GradientField<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.shape().c != FIELD_CHANNELS {
            return Err(Error::invalid(format!(
                "gradient field needs {FIELD_CHANNELS} channels, got shape {}",
                t.shape()
            )));
        }
        Ok(GradientField(t))
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        GradientField(Tensor::zeros([n, FIELD_CHANNELS, h, w]))
    }

    /// Packs separate `(N, 3, H, W)` vertical and horizontal tensors.
    pub fn from_parts(vertical: &Tensor<T>, horizontal: &Tensor<T>) -> Result<Self> {
        if vertical.shape() != horizontal.shape() || vertical.shape().c != 3 {
            return Err(Error::ShapeMismatch {
                op: "GradientField::from_parts",
                left: vertical.shape(),
                right: horizontal.shape(),
            });
        }
        Ok(GradientField(Tensor::concat_channels(vertical, horizontal)?))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn vertical(&self) -> Tensor<T> {
        self.0.select_channels(0..3).expect("six channels")
    }

    pub fn horizontal(&self) -> Tensor<T> {
        self.0.select_channels(3..6).expect("six channels")
    }
}

/// Packs the vertical and horizontal gradients of an `(N, 3, H, W)` image.
pub fn forward_gradients<T: Scalar>(image: &Tensor<T>) -> Result<GradientField<T>> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::invalid(format!(
            "forward_gradients: expected an RGB image, got shape {s}"
        )));
    }
    if s.h < 2 || s.w < 2 {
        return Err(Error::invalid(format!(
            "forward_gradients: image {}x{} is degenerate, need at least 2x2",
            s.h, s.w
        )));
    }
    let mut out = Tensor::zeros([s.n, FIELD_CHANNELS, s.h, s.w]);
    for n in 0..s.n {
        for c in 0..3 {
            let src = image.plane(n, c);
            diff_v(src, s.h, s.w, out.plane_mut(n, c));
            diff_h(src, s.h, s.w, out.plane_mut(n, c + 3));
        }
    }
    Ok(GradientField(out.check_finite("forward_gradients")?))
}

/// Transpose of [`forward_gradients`]: a negative divergence that returns an
/// `(N, 3, H, W)` image.
pub fn gradient_adjoint<T: Scalar>(field: &GradientField<T>) -> Result<Tensor<T>> {
    let s = field.shape();
    let mut out = Tensor::zeros([s.n, 3, s.h, s.w]);
    let mut tmp = vec![T::zero(); s.plane()];
    for n in 0..s.n {
        for c in 0..3 {
            let dst = out.plane_mut(n, c);
            diff_v_adjoint(field.0.plane(n, c), s.h, s.w, dst);
            diff_h_adjoint(field.0.plane(n, c + 3), s.h, s.w, &mut tmp);
            for (d, t) in dst.iter_mut().zip(&tmp) {
                *d += *t;
            }
        }
    }
    out.check_finite("gradient_adjoint")
}
