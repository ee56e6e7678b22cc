//! Dense 4-D tensors in row-major NCHW layout.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn sample(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense tensor of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

fn all_finite<T: Scalar>(data: &[T]) -> bool {
    data.iter().all(|v| v.is_finite())
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`; fails when the length disagrees with `shape` or when a
    /// value is NaN or infinite.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Tensor { shape, data }.check_finite("from_vec")
    }

    /// Builds a tensor by evaluating `f(n, c, h, w)` at every index.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Internal constructor for kernels whose output is finite by
    /// construction or checked by the caller.
    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if all_finite(&self.data) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && h < s.h && w < s.w);
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Contiguous `(h, w)` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub(crate) fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Contiguous `(c, h, w)` block of sample `n`.
    pub fn sample_data(&self, n: usize) -> &[T] {
        let s = self.shape.sample();
        &self.data[n * s..(n + 1) * s]
    }

    /// Copy of sample `n` as a batch of one.
    pub fn sample(&self, n: usize) -> Tensor<T> {
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor::from_raw(shape, self.sample_data(n).to_vec())
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack: no tensors given"))?
            .shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first,
                    right: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw(Shape::new(n, first.c, first.h, first.w), data))
    }

    /// Copy of the channel range `chans` of every sample.
    pub fn select_channels(&self, chans: Range<usize>) -> Result<Tensor<T>> {
        let s = self.shape;
        if chans.start > chans.end || chans.end > s.c {
            return Err(Error::invalid(format!(
                "select_channels: range {chans:?} out of bounds for shape {s}"
            )));
        }
        let nc = chans.end - chans.start;
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * nc * p);
        for n in 0..s.n {
            let base = n * s.sample();
            data.extend_from_slice(&self.data[base + chans.start * p..base + chans.end * p]);
        }
        Ok(Tensor::from_raw(Shape::new(s.n, nc, s.h, s.w), data))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape, b.shape);
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: sa,
                right: sb,
            });
        }
        let mut data = Vec::with_capacity(sa.len() + sb.len());
        for n in 0..sa.n {
            data.extend_from_slice(a.sample_data(n));
            data.extend_from_slice(b.sample_data(n));
        }
        Ok(Tensor::from_raw(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data))
    }

    /// Spatial crop `[top, top+h) x [left, left+w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if top + h > s.h || left + w > s.w {
            return Err(Error::invalid(format!(
                "crop: window {h}x{w} at ({top}, {left}) exceeds shape {s}"
            )));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = self.plane(n, c);
                for y in top..top + h {
                    data.extend_from_slice(&plane[y * s.w + left..y * s.w + left + w]);
                }
            }
        }
        Ok(Tensor::from_raw(Shape::new(s.n, s.c, h, w), data))
    }

    /// Extends the spatial extent to `h x w` by repeating the last row and
    /// column.
    pub fn pad_replicate(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if h < s.h || w < s.w || s.h == 0 || s.w == 0 {
            return Err(Error::invalid(format!(
                "pad_replicate: cannot pad shape {s} to {h}x{w}"
            )));
        }
        Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
            self.get(n, c, y.min(s.h - 1), x.min(s.w - 1))
        }))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        Tensor::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect()).check_finite("map")
    }

    pub fn cast<U: Scalar>(&self) -> Result<Tensor<U>> {
        Tensor::from_raw(self.shape, self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect())
            .check_finite("cast")
    }

    fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_raw(self.shape, data).check_finite(op)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Result<Tensor<T>> {
        Tensor::from_raw(self.shape, self.data.iter().map(|&a| a * k).collect()).check_finite("scale")
    }

    /// Sum of squares, accumulated in `f64`.
    pub fn sum_sq(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum()
    }

    /// Inner product, accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum())
    }

    /// Mean squared difference, accumulated in `f64`.
    pub fn mse(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "mse",
                left: self.shape,
                right: other.shape,
            });
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max))
    }
}
