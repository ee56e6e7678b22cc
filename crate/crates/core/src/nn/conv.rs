//! 2-D cross-correlation with analytic backward pass (im2col + GEMM).

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{gemm_ld, Op, Scalar};
use crate::tensor::{Shape, Tensor};

/// How out-of-range input positions are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingMode {
    Zero,
    /// Clamp to the nearest border pixel.
    Replicate,
}

/// Convolution layer with kernel `(out, in, kh, kw)` and one bias per output
/// channel.
///
/// Kernel height and width must both be divisible by the stride so that
/// strided windows tile the input evenly (uneven overlap is what produces
/// checkerboard artifacts).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    weight: Tensor<T>,
    bias: Vec<T>,
    stride: usize,
    padding: usize,
    mode: PaddingMode,
}

/// Gradients of `sum(grad_out * forward(x))`.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize, mode: PaddingMode) -> Result<Self> {
        let s = weight.shape();
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if s.h == 0 || s.w == 0 || s.n == 0 || s.c == 0 {
            return Err(Error::invalid(format!("conv2d: degenerate kernel shape {s}")));
        }
        if s.h % stride != 0 || s.w % stride != 0 {
            return Err(Error::invalid(format!(
                "conv2d: kernel {}x{} is not divisible by stride {stride}",
                s.h, s.w
            )));
        }
        if bias.len() != s.n {
            return Err(Error::invalid(format!(
                "conv2d: bias length {} does not match {} output channels",
                bias.len(),
                s.n
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite { op: "conv2d::new" });
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
            mode,
        })
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn mode(&self) -> PaddingMode {
        self.mode
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape().h, self.weight.shape().w)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn parameters_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weight.data_mut(), &mut self.bias)
    }

    /// Spatial output size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if h == 0 || w == 0 || hp < kh || wp < kw {
            return Err(Error::invalid(format!(
                "conv2d: input {h}x{w} with padding {} is smaller than kernel {kh}x{kw}",
                self.padding
            )));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }

    fn geometry(&self, x: Shape) -> Result<Geometry> {
        if x.c != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv2d: input has {} channels, layer expects {}",
                x.c,
                self.in_channels()
            )));
        }
        let (ho, wo) = self.output_size(x.h, x.w)?;
        Ok(Geometry {
            c: x.c,
            h: x.h,
            w: x.w,
            hp: x.h + 2 * self.padding,
            wp: x.w + 2 * self.padding,
            ho,
            wo,
        })
    }

    /// Output rows per im2col band, keeping each column block near L2 size.
    fn band_rows(&self, k: usize, g: &Geometry) -> usize {
        const BAND_ELEMS: usize = 1 << 19;
        (BAND_ELEMS / (k * g.wo).max(1)).clamp(1, g.ho.max(1))
    }

    fn pad_sample<'a>(&self, x: &'a [T], g: &Geometry) -> Cow<'a, [T]> {
        let p = self.padding;
        if p == 0 {
            return Cow::Borrowed(x);
        }
        let mut out = vec![T::zero(); g.c * g.hp * g.wp];
        for c in 0..g.c {
            let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            let dst = &mut out[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
            match self.mode {
                PaddingMode::Zero => {
                    for y in 0..g.h {
                        let d = (y + p) * g.wp + p;
                        dst[d..d + g.w].copy_from_slice(&src[y * g.w..(y + 1) * g.w]);
                    }
                }
                PaddingMode::Replicate => {
                    for py in 0..g.hp {
                        let sy = py.saturating_sub(p).min(g.h - 1);
                        let row = &src[sy * g.w..(sy + 1) * g.w];
                        let drow = &mut dst[py * g.wp..(py + 1) * g.wp];
                        for (px, d) in drow.iter_mut().enumerate() {
                            *d = row[px.saturating_sub(p).min(g.w - 1)];
                        }
                    }
                }
            }
        }
        Cow::Owned(out)
    }

    /// Unrolls the windows of output rows `oy0..oy1` of the padded sample
    /// into a `(c*kh*kw, (oy1-oy0)*wo)` matrix.
    fn im2col(&self, padded: &[T], g: &Geometry, oy0: usize, oy1: usize, cols: &mut [T]) {
        let (kh, kw) = self.kernel();
        let s = self.stride;
        let lb = (oy1 - oy0) * g.wo;
        for c in 0..g.c {
            let plane = &padded[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let dst = &mut cols[row * lb..(row + 1) * lb];
                    for (r, oy) in (oy0..oy1).enumerate() {
                        let src_row = &plane[(oy * s + ki) * g.wp..];
                        let d = &mut dst[r * g.wo..(r + 1) * g.wo];
                        if s == 1 {
                            d.copy_from_slice(&src_row[kj..kj + g.wo]);
                        } else {
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = src_row[ox * s + kj];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column block (rows `oy0..oy1`) back onto the padded
    /// input gradient.
    fn col2im(&self, gcols: &[T], g: &Geometry, oy0: usize, oy1: usize, gpad: &mut [T]) {
        let (kh, kw) = self.kernel();
        let s = self.stride;
        let lb = (oy1 - oy0) * g.wo;
        for c in 0..g.c {
            let plane = &mut gpad[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let src = &gcols[row * lb..(row + 1) * lb];
                    for (r, oy) in (oy0..oy1).enumerate() {
                        let base = (oy * s + ki) * g.wp + kj;
                        let srow = &src[r * g.wo..(r + 1) * g.wo];
                        if s == 1 {
                            for (d, &v) in plane[base..base + g.wo].iter_mut().zip(srow) {
                                *d += v;
                            }
                        } else {
                            for (ox, &v) in srow.iter().enumerate() {
                                plane[base + ox * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds a padded-domain gradient back onto the pixels the padding was
    /// copied from.
    fn unpad_grad(&self, gpad: Vec<T>, g: &Geometry) -> Vec<T> {
        let p = self.padding;
        if p == 0 {
            return gpad;
        }
        let mut gx = vec![T::zero(); g.c * g.h * g.w];
        for c in 0..g.c {
            let src = &gpad[c * g.hp * g.wp..(c + 1) * g.hp * g.wp];
            let dst = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
            match self.mode {
                PaddingMode::Zero => {
                    for y in 0..g.h {
                        let sb = (y + p) * g.wp + p;
                        dst[y * g.w..(y + 1) * g.w].copy_from_slice(&src[sb..sb + g.w]);
                    }
                }
                PaddingMode::Replicate => {
                    for py in 0..g.hp {
                        let sy = py.saturating_sub(p).min(g.h - 1);
                        for px in 0..g.wp {
                            let sx = px.saturating_sub(p).min(g.w - 1);
                            dst[sy * g.w + sx] += src[py * g.wp + px];
                        }
                    }
                }
            }
        }
        gx
    }

    fn forward_sample(&self, x: &[T], g: &Geometry, out: &mut [T]) {
        let o = self.out_channels();
        let (kh, kw) = self.kernel();
        let k = g.c * kh * kw;
        let l = g.ho * g.wo;
        for (row, &b) in out.chunks_mut(l).zip(&self.bias) {
            row.fill(b);
        }
        let padded = self.pad_sample(x, g);
        let rows = self.band_rows(k, g);
        let mut cols = vec![T::zero(); k * rows * g.wo];
        for oy0 in (0..g.ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(g.ho);
            let lb = (oy1 - oy0) * g.wo;
            let cols = &mut cols[..k * lb];
            self.im2col(&padded, g, oy0, oy1, cols);
            gemm_ld(
                Op::N,
                Op::N,
                o,
                lb,
                k,
                T::one(),
                self.weight.data(),
                k,
                cols,
                lb,
                T::one(),
                &mut out[oy0 * g.wo..],
                l,
            );
        }
    }

    fn backward_sample(&self, x: &[T], gout: &[T], g: &Geometry, need_input: bool, need_params: bool) -> SampleGrads<T> {
        let o = self.out_channels();
        let (kh, kw) = self.kernel();
        let k = g.c * kh * kw;
        let l = g.ho * g.wo;
        let padded = need_params.then(|| self.pad_sample(x, g));
        let rows = self.band_rows(k, g);
        let mut cols = vec![T::zero(); k * rows * g.wo];
        let mut gw = vec![T::zero(); if need_params { o * k } else { 0 }];
        let mut gpad = vec![T::zero(); if need_input { g.c * g.hp * g.wp } else { 0 }];
        for oy0 in (0..g.ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(g.ho);
            let lb = (oy1 - oy0) * g.wo;
            let gout_band = &gout[oy0 * g.wo..];
            let cols = &mut cols[..k * lb];
            if let Some(padded) = &padded {
                self.im2col(padded, g, oy0, oy1, cols);
                gemm_ld(Op::N, Op::T, o, k, lb, T::one(), gout_band, l, cols, lb, T::one(), &mut gw, k);
            }
            if need_input {
                gemm_ld(Op::T, Op::N, k, lb, o, T::one(), self.weight.data(), k, gout_band, l, T::zero(), cols, lb);
                self.col2im(cols, g, oy0, oy1, &mut gpad);
            }
        }
        let gb = if need_params {
            gout.chunks(l.max(1)).take(o).map(|r| r.iter().copied().sum()).collect()
        } else {
            Vec::new()
        };
        SampleGrads {
            weight: gw,
            bias: gb,
            input: need_input.then(|| self.unpad_grad(gpad, g)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let g = self.geometry(s)?;
        let o = self.out_channels();
        let l = g.ho * g.wo;
        let mut out = vec![T::zero(); s.n * o * l];
        if l > 0 {
            out.par_chunks_mut(o * l)
                .enumerate()
                .for_each(|(n, out_n)| self.forward_sample(x.sample_data(n), &g, out_n));
        }
        Tensor::from_raw(Shape::new(s.n, o, g.ho, g.wo), out).check_finite("conv2d_forward")
    }

    /// Gradients with respect to input, kernel and bias.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        self.backward_with(x, grad_out, true)
    }

    /// As [`Self::backward`]; the input gradient is skipped when
    /// `need_input` is false (first layer of a network).
    pub fn backward_with(&self, x: &Tensor<T>, grad_out: &Tensor<T>, need_input: bool) -> Result<ConvGrads<T>> {
        let (grads, _) = self.backward_impl(x, grad_out, need_input, true)?;
        Ok(grads.expect("parameter gradients requested"))
    }

    /// Input gradient only, for frozen layers.
    pub fn backward_input(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, input) = self.backward_impl(x, grad_out, true, false)?;
        Ok(input.expect("input gradient requested"))
    }

    #[allow(clippy::type_complexity)]
    fn backward_impl(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input: bool,
        need_params: bool,
    ) -> Result<(Option<ConvGrads<T>>, Option<Tensor<T>>)> {
        let s = x.shape();
        let g = self.geometry(s)?;
        let o = self.out_channels();
        let expected = Shape::new(s.n, o, g.ho, g.wo);
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv2d_backward",
                left: expected,
                right: grad_out.shape(),
            });
        }
        let per_sample: Vec<SampleGrads<T>> = (0..s.n)
            .into_par_iter()
            .map(|n| self.backward_sample(x.sample_data(n), grad_out.sample_data(n), &g, need_input, need_params))
            .collect();

        // Fixed-order reduction keeps results independent of thread count.
        let (kh, kw) = self.kernel();
        let k = g.c * kh * kw;
        let (pk, po) = if need_params { (o * k, o) } else { (0, 0) };
        let mut weight = vec![T::zero(); pk];
        let mut bias = vec![T::zero(); po];
        let mut input = need_input.then(|| Vec::with_capacity(s.len()));
        for sg in per_sample {
            for (a, b) in weight.iter_mut().zip(&sg.weight) {
                *a += *b;
            }
            for (a, b) in bias.iter_mut().zip(&sg.bias) {
                *a += *b;
            }
            if let (Some(acc), Some(gx)) = (input.as_mut(), sg.input) {
                acc.extend_from_slice(&gx);
            }
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite { op: "conv2d_backward" });
        }
        let input = input
            .map(|d| Tensor::from_raw(s, d).check_finite("conv2d_backward"))
            .transpose()?;
        if !need_params {
            return Ok((None, input));
        }
        Ok((
            Some(ConvGrads {
                input,
                weight: Tensor::from_raw(self.weight.shape(), weight).check_finite("conv2d_backward")?,
                bias,
            }),
            None,
        ))
    }
}

struct SampleGrads<T> {
    weight: Vec<T>,
    bias: Vec<T>,
    input: Option<Vec<T>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct six-loop cross-correlation with explicit padding lookup.
    fn reference(layer: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (kh, kw) = layer.kernel();
        let (st, p) = (layer.stride() as isize, layer.padding() as isize);
        let (ho, wo) = layer.output_size(s.h, s.w).unwrap();
        let o = layer.out_channels();
        let fetch = |n: usize, c: usize, y: isize, xx: isize| -> f64 {
            let inside = y >= 0 && xx >= 0 && y < s.h as isize && xx < s.w as isize;
            match layer.mode() {
                PaddingMode::Zero if !inside => 0.0,
                _ => x.get(
                    n,
                    c,
                    y.clamp(0, s.h as isize - 1) as usize,
                    xx.clamp(0, s.w as isize - 1) as usize,
                ),
            }
        };
        Tensor::from_fn([s.n, o, ho, wo], |n, oc, oy, ox| {
            let mut acc = layer.bias()[oc];
            for c in 0..s.c {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let y = oy as isize * st + ki as isize - p;
                        let xx = ox as isize * st + kj as isize - p;
                        acc += layer.weight().get(oc, c, ki, kj) * fetch(n, c, y, xx);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn counts_ones_in_window() {
        let layer = Conv2d::new(Tensor::<f32>::full([1, 1, 3, 3], 1.0), vec![0.0], 1, 1, PaddingMode::Zero).unwrap();
        let y = layer.forward(&Tensor::full([1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.get(0, 0, h, w), 4.0);
        }
    }

    #[test]
    fn identity_kernel_forward_and_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Conv2d::new(Tensor::full([1, 1, 1, 1], 1.0), vec![0.0], 1, 0, PaddingMode::Zero).unwrap();
        let x = random([2, 1, 4, 3], &mut rng);
        assert_eq!(layer.forward(&x).unwrap(), x);
        let g = random([2, 1, 4, 3], &mut rng);
        assert_eq!(layer.backward(&x, &g).unwrap().input.unwrap(), g);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (stride, k, pad, mode) in [
            (1, 3, 1, PaddingMode::Zero),
            (1, 3, 1, PaddingMode::Replicate),
            (2, 4, 1, PaddingMode::Replicate),
            (2, 4, 0, PaddingMode::Zero),
        ] {
            let layer = Conv2d::new(random([3, 2, k, k], &mut rng), vec![0.1, -0.2, 0.3], stride, pad, mode).unwrap();
            let x = random([1, 2, 6, 6], &mut rng);
            let got = layer.forward(&x).unwrap();
            let want = reference(&layer, &x);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12, "{stride} {k} {pad} {mode:?}");
        }
    }

    #[test]
    fn single_precision_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random([3, 2, 3, 3], &mut rng);
        let x = random([1, 2, 5, 5], &mut rng);
        let layer64 = Conv2d::new(w.clone(), vec![0.0; 3], 1, 1, PaddingMode::Zero).unwrap();
        let layer32 = Conv2d::new(w.cast::<f32>().unwrap(), vec![0.0; 3], 1, 1, PaddingMode::Zero).unwrap();
        let got = layer32.forward(&x.cast().unwrap()).unwrap();
        let want = reference(&layer64, &x);
        assert!(got.cast::<f64>().unwrap().max_abs_diff(&want).unwrap() < 1e-5);
    }

    #[test]
    fn rejects_indivisible_kernel_and_channel_mismatch() {
        let err = Conv2d::new(Tensor::<f32>::zeros([1, 1, 3, 3]), vec![0.0], 2, 1, PaddingMode::Zero).unwrap_err();
        assert!(err.to_string().contains("not divisible"));
        let layer = Conv2d::new(Tensor::<f32>::zeros([1, 2, 3, 3]), vec![0.0], 1, 1, PaddingMode::Zero).unwrap();
        assert!(layer.forward(&Tensor::zeros([1, 3, 4, 4])).is_err());
        let x = Tensor::zeros([1, 2, 4, 4]);
        assert!(layer.backward(&x, &Tensor::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Conv2d::new(random([2, 2, 3, 3], &mut rng), vec![0.5, 0.5], 1, 1, PaddingMode::Replicate).unwrap();
        let x = random([2, 2, 4, 4], &mut rng);
        let g = layer.backward(&x, &Tensor::zeros([2, 2, 4, 4])).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Conv2d::new(random([2, 1, 3, 3], &mut rng), vec![0.0, 0.1], 1, 1, PaddingMode::Replicate).unwrap();
        let big = random([1, 1, 10, 10], &mut rng);
        let a = big.crop(0, 0, 8, 8).unwrap();
        let b = big.crop(0, 1, 8, 8).unwrap();
        let ya = layer.forward(&a).unwrap();
        let yb = layer.forward(&b).unwrap();
        for c in 0..2 {
            for y in 3..5 {
                for x in 3..5 {
                    assert!((ya.get(0, c, y, x + 1) - yb.get(0, c, y, x)).abs() < 1e-12);
                }
            }
        }
    }
}
