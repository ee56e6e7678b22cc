//! Frozen VGG-16 trunk through conv3_3 and the gradient-domain perceptual
//! loss built on it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradient::{GradientField, FIELD_CHANNELS};
use crate::nn::{max_pool2, max_pool2_backward, relu_backward, relu_forward, xavier_uniform, Conv2d, MaxPool, PaddingMode};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::weights::{Record, WeightFile};

/// `(name, in, out)` for every convolution in the trunk; all are 3x3,
/// stride 1, zero padding 1.
pub const VGG_LAYERS: [(&str, usize, usize); 7] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
];

/// A 2x2 max pool follows these layers (conv1_2, conv2_2).
const POOL_AFTER: [usize; 2] = [1, 3];

/// ImageNet channel means in RGB order, on the 0..255 scale.
pub const IMAGENET_MEAN: [f64; 3] = [123.68, 116.779, 103.939];

/// Scale of the affine map from gradient values in [-1, 1] to 0..255.
pub const INPUT_SCALE: f64 = 127.5;

/// Channel count of the conv3_3 feature map.
pub const FEATURE_CHANNELS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct VggTrunk<T> {
    layers: Vec<Conv2d<T>>,
}

/// Activations kept for [`VggTrunk::backward_input`].
#[derive(Clone, Debug)]
pub struct VggTrace<T> {
    inputs: Vec<Tensor<T>>,
    /// Post-ReLU output of every convolution.
    activations: Vec<Tensor<T>>,
    pools: Vec<MaxPool<T>>,
}

impl<T: Scalar> VggTrace<T> {
    /// Post-ReLU conv3_3 features.
    pub fn features(&self) -> &Tensor<T> {
        self.activations.last().expect("seven layers")
    }

    /// Post-ReLU output of each convolution.
    pub fn activations(&self) -> &[Tensor<T>] {
        &self.activations
    }

    pub fn pools(&self) -> &[MaxPool<T>] {
        &self.pools
    }
}

fn conv<T: Scalar>(weight: Tensor<T>, bias: Vec<T>) -> Result<Conv2d<T>> {
    Conv2d::new(weight, bias, 1, 1, PaddingMode::Zero)
}

impl<T: Scalar> VggTrunk<T> {
    /// Validates names and shapes of all seven layers.
    pub fn from_weight_file(f: &WeightFile<T>) -> Result<Self> {
        let mut layers = Vec::with_capacity(VGG_LAYERS.len());
        for &(name, i, o) in &VGG_LAYERS {
            let w = f.require(&format!("{name}.weight"))?;
            let b = f.require(&format!("{name}.bias"))?;
            if w.dims != [o, i, 3, 3] {
                return Err(Error::Format(format!(
                    "{name}.weight: expected shape [{o}, {i}, 3, 3], found {:?}",
                    w.dims
                )));
            }
            if b.dims != [o] {
                return Err(Error::Format(format!(
                    "{name}.bias: expected shape [{o}], found {:?}",
                    b.dims
                )));
            }
            layers.push(conv(w.to_tensor()?, b.to_vector(o)?)?);
        }
        Ok(VggTrunk { layers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }

    /// Randomly initialised stand-in for pretrained weights: Xavier kernels
    /// and small uniform biases.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = VGG_LAYERS
            .iter()
            .map(|&(_, i, o)| {
                let w = xavier_uniform(Shape::new(o, i, 3, 3), &mut rng);
                let b = (0..o).map(|_| T::lit(rng.gen_range(-0.1..0.1))).collect();
                conv(w, b).expect("valid layer")
            })
            .collect();
        VggTrunk { layers }
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn to_weight_file(&self) -> WeightFile<T> {
        let mut f = WeightFile::new();
        for (l, (name, _, _)) in self.layers.iter().zip(&VGG_LAYERS) {
            f.push(Record::from_tensor(format!("{name}.weight"), l.weight()))
                .expect("unique names");
            f.push(Record::vector(format!("{name}.bias"), l.bias()))
                .expect("unique names");
        }
        f
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    /// Maps gradient values `v` to `127.5 (v + 1) - mean[c]`.
    pub fn preprocess(x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 3 {
            return Err(Error::invalid(format!("vgg input must have 3 channels, got shape {s}")));
        }
        let mut out = x.clone();
        for n in 0..s.n {
            for (c, mean) in IMAGENET_MEAN.iter().enumerate() {
                for v in out.plane_mut(n, c) {
                    *v = T::lit(INPUT_SCALE * (v.to_f64_lossy() + 1.0) - mean);
                }
            }
        }
        out.check_finite("vgg_preprocess")
    }

    fn check_input(x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != 3 {
            return Err(Error::invalid(format!("vgg input must have 3 channels, got shape {s}")));
        }
        if s.h == 0 || s.w == 0 || s.h % 4 != 0 || s.w % 4 != 0 {
            return Err(Error::invalid(format!(
                "vgg input {}x{} must be a non-empty multiple of 4",
                s.h, s.w
            )));
        }
        Ok(())
    }

    /// Forward pass on an already preprocessed input.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<VggTrace<T>> {
        Self::check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pools = Vec::with_capacity(POOL_AFTER.len());
        let mut act = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = relu_forward(&layer.forward(&act)?);
            inputs.push(act);
            act = if POOL_AFTER.contains(&i) {
                let p = max_pool2(&y)?;
                let out = p.output.clone();
                pools.push(p);
                out
            } else {
                y.clone()
            };
            activations.push(y);
        }
        Ok(VggTrace {
            inputs,
            activations,
            pools,
        })
    }

    /// Post-ReLU conv3_3 features of an already preprocessed input.
    pub fn features_preprocessed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(x)?.activations.pop().expect("seven layers"))
    }

    /// conv3_3 features of a 3-channel gradient slice with values in
    /// roughly [-1, 1]; output is `(N, 256, H/4, W/4)`.
    pub fn features_conv33(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_input(x)?;
        self.features_preprocessed(&Self::preprocess(x)?)
    }

    /// Gradient with respect to the preprocessed input, given the gradient
    /// with respect to the conv3_3 features. Weights are not differentiated.
    pub fn backward_input(&self, trace: &VggTrace<T>, grad_features: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_features.clone();
        let mut pools = trace.pools.iter().rev();
        for i in (0..self.layers.len()).rev() {
            g = relu_backward(&trace.activations[i], &g)?;
            g = self.layers[i].backward_input(&trace.inputs[i], &g)?;
            if i > 0 && POOL_AFTER.contains(&(i - 1)) {
                let pool = pools.next().expect("one pool per block");
                g = max_pool2_backward(trace.activations[i - 1].shape(), pool, &g)?;
            }
        }
        Ok(g)
    }
}

/// Perceptual loss between two gradient fields and its gradient with
/// respect to `a`.
///
/// The vertical and horizontal halves each go through the trunk as a
/// 3-channel image; the loss is the sum over halves of
/// `‖ψ(a) − ψ(b)‖² / (N·C·H'·W')`.
pub fn perceptual_loss<T: Scalar>(
    trunk: &VggTrunk<T>,
    a: &GradientField<T>,
    b: &GradientField<T>,
) -> Result<(f64, GradientField<T>)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "perceptual_loss",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let s = a.shape();
    let mut grad = Tensor::zeros(s);
    let mut loss = 0.0;
    for half in [0..3, 3..FIELD_CHANNELS] {
        let xa = VggTrunk::preprocess(&a.tensor().select_channels(half.clone())?)?;
        let xb = VggTrunk::preprocess(&b.tensor().select_channels(half.clone())?)?;
        let trace = trunk.forward_trace(&xa)?;
        let fb = trunk.features_preprocessed(&xb)?;
        let diff = trace.features().sub(&fb)?;
        let denom = diff.len() as f64;
        loss += diff.sum_sq() / denom;
        let gf = diff.scale(T::lit(2.0 / denom))?;
        let gx = trunk.backward_input(&trace, &gf)?;
        for n in 0..s.n {
            for (k, c) in half.clone().enumerate() {
                for (d, &v) in grad.plane_mut(n, c).iter_mut().zip(gx.plane(n, k)) {
                    *d = v * T::lit(INPUT_SCALE);
                }
            }
        }
    }
    Ok((loss, GradientField::new(grad.check_finite("perceptual_loss")?)?))
}
