//! Gradient-to-gradient stylization network.
//!
//! Seven feature convolutions with ReLU (two of them stride-2, giving a
//! quarter-resolution feature map at conv7), a ×4 pixel shuffle back to full
//! resolution, then conv8 (ReLU) and a linear conv9 producing six signed
//! gradient channels.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradient::{GradientField, FIELD_CHANNELS};
use crate::nn::{pixel_shuffle, relu_backward, relu_forward, space_to_depth, xavier_uniform, Conv2d, PaddingMode};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::weights::{Record, WeightFile};

/// Spatial factor removed by conv2/conv4 and restored by the shuffle.
pub const UPSCALE: usize = 4;

/// Position of the pixel shuffle: after this many convolutions.
const SHUFFLE_AFTER: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn spec(name: &'static str, i: usize, o: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec {
        name,
        in_channels: i,
        out_channels: o,
        kernel,
        stride,
    }
}

/// Default layer table.
pub const ARCHITECTURE: [LayerSpec; 9] = [
    spec("conv1", 6, 32, 3, 1),
    spec("conv2", 32, 64, 4, 2),
    spec("conv3", 64, 64, 3, 1),
    spec("conv4", 64, 128, 4, 2),
    spec("conv5", 128, 128, 3, 1),
    spec("conv6", 128, 128, 3, 1),
    spec("conv7", 128, 96, 3, 1),
    spec("conv8", 6, 16, 3, 1),
    spec("conv9", 16, 6, 3, 1),
];

/// Network parameters: conv1 … conv9 in order.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleNet<T> {
    layers: Vec<Conv2d<T>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// Input to each of the nine convolutions.
    conv_inputs: Vec<Tensor<T>>,
    /// conv7 output after ReLU, before the shuffle.
    shuffled_from: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T> Trace<T> {
    /// Input to each of the nine convolutions; entries 1.. are ReLU outputs
    /// (entry 7 is the shuffled conv7 activation).
    pub fn conv_inputs(&self) -> &[Tensor<T>] {
        &self.conv_inputs
    }
}

/// Gradients for one convolution's kernel and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct NetGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
    /// Present when requested from [`StyleNet::backward`].
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> NetGrads<T> {
    /// Flat views in the same order as [`StyleNet::parameters_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }
}

fn layer_padding(kernel: usize, stride: usize) -> usize {
    // k3/s1 keeps the size; k4/s2 halves it exactly with one pixel of padding.
    (kernel - stride) / 2
}

impl<T: Scalar> StyleNet<T> {
    /// Seeded Xavier-uniform kernels and zero biases.
    pub fn build(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build_with(|s| {
            let shape = Shape::new(s.out_channels, s.in_channels, s.kernel, s.kernel);
            (xavier_uniform(shape, &mut rng), vec![T::zero(); s.out_channels])
        })
        .expect("default architecture is valid")
    }

    /// Builds the default architecture with caller-supplied parameters.
    pub fn build_with(mut init: impl FnMut(&LayerSpec) -> (Tensor<T>, Vec<T>)) -> Result<Self> {
        let layers = ARCHITECTURE
            .iter()
            .map(|s| {
                let (w, b) = init(s);
                Conv2d::new(w, b, s.stride, layer_padding(s.kernel, s.stride), PaddingMode::Replicate)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// Validates the channel chain `6 → … → 6` and the fixed kernel/stride
    /// pattern. Channel widths may differ from [`ARCHITECTURE`].
    pub fn from_layers(layers: Vec<Conv2d<T>>) -> Result<Self> {
        if layers.len() != ARCHITECTURE.len() {
            return Err(Error::invalid(format!(
                "network needs {} convolutions, got {}",
                ARCHITECTURE.len(),
                layers.len()
            )));
        }
        for (i, (l, s)) in layers.iter().zip(&ARCHITECTURE).enumerate() {
            if l.kernel() != (s.kernel, s.kernel)
                || l.stride() != s.stride
                || l.padding() != layer_padding(s.kernel, s.stride)
                || l.mode() != PaddingMode::Replicate
            {
                return Err(Error::invalid(format!(
                    "{}: expected k{} s{} replicate-padded convolution",
                    s.name, s.kernel, s.stride
                )));
            }
            let expected_in = match i {
                0 => FIELD_CHANNELS,
                SHUFFLE_AFTER => {
                    let c7 = layers[SHUFFLE_AFTER - 1].out_channels();
                    if c7 % (UPSCALE * UPSCALE) != 0 {
                        return Err(Error::invalid(format!(
                            "conv7 has {c7} output channels, not divisible by {}",
                            UPSCALE * UPSCALE
                        )));
                    }
                    c7 / (UPSCALE * UPSCALE)
                }
                _ => layers[i - 1].out_channels(),
            };
            if l.in_channels() != expected_in {
                return Err(Error::invalid(format!(
                    "{}: takes {} channels but receives {expected_in}",
                    s.name,
                    l.in_channels()
                )));
            }
        }
        if layers[ARCHITECTURE.len() - 1].out_channels() != FIELD_CHANNELS {
            return Err(Error::invalid(format!(
                "conv9 must produce {FIELD_CHANNELS} channels"
            )));
        }
        Ok(StyleNet { layers })
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn layer_names() -> impl Iterator<Item = &'static str> {
        ARCHITECTURE.iter().map(|s| s.name)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Conv2d::parameter_count).sum()
    }

    /// Lengths of the parameter slices, in optimizer order.
    pub fn parameter_lengths(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weight().len(), l.bias().len()]).collect()
    }

    /// Mutable views `[conv1.weight, conv1.bias, conv2.weight, …]`.
    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let (w, b) = l.parameters_mut();
                [w, b]
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != FIELD_CHANNELS {
            return Err(Error::invalid(format!(
                "network input must have {FIELD_CHANNELS} channels, got shape {s}"
            )));
        }
        if s.h == 0 || s.w == 0 || s.h % UPSCALE != 0 || s.w % UPSCALE != 0 {
            return Err(Error::invalid(format!(
                "network input {}x{} is not a multiple of {UPSCALE}; pad the image (replicate) before stylizing",
                s.h, s.w
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &GradientField<T>) -> Result<GradientField<T>> {
        GradientField::new(self.forward_trace(g.tensor())?.output)
    }

    /// Forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut conv_inputs = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers[..SHUFFLE_AFTER] {
            let y = relu_forward(&layer.forward(&act)?);
            conv_inputs.push(act);
            act = y;
        }
        let shuffled = pixel_shuffle(&act, UPSCALE)?;
        let shuffled_from = act;
        let a8 = relu_forward(&self.layers[SHUFFLE_AFTER].forward(&shuffled)?);
        conv_inputs.push(shuffled);
        let output = self.layers[SHUFFLE_AFTER + 1].forward(&a8)?;
        conv_inputs.push(a8);
        Ok(Trace {
            conv_inputs,
            shuffled_from,
            output,
        })
    }

    /// Chain rule back through the stack. `need_input` controls whether the
    /// gradient with respect to the network input is produced.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor<T>, need_input: bool) -> Result<NetGrads<T>> {
        if grad_out.shape() != trace.output.shape() {
            return Err(Error::ShapeMismatch {
                op: "net_backward",
                left: trace.output.shape(),
                right: grad_out.shape(),
            });
        }
        let mut layers: Vec<Option<LayerGrads<T>>> = vec![None; self.layers.len()];
        let mut store = |i: usize, g: crate::nn::ConvGrads<T>| -> Option<Tensor<T>> {
            layers[i] = Some(LayerGrads {
                weight: g.weight,
                bias: g.bias,
            });
            g.input
        };

        let last = self.layers.len() - 1;
        let mut g = store(last, self.layers[last].backward(&trace.conv_inputs[last], grad_out)?).expect("input grad");
        g = relu_backward(&trace.conv_inputs[last], &g)?;
        let i8 = SHUFFLE_AFTER;
        g = store(i8, self.layers[i8].backward(&trace.conv_inputs[i8], &g)?).expect("input grad");
        g = space_to_depth(&g, UPSCALE)?;
        g = relu_backward(&trace.shuffled_from, &g)?;
        let mut input = None;
        for i in (0..SHUFFLE_AFTER).rev() {
            let want = i > 0 || need_input;
            let gi = store(i, self.layers[i].backward_with(&trace.conv_inputs[i], &g, want)?);
            if i == 0 {
                input = gi;
            } else {
                g = relu_backward(&trace.conv_inputs[i], &gi.expect("input grad"))?;
            }
        }
        Ok(NetGrads {
            layers: layers.into_iter().map(|l| l.expect("every layer visited")).collect(),
            input,
        })
    }

    pub fn to_weight_file(&self) -> WeightFile<T> {
        let mut f = WeightFile::new();
        for (l, s) in self.layers.iter().zip(&ARCHITECTURE) {
            f.push(Record::from_tensor(format!("{}.weight", s.name), l.weight()))
                .expect("unique names");
            f.push(Record::vector(format!("{}.bias", s.name), l.bias()))
                .expect("unique names");
        }
        f
    }

    /// Reads `conv1` … `conv9` from a weight file, ignoring other records.
    pub fn from_weight_file(f: &WeightFile<T>) -> Result<Self> {
        let layers = ARCHITECTURE
            .iter()
            .map(|s| {
                let w = f.require(&format!("{}.weight", s.name))?.to_tensor()?;
                let b = f.require(&format!("{}.bias", s.name))?.to_vector(w.shape().n)?;
                Conv2d::new(w, b, s.stride, layer_padding(s.kernel, s.stride), PaddingMode::Replicate)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(&WeightFile::load(path)?)
    }
}
