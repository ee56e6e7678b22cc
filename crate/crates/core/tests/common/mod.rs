//! Helpers shared by the integration tests: random tensors, finite
//! differences and the gradient-check suite.
#![allow(dead_code)]

use gradstyle::gradient::GradientField;
use gradstyle::losses::{color_domain_loss, pixel_loss, total_loss, LossWeights};
use gradstyle::nn::{
    max_pool2, max_pool2_backward, pixel_shuffle, relu_backward, relu_forward, space_to_depth, xavier_uniform, Conv2d,
    PaddingMode,
};
use gradstyle::vgg::perceptual_loss;
use gradstyle::{Shape, StyleNet, Tensor, VggTrunk};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type T64 = Tensor<f64>;

/// Central-difference step used by every check.
pub const H: f64 = 1e-3;
/// Random instances per check.
pub const INSTANCES: usize = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> T64 {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

pub fn field(t: T64) -> GradientField<f64> {
    GradientField::new(t).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        d / scale
    }
}

/// Central-difference gradient of `f` with respect to every element of `x`.
pub fn fd_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + H;
            let hi = f(&p);
            p[i] = v - H;
            let lo = f(&p);
            p[i] = v;
            (hi - lo) / (2.0 * H)
        })
        .collect()
}

pub fn with_data(like: &T64, data: &[f64]) -> T64 {
    Tensor::from_vec(like.shape(), data.to_vec()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn unit_direction(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = dot(&d, &d).sqrt();
    d.into_iter().map(|v| v / n).collect()
}

/// Outcome of one gradient check over all its instances.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
    pub instances: usize,
    /// Instances redrawn because the stencil crossed a ReLU or pool kink.
    pub redrawn: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

fn check(name: &'static str, tol: f64, errs: impl Iterator<Item = f64>) -> Check {
    let errs: Vec<f64> = errs.collect();
    Check {
        name,
        worst: errs.iter().fold(0.0, |m: f64, &e| if e.is_nan() { f64::INFINITY } else { m.max(e) }),
        tol,
        instances: errs.len(),
        redrawn: 0,
    }
}

const CONV_CONFIGS: [(usize, usize, PaddingMode); 6] = [
    (3, 1, PaddingMode::Zero),
    (3, 1, PaddingMode::Replicate),
    (4, 2, PaddingMode::Zero),
    (4, 2, PaddingMode::Replicate),
    (1, 1, PaddingMode::Zero),
    (2, 2, PaddingMode::Replicate),
];

/// Input, weight and bias gradients of a convolution under
/// `f = ⟨r, conv(x)⟩`; the error is the worst of the three.
pub fn check_conv(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let (k, stride, mode) = CONV_CONFIGS[i % CONV_CONFIGS.len()];
        let (n, ci, co) = (g.gen_range(1..3), g.gen_range(1..4), g.gen_range(1..4));
        let (h, w) = (2 * g.gen_range(2..5), 2 * g.gen_range(2..5));
        let x = uniform(&mut g, [n, ci, h, w], -1.0, 1.0);
        let wt = uniform(&mut g, [co, ci, k, k], -1.0, 1.0);
        let b: Vec<f64> = (0..co).map(|_| g.gen_range(-1.0..1.0)).collect();
        let pad = (k - stride) / 2;
        let conv = Conv2d::new(wt.clone(), b.clone(), stride, pad, mode).unwrap();
        let y = conv.forward(&x).unwrap();
        let r = uniform(&mut g, y.shape(), -1.0, 1.0);
        let grads = conv.backward(&x, &r).unwrap();

        let fx = fd_grad(x.data(), |d| dot(r.data(), conv.forward(&with_data(&x, d)).unwrap().data()));
        let fw = fd_grad(wt.data(), |d| {
            let c = Conv2d::new(with_data(&wt, d), b.clone(), stride, pad, mode).unwrap();
            dot(r.data(), c.forward(&x).unwrap().data())
        });
        let fb = fd_grad(&b, |d| {
            let c = Conv2d::new(wt.clone(), d.to_vec(), stride, pad, mode).unwrap();
            dot(r.data(), c.forward(&x).unwrap().data())
        });
        rel_err(grads.input.unwrap().data(), &fx)
            .max(rel_err(grads.weight.data(), &fw))
            .max(rel_err(&grads.bias, &fb))
    });
    check("conv2d (input, kernel, bias)", 1e-3, errs)
}

/// ReLU away from its kink (|x| ≥ 0.05 so `x ± h` keeps its sign).
pub fn check_relu(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let x = Tensor::from_fn([2, 3, 5, 4], |_, _, _, _| {
            let m = g.gen_range(0.05..1.0);
            if g.gen_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let r = uniform(&mut g, x.shape(), -1.0, 1.0);
        let an = relu_backward(&x, &r).unwrap();
        let fd = fd_grad(x.data(), |d| dot(r.data(), relu_forward(&with_data(&x, d)).data()));
        rel_err(an.data(), &fd)
    });
    check("relu", 1e-3, errs)
}

/// The shuffle's backward is its inverse permutation.
pub fn check_shuffle(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let r_factor = [2, 4][i % 2];
        let x = uniform(&mut g, [2, 2 * r_factor * r_factor, 2, 3], -1.0, 1.0);
        let y = pixel_shuffle(&x, r_factor).unwrap();
        let r = uniform(&mut g, y.shape(), -1.0, 1.0);
        let an = space_to_depth(&r, r_factor).unwrap();
        let fd = fd_grad(x.data(), |d| dot(r.data(), pixel_shuffle(&with_data(&x, d), r_factor).unwrap().data()));
        rel_err(an.data(), &fd)
    });
    check("pixel shuffle", 1e-3, errs)
}

/// Max pool on inputs whose values are at least 0.01 apart, so no window
/// changes its winner under a step of `h`.
pub fn check_pool(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let shape = Shape::new(2, 3, 6, 4);
        let mut vals: Vec<f64> = (0..shape.len()).map(|k| k as f64 * 0.01).collect();
        vals.shuffle(&mut g);
        let x = Tensor::from_vec(shape, vals).unwrap();
        let pool = max_pool2(&x).unwrap();
        let r = uniform(&mut g, pool.output.shape(), -1.0, 1.0);
        let an = max_pool2_backward(shape, &pool, &r).unwrap();
        let fd = fd_grad(x.data(), |d| dot(r.data(), max_pool2(&with_data(&x, d)).unwrap().output.data()));
        rel_err(an.data(), &fd)
    });
    check("max pool 2x2", 1e-3, errs)
}

/// Network with random biases as well as kernels.
pub fn random_net(seed: u64) -> StyleNet<f64> {
    let mut g = rng(seed);
    StyleNet::build_with(|s| {
        let w = xavier_uniform(Shape::new(s.out_channels, s.in_channels, s.kernel, s.kernel), &mut g);
        (w, (0..s.out_channels).map(|_| g.gen_range(-0.1..0.1)).collect())
    })
    .unwrap()
}

fn perturbed(net: &StyleNet<f64>, dir: &[Vec<f64>], step: f64) -> StyleNet<f64> {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (dw, db) = (&dir[2 * i], &dir[2 * i + 1]);
            let w: Vec<f64> = l.weight().data().iter().zip(dw).map(|(a, d)| a + step * d).collect();
            let b: Vec<f64> = l.bias().iter().zip(db).map(|(a, d)| a + step * d).collect();
            Conv2d::new(with_data(l.weight(), &w), b, l.stride(), l.padding(), l.mode()).unwrap()
        })
        .collect();
    StyleNet::from_layers(layers).unwrap()
}

fn split_like(flat: &[f64], lengths: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut at = 0;
    for &l in lengths {
        out.push(flat[at..at + l].to_vec());
        at += l;
    }
    out
}

/// Which side of every ReLU and which pool winner each unit is on. Central
/// differences are only a valid oracle when this pattern is the same at
/// both ends of the stencil.
pub type Pattern = Vec<usize>;

pub fn net_pattern(net: &StyleNet<f64>, x: &T64) -> Pattern {
    let trace = net.forward_trace(x).unwrap();
    trace.conv_inputs()[1..]
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| (v > 0.0) as usize))
        .collect()
}

pub fn vgg_pattern(trunk: &VggTrunk<f64>, x: &T64) -> Pattern {
    let trace = trunk.forward_trace(x).unwrap();
    let mut p: Pattern = trace
        .activations()
        .iter()
        .flat_map(|t| t.data().iter().map(|&v| (v > 0.0) as usize))
        .collect();
    for pool in trace.pools() {
        p.extend_from_slice(&pool.argmax);
    }
    p
}

/// Pattern of the trunk on both halves of a gradient field.
pub fn field_pattern(trunk: &VggTrunk<f64>, a: &T64) -> Pattern {
    [0..3, 3..6]
        .into_iter()
        .flat_map(|half| vgg_pattern(trunk, &VggTrunk::preprocess(&a.select_channels(half).unwrap()).unwrap()))
        .collect()
}

pub fn shifted(x: &T64, dir: &[f64], step: f64) -> T64 {
    with_data(x, &x.data().iter().zip(dir).map(|(a, d)| a + step * d).collect::<Vec<_>>())
}

/// Draws instances until [`INSTANCES`] of them have a kink-free stencil.
/// `attempt` returns `None` to ask for a redraw. The second value counts
/// redraws.
fn screened(seed: u64, mut attempt: impl FnMut(&mut ChaCha8Rng, u64) -> Option<f64>) -> (Vec<f64>, usize) {
    let mut errs = Vec::new();
    let mut draws = 0;
    while errs.len() < INSTANCES {
        if draws >= 20 * INSTANCES {
            errs.push(f64::INFINITY);
            break;
        }
        let s = seed + draws as u64;
        draws += 1;
        if let Some(e) = attempt(&mut rng(s), s) {
            errs.push(e);
        }
    }
    (errs, draws - INSTANCES.min(draws))
}

fn screened_check(name: &'static str, tol: f64, seed: u64, attempt: impl FnMut(&mut ChaCha8Rng, u64) -> Option<f64>) -> Check {
    let (errs, redrawn) = screened(seed, attempt);
    let mut c = check(name, tol, errs.into_iter());
    c.redrawn = redrawn;
    c
}

/// Directional derivative of `f` at `x` along `dir` by central differences.
fn fd_dir(x: &T64, dir: &[f64], f: impl Fn(&T64) -> f64) -> f64 {
    (f(&shifted(x, dir, H)) - f(&shifted(x, dir, -H))) / (2.0 * H)
}

/// Network backward as directional derivatives: one random unit direction
/// over all parameters and one over the input per instance.
pub fn check_network(seed: u64) -> Check {
    screened_check("style network (parameters, input)", 1e-3, seed, |g, s| {
        let net = random_net(s + 1_000_000);
        let x = uniform(g, [1, 6, 8, 8], -0.5, 0.5);
        let trace = net.forward_trace(&x).unwrap();
        let r = uniform(g, trace.output.shape(), -1.0, 1.0);
        let grads = net.backward(&trace, &r, true).unwrap();
        let f = |n: &StyleNet<f64>, x: &T64| dot(r.data(), n.forward(&field(x.clone())).unwrap().tensor().data());

        let lengths = net.parameter_lengths();
        let dir = unit_direction(g, lengths.iter().sum());
        let parts = split_like(&dir, &lengths);
        let (plus, minus) = (perturbed(&net, &parts, H), perturbed(&net, &parts, -H));
        let dx = unit_direction(g, x.len());
        let base = net_pattern(&net, &x);
        let smooth = [
            net_pattern(&plus, &x),
            net_pattern(&minus, &x),
            net_pattern(&net, &shifted(&x, &dx, H)),
            net_pattern(&net, &shifted(&x, &dx, -H)),
        ]
        .iter()
        .all(|p| *p == base);
        if !smooth {
            return None;
        }
        let analytic: f64 = dot(&grads.slices().concat(), &dir);
        let fd = (f(&plus, &x) - f(&minus, &x)) / (2.0 * H);
        let analytic_x = dot(grads.input.as_ref().unwrap().data(), &dx);
        let fd_x = fd_dir(&x, &dx, |x| f(&net, x));
        Some(rel_err(&[analytic], &[fd]).max(rel_err(&[analytic_x], &[fd_x])))
    })
}

/// VGG trunk backward through ReLUs and pools, on a preprocessed-scale
/// input, along two random directions per instance.
pub fn check_vgg(trunk: &VggTrunk<f64>, seed: u64) -> Check {
    screened_check("vgg trunk (input)", 1e-3, seed, |g, _| {
        let x = uniform(g, [1, 3, 8, 8], -100.0, 100.0);
        let trace = trunk.forward_trace(&x).unwrap();
        let r = uniform(g, trace.features().shape(), -1.0, 1.0);
        let an = trunk.backward_input(&trace, &r).unwrap();
        let base = vgg_pattern(trunk, &x);
        let mut worst: f64 = 0.0;
        for _ in 0..2 {
            let d = unit_direction(g, x.len());
            if vgg_pattern(trunk, &shifted(&x, &d, H)) != base || vgg_pattern(trunk, &shifted(&x, &d, -H)) != base {
                return None;
            }
            let fd = fd_dir(&x, &d, |x| dot(r.data(), trunk.features_preprocessed(x).unwrap().data()));
            worst = worst.max(rel_err(&[dot(an.data(), &d)], &[fd]));
        }
        Some(worst)
    })
}

pub fn check_pixel_loss(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let a = uniform(&mut g, [2, 6, 4, 4], -1.0, 1.0);
        let b = uniform(&mut g, [2, 6, 4, 4], -1.0, 1.0);
        let (_, an) = pixel_loss(&field(a.clone()), &field(b.clone())).unwrap();
        let fd = fd_grad(a.data(), |d| pixel_loss(&field(with_data(&a, d)), &field(b.clone())).unwrap().0);
        rel_err(an.tensor().data(), &fd)
    });
    check("pixel loss", 1e-3, errs)
}

pub fn check_color_loss(seed: u64) -> Check {
    let errs = (0..INSTANCES).map(|i| {
        let mut g = rng(seed + i as u64);
        let a = uniform(&mut g, [2, 3, 5, 4], 0.0, 1.0);
        let b = uniform(&mut g, [2, 3, 5, 4], 0.0, 1.0);
        let (_, an) = color_domain_loss(&a, &b).unwrap();
        let fd = fd_grad(a.data(), |d| color_domain_loss(&with_data(&a, d), &b).unwrap().0);
        rel_err(an.data(), &fd)
    });
    check("colour-domain loss", 1e-3, errs)
}

/// Directional check of a loss on gradient fields, along two random
/// directions per instance.
fn field_loss_check(
    name: &'static str,
    tol: f64,
    trunk: &VggTrunk<f64>,
    seed: u64,
    loss: impl Fn(&T64, &T64) -> (f64, T64),
) -> Check {
    screened_check(name, tol, seed, |g, _| {
        let a = uniform(g, [1, 6, 4, 4], -0.5, 0.5);
        let b = uniform(g, [1, 6, 4, 4], -0.5, 0.5);
        let (_, an) = loss(&a, &b);
        let base = field_pattern(trunk, &a);
        let mut worst: f64 = 0.0;
        for _ in 0..2 {
            let d = unit_direction(g, a.len());
            if field_pattern(trunk, &shifted(&a, &d, H)) != base || field_pattern(trunk, &shifted(&a, &d, -H)) != base {
                return None;
            }
            let fd = fd_dir(&a, &d, |a| loss(a, &b).0);
            worst = worst.max(rel_err(&[dot(an.data(), &d)], &[fd]));
        }
        Some(worst)
    })
}

pub fn check_perceptual_loss(trunk: &VggTrunk<f64>, seed: u64) -> Check {
    field_loss_check("perceptual loss", 1e-2, trunk, seed, |a, b| {
        let (l, g) = perceptual_loss(trunk, &field(a.clone()), &field(b.clone())).unwrap();
        (l, g.into_tensor())
    })
}

/// `alpha · pixel + beta · feat` at the default weights.
pub fn check_total_loss(trunk: &VggTrunk<f64>, seed: u64) -> Check {
    let w = LossWeights::default();
    field_loss_check("total loss (default weights)", 1e-2, trunk, seed, |a, b| {
        let t = total_loss(&field(a.clone()), &field(b.clone()), w, Some(trunk)).unwrap();
        (t.total, t.grad.into_tensor())
    })
}

/// Every layer and loss check, in a fixed order.
pub fn gradient_suite(trunk: &VggTrunk<f64>) -> Vec<Check> {
    vec![
        check_conv(100),
        check_relu(200),
        check_shuffle(300),
        check_pool(400),
        check_network(500),
        check_vgg(trunk, 600),
        check_pixel_loss(700),
        check_color_loss(800),
        check_perceptual_loss(trunk, 900),
        check_total_loss(trunk, 1000),
    ]
}
