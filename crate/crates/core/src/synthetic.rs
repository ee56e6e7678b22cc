//! Procedural RGB test images: a colour ramp with discs, rectangles and a
//! faint stripe texture. Used for demos, tests and translating sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

struct Scene {
    ramp: [[f64; 3]; 2],
    angle: f64,
    shapes: Vec<(Shape, [f64; 3])>,
    stripe: (f64, f64, f64),
    extent: f64,
}

impl Scene {
    fn new(seed: u64, extent: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colour = |rng: &mut ChaCha8Rng| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let ramp = [colour(&mut rng), colour(&mut rng)];
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let count = rng.gen_range(4..9);
        let shapes = (0..count)
            .map(|_| {
                let shape = if rng.gen_bool(0.5) {
                    Shape::Disc {
                        cy: rng.gen_range(0.0..extent),
                        cx: rng.gen_range(0.0..extent),
                        r: rng.gen_range(0.05..0.2) * extent,
                    }
                } else {
                    let (y0, x0) = (rng.gen_range(0.0..extent), rng.gen_range(0.0..extent));
                    Shape::Rect {
                        y0,
                        x0,
                        y1: y0 + rng.gen_range(0.1..0.35) * extent,
                        x1: x0 + rng.gen_range(0.1..0.35) * extent,
                    }
                };
                (shape, colour(&mut rng))
            })
            .collect();
        let stripe = (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.02..0.06));
        Scene {
            ramp,
            angle,
            shapes,
            stripe,
            extent,
        }
    }

    fn pixel(&self, y: f64, x: f64, c: usize) -> f64 {
        let t = ((y * self.angle.sin() + x * self.angle.cos()) / self.extent * 0.5 + 0.5).clamp(0.0, 1.0);
        let mut v = self.ramp[0][c] * (1.0 - t) + self.ramp[1][c] * t;
        for (shape, col) in &self.shapes {
            let inside = match *shape {
                Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
                Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            };
            if inside {
                v = col[c];
            }
        }
        let (fy, fx, amp) = self.stripe;
        v += amp * (fy * y + fx * x + c as f64).sin();
        v.clamp(0.0, 1.0)
    }
}

/// A `(1, 3, h, w)` image in [0, 1]; the same seed always gives the same
/// image.
pub fn synthetic_image<T: Scalar>(seed: u64, h: usize, w: usize) -> Tensor<T> {
    let scene = Scene::new(seed, h.max(w) as f64);
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| T::lit(scene.pixel(y as f64, x as f64, c)))
}

/// `frames` windows of size `h × w` over one scene, each shifted `step`
/// pixels to the right of the previous one.
pub fn translating_frames<T: Scalar>(seed: u64, frames: usize, h: usize, w: usize, step: usize) -> Vec<Tensor<T>> {
    let width = w + step * frames.saturating_sub(1);
    let scene = synthetic_image::<T>(seed, h, width);
    (0..frames)
        .map(|k| scene.crop(0, k * step, h, w).expect("window inside the scene"))
        .collect()
}
