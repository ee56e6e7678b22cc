//! End-to-end stylization: gradients → network → reconstruction.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::gradient::{forward_gradients, GradientField};
use crate::reconstruct::{solve, ReconstructionProblem, Solver, DEFAULT_CG_TOL, DEFAULT_LAMBDA};
use crate::scalar::Scalar;
use crate::stylenet::{StyleNet, UPSCALE};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StylizeOptions {
    pub lambda: f64,
    pub solver: Solver,
    pub cg_tol: f64,
}

impl Default for StylizeOptions {
    fn default() -> Self {
        StylizeOptions {
            lambda: DEFAULT_LAMBDA,
            solver: Solver::Cg,
            cg_tol: DEFAULT_CG_TOL,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timing {
    pub network: Duration,
    pub reconstruction: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug)]
pub struct Stylized<T> {
    /// `(1, 3, H, W)` in [0, 1], same size as the input.
    pub image: Tensor<T>,
    pub timing: Timing,
    /// CG iterations per colour plane.
    pub cg_iterations: Vec<usize>,
}

/// Smallest multiple of [`UPSCALE`] that is at least `v`.
pub fn padded_size(v: usize) -> usize {
    v.div_ceil(UPSCALE) * UPSCALE
}

/// Predicted gradient field for an RGB image of any size: replicate-pads
/// to a multiple of 4, runs the network and crops back.
pub fn predict_field<T: Scalar>(net: &StyleNet<T>, image: &Tensor<T>) -> Result<GradientField<T>> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 || s.h == 0 || s.w == 0 {
        return Err(Error::invalid(format!("stylize expects one non-empty RGB image, got shape {s}")));
    }
    let padded = image.pad_replicate(padded_size(s.h).max(UPSCALE), padded_size(s.w).max(UPSCALE))?;
    let out = net.forward(&forward_gradients(&padded)?)?;
    GradientField::new(out.tensor().crop(0, 0, s.h, s.w)?)
}

/// Full pipeline. The reconstruction always runs in double precision; the
/// result is clamped to [0, 1].
pub fn stylize<T: Scalar>(net: &StyleNet<T>, image: &Tensor<T>, opts: &StylizeOptions) -> Result<Stylized<T>> {
    let start = Instant::now();
    let field = predict_field(net, image)?;
    let network = start.elapsed();

    let t = Instant::now();
    let problem = ReconstructionProblem::<f64>::new(
        image.cast()?,
        field.horizontal().cast()?,
        field.vertical().cast()?,
        opts.lambda,
    )?
    .with_solver(opts.solver)
    .with_tol(opts.cg_tol);
    let sol = solve(&problem)?;
    let clamped = sol.image.map(|v| v.clamp(0.0, 1.0))?.cast()?;
    let reconstruction = t.elapsed();
    Ok(Stylized {
        image: clamped,
        timing: Timing {
            network,
            reconstruction,
            total: start.elapsed(),
        },
        cg_iterations: sol.iterations,
    })
}
