//! Training objectives: gradient-domain pixel loss, perceptual loss and
//! their weighted sum, plus the colour-domain baseline.

use crate::error::{Error, Result};
use crate::gradient::GradientField;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vgg::{perceptual_loss, VggTrunk};

/// Weights of the pixel (`alpha`) and perceptual (`beta`) terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10_000.0,
            beta: 10.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and non-negative, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }

    pub fn combine(&self, pixel: f64, feat: f64) -> f64 {
        self.alpha * pixel + self.beta * feat
    }
}

fn check_shapes<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `½ · mean((pred − target)²)` and its gradient `(pred − target) / count`.
pub fn pixel_loss<T: Scalar>(pred: &GradientField<T>, target: &GradientField<T>) -> Result<(f64, GradientField<T>)> {
    check_shapes("pixel_loss", pred.tensor(), target.tensor())?;
    let diff = pred.tensor().sub(target.tensor())?;
    let count = diff.len().max(1) as f64;
    let loss = 0.5 * diff.sum_sq() / count;
    let grad = diff.scale(T::lit(1.0 / count))?;
    Ok((loss, GradientField::new(grad)?))
}

/// Colour-domain baseline: `mean((pred − target)²)` on RGB images.
pub fn color_domain_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_shapes("color_domain_loss", pred, target)?;
    if pred.shape().c != 3 {
        return Err(Error::invalid(format!(
            "color_domain_loss expects RGB images, got shape {}",
            pred.shape()
        )));
    }
    let diff = pred.sub(target)?;
    let count = diff.len().max(1) as f64;
    let loss = diff.sum_sq() / count;
    Ok((loss, diff.scale(T::lit(2.0 / count))?))
}

/// Weighted loss with its parts and the gradient with respect to `pred`.
#[derive(Clone, Debug)]
pub struct LossTerms<T> {
    pub total: f64,
    pub pixel: f64,
    pub feat: f64,
    pub grad: GradientField<T>,
}

/// `alpha · pixel + beta · feat`. The trunk is only consulted when
/// `beta > 0`.
pub fn total_loss<T: Scalar>(
    pred: &GradientField<T>,
    target: &GradientField<T>,
    weights: LossWeights,
    trunk: Option<&VggTrunk<T>>,
) -> Result<LossTerms<T>> {
    let (pixel, gp) = pixel_loss(pred, target)?;
    let mut grad = gp.tensor().scale(T::lit(weights.alpha))?;
    let mut feat = 0.0;
    if weights.beta > 0.0 {
        let trunk = trunk.ok_or_else(|| Error::invalid("perceptual loss (beta > 0) needs a VGG trunk"))?;
        let (f, gf) = perceptual_loss(trunk, pred, target)?;
        feat = f;
        grad = grad.add(&gf.tensor().scale(T::lit(weights.beta))?)?;
    }
    Ok(LossTerms {
        total: weights.combine(pixel, feat),
        pixel,
        feat,
        grad: GradientField::new(grad)?,
    })
}
