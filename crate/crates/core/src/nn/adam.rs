//! Adam optimizer with bias-corrected moments.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// First/second moment buffers for an ordered list of parameter slices.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub(crate) m: Vec<Vec<T>>,
    pub(crate) v: Vec<Vec<T>>,
    pub(crate) step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments for parameters of the given lengths and the usual
    /// defaults (0.9, 0.999, 1e-8).
    pub fn new(lengths: &[usize]) -> Self {
        AdamState {
            m: lengths.iter().map(|&l| vec![T::zero(); l]).collect(),
            v: lengths.iter().map(|&l| vec![T::zero(); l]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub(crate) fn from_parts(m: Vec<Vec<T>>, v: Vec<Vec<T>>, step: u64) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("adam: first and second moments disagree in layout"));
        }
        Ok(AdamState {
            m,
            v,
            step,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update in place. Nothing is modified when the layout does
    /// not match or a gradient is not finite.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: expected {} parameter tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::invalid(format!(
                    "adam: parameter {i} has {} values and {} gradients, state holds {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { op: "adam_step" });
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);
        let one = T::one();
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut st = AdamState::<f32>::new(&[3]);
        let mut w = vec![1.0f32, -2.0, 3.0];
        st.update(&mut [&mut w], &[&[0.0; 3]], 0.1).unwrap();
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.05, v = 2.5e-4; corrected m̂ = 0.5, v̂ = 0.25; step = 0.1·0.5/0.5.
        let mut st = AdamState::<f64>::new(&[1]);
        let mut w = vec![1.0];
        st.update(&mut [&mut w], &[&[0.5]], 0.1).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-7, "{}", w[0]);
    }

    #[test]
    fn constant_gradient_steady_state_step_is_lr() {
        let mut st = AdamState::<f64>::new(&[1]);
        let mut w = vec![0.0];
        let mut prev = 0.0;
        let mut last = 0.0;
        for _ in 0..1000 {
            st.update(&mut [&mut w], &[&[-3.0]], 0.01).unwrap();
            last = w[0] - prev;
            prev = w[0];
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
        assert_eq!(st.step_count(), 1000);
    }

    #[test]
    fn rejects_bad_layout_and_nan() {
        let mut st = AdamState::<f32>::new(&[2]);
        let mut w = vec![0.0f32; 3];
        assert!(st.update(&mut [&mut w], &[&[0.0; 3]], 0.1).is_err());
        let mut w = vec![0.0f32; 2];
        assert!(st.update(&mut [&mut w], &[&[f32::NAN, 0.0]], 0.1).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
