//! Screened-Poisson reconstruction: the image closest to the input colours
//! whose gradients follow a target field.
//!
//! Per plane, minimises `‖S − I‖² + λ(‖Dx S − Sx‖² + ‖Dy S − Sy‖²)` by
//! solving `(Id + λ(DxᵀDx + DyᵀDy)) S = I + λ(DxᵀSx + DyᵀSy)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradient::{diff_h, diff_h_adjoint, diff_v, diff_v_adjoint, GradientField};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_CG_TOL: f64 = 1e-8;
/// Largest plane (in pixels) the dense solver accepts.
pub const DENSE_MAX_PIXELS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Cg,
    Dense,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(Solver::Cg),
            "dense" => Ok(Solver::Dense),
            other => Err(Error::invalid(format!("unknown solver {other:?} (expected cg or dense)"))),
        }
    }
}

/// Input image, target gradients and solver settings. `sx` holds the
/// horizontal targets and `sy` the vertical ones, both shaped like `image`.
#[derive(Clone, Debug)]
pub struct ReconstructionProblem<T> {
    pub image: Tensor<T>,
    pub sx: Tensor<T>,
    pub sy: Tensor<T>,
    pub lambda: f64,
    pub solver: Solver,
    pub tol: f64,
    /// Defaults to `10·H·W` when `None`.
    pub max_iter: Option<usize>,
}

impl<T: Scalar> ReconstructionProblem<T> {
    pub fn new(image: Tensor<T>, sx: Tensor<T>, sy: Tensor<T>, lambda: f64) -> Result<Self> {
        let p = ReconstructionProblem {
            image,
            sx,
            sy,
            lambda,
            solver: Solver::Cg,
            tol: DEFAULT_CG_TOL,
            max_iter: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unpacks a six-channel field for an RGB image.
    pub fn from_field(image: Tensor<T>, field: &GradientField<T>, lambda: f64) -> Result<Self> {
        Self::new(image, field.horizontal(), field.vertical(), lambda)
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for t in [&self.sx, &self.sy] {
            if t.shape() != self.image.shape() {
                return Err(Error::ShapeMismatch {
                    op: "reconstruct",
                    left: self.image.shape(),
                    right: t.shape(),
                });
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("cg tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    fn max_iterations(&self) -> usize {
        let s = self.image.shape();
        self.max_iter.unwrap_or(10 * s.h * s.w).max(1)
    }
}

/// Unclamped solution plus solver statistics.
#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub image: Tensor<T>,
    /// CG iterations per plane (zero for the dense solver).
    pub iterations: Vec<usize>,
    /// Final relative residual per plane.
    pub residuals: Vec<f64>,
}

fn apply_plane<T: Scalar>(s: &[T], lambda: T, h: usize, w: usize, out: &mut [T], tmp: &mut [T], tmp2: &mut [T]) {
    diff_h(s, h, w, tmp);
    diff_h_adjoint(tmp, h, w, out);
    diff_v(s, h, w, tmp);
    diff_v_adjoint(tmp, h, w, tmp2);
    for ((o, &a), &v) in out.iter_mut().zip(tmp2.iter()).zip(s) {
        *o = v + lambda * (*o + a);
    }
}

fn rhs_plane<T: Scalar>(i: &[T], sx: &[T], sy: &[T], lambda: T, h: usize, w: usize) -> Vec<T> {
    let mut b = vec![T::zero(); h * w];
    let mut t = vec![T::zero(); h * w];
    diff_h_adjoint(sx, h, w, &mut b);
    diff_v_adjoint(sy, h, w, &mut t);
    for ((bv, &tv), &iv) in b.iter_mut().zip(&t).zip(i) {
        *bv = iv + lambda * (*bv + tv);
    }
    b
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x * y).to_f64_lossy()).sum()
}

/// The system operator `Id + λ(DxᵀDx + DyᵀDy)` applied plane by plane.
pub fn apply_system<T: Scalar>(s: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    let sh = s.shape();
    let mut out = Tensor::zeros(sh);
    let (mut tmp, mut tmp2) = (vec![T::zero(); sh.plane()], vec![T::zero(); sh.plane()]);
    for n in 0..sh.n {
        for c in 0..sh.c {
            apply_plane(s.plane(n, c), T::lit(lambda), sh.h, sh.w, out.plane_mut(n, c), &mut tmp, &mut tmp2);
        }
    }
    out.check_finite("apply_system")
}

/// Conjugate gradient from `x0 = I`, stopping at `‖r‖ ≤ tol·‖b‖`.
fn cg_plane<T: Scalar>(p: &ReconstructionProblem<T>, n: usize, c: usize) -> Result<(Vec<T>, usize, f64)> {
    let s = p.image.shape();
    let (h, w) = (s.h, s.w);
    let lambda = T::lit(p.lambda);
    let b = rhs_plane(p.image.plane(n, c), p.sx.plane(n, c), p.sy.plane(n, c), lambda, h, w);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = p.image.plane(n, c).to_vec();
    if bnorm == 0.0 {
        return Ok((vec![T::zero(); h * w], 0, 0.0));
    }
    let (mut ap, mut t1, mut t2) = (vec![T::zero(); h * w], vec![T::zero(); h * w], vec![T::zero(); h * w]);
    apply_plane(&x, lambda, h, w, &mut ap, &mut t1, &mut t2);
    let mut r: Vec<T> = b.iter().zip(&ap).map(|(&bv, &a)| bv - a).collect();
    let mut rr = dot(&r, &r);
    let target = p.tol * bnorm;
    if rr.sqrt() <= target {
        return Ok((x, 0, rr.sqrt() / bnorm));
    }
    let mut d = r.clone();
    let max_iter = p.max_iterations();
    for it in 1..=max_iter {
        apply_plane(&d, lambda, h, w, &mut ap, &mut t1, &mut t2);
        let dad = dot(&d, &ap);
        if !(dad > 0.0) {
            return Err(Error::NonFinite { op: "reconstruct (cg)" });
        }
        let alpha = T::lit(rr / dad);
        for ((xv, rv), (&dv, &av)) in x.iter_mut().zip(r.iter_mut()).zip(d.iter().zip(&ap)) {
            *xv += alpha * dv;
            *rv -= alpha * av;
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::NonFinite { op: "reconstruct (cg)" });
        }
        if rr_new.sqrt() <= target {
            return Ok((x, it, rr_new.sqrt() / bnorm));
        }
        let beta = T::lit(rr_new / rr);
        for (dv, &rv) in d.iter_mut().zip(&r) {
            *dv = rv + beta * *dv;
        }
        rr = rr_new;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

/// Solves every plane without clamping.
pub fn solve<T: Scalar>(p: &ReconstructionProblem<T>) -> Result<Solution<T>> {
    p.validate()?;
    match p.solver {
        Solver::Cg => {
            let s = p.image.shape();
            let planes: Vec<(usize, usize)> = (0..s.n).flat_map(|n| (0..s.c).map(move |c| (n, c))).collect();
            let solved = planes
                .par_iter()
                .map(|&(n, c)| cg_plane(p, n, c))
                .collect::<Result<Vec<_>>>()?;
            let mut data = Vec::with_capacity(s.len());
            let mut iterations = Vec::with_capacity(solved.len());
            let mut residuals = Vec::with_capacity(solved.len());
            for (x, it, res) in solved {
                data.extend_from_slice(&x);
                iterations.push(it);
                residuals.push(res);
            }
            Ok(Solution {
                image: Tensor::from_raw(s, data).check_finite("reconstruct")?,
                iterations,
                residuals,
            })
        }
        Solver::Dense => {
            let image = dense_oracle_solve(p)?;
            let planes = image.shape().n * image.shape().c;
            Ok(Solution {
                image,
                iterations: vec![0; planes],
                residuals: vec![0.0; planes],
            })
        }
    }
}

/// Solves and clamps the result to `[0, 1]`.
pub fn reconstruct<T: Scalar>(p: &ReconstructionProblem<T>) -> Result<Tensor<T>> {
    solve(p)?.image.map(|v| v.max(T::zero()).min(T::one()))
}

/// Explicit `(HW × HW)` forward-difference matrices with the last column
/// (horizontal) or row (vertical) zero.
fn difference_matrices(h: usize, w: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = h * w;
    let mut dx = DMatrix::zeros(n, n);
    let mut dy = DMatrix::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                dx[(i, i)] = -1.0;
                dx[(i, i + 1)] = 1.0;
            }
            if y + 1 < h {
                dy[(i, i)] = -1.0;
                dy[(i, i + w)] = 1.0;
            }
        }
    }
    (dx, dy)
}

/// Assembles the normal equations from explicit difference matrices and
/// solves them by Cholesky factorisation. Unclamped; planes up to 4096
/// pixels.
pub fn dense_oracle_solve<T: Scalar>(p: &ReconstructionProblem<T>) -> Result<Tensor<T>> {
    p.validate()?;
    let s = p.image.shape();
    let n = s.h * s.w;
    if n > DENSE_MAX_PIXELS {
        return Err(Error::invalid(format!(
            "dense solver limited to {DENSE_MAX_PIXELS} pixels per plane, got {}x{}",
            s.h, s.w
        )));
    }
    let (dx, dy) = difference_matrices(s.h, s.w);
    let a = DMatrix::identity(n, n) + (dx.transpose() * &dx + dy.transpose() * &dy) * p.lambda;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::invalid("dense solve: system is not positive definite"))?;

    let mut out = Vec::with_capacity(s.len());
    for nn in 0..s.n {
        for c in 0..s.c {
            let vec = |t: &Tensor<T>| DVector::from_iterator(n, t.plane(nn, c).iter().map(|v| v.to_f64_lossy()));
            let b = vec(&p.image) + (dx.transpose() * vec(&p.sx) + dy.transpose() * vec(&p.sy)) * p.lambda;
            out.extend(chol.solve(&b).iter().map(|&v| T::lit(v)));
        }
    }
    Tensor::from_vec(s, out)
}

/// `‖Dx S − Sx‖² + ‖Dy S − Sy‖²` summed over planes.
pub fn gradient_residual<T: Scalar>(p: &ReconstructionProblem<T>, s: &Tensor<T>) -> Result<f64> {
    let sh = s.shape();
    if sh != p.image.shape() {
        return Err(Error::ShapeMismatch {
            op: "gradient_residual",
            left: p.image.shape(),
            right: sh,
        });
    }
    let mut g = vec![T::zero(); sh.plane()];
    let mut total = 0.0;
    for n in 0..sh.n {
        for c in 0..sh.c {
            diff_h(s.plane(n, c), sh.h, sh.w, &mut g);
            total += g.iter().zip(p.sx.plane(n, c)).map(|(&a, &b)| (a - b).to_f64_lossy().powi(2)).sum::<f64>();
            diff_v(s.plane(n, c), sh.h, sh.w, &mut g);
            total += g.iter().zip(p.sy.plane(n, c)).map(|(&a, &b)| (a - b).to_f64_lossy().powi(2)).sum::<f64>();
        }
    }
    Ok(total)
}

/// `‖S − I‖²`.
pub fn color_residual<T: Scalar>(p: &ReconstructionProblem<T>, s: &Tensor<T>) -> Result<f64> {
    Ok(s.sub(&p.image)?.sum_sq())
}

/// The full objective at `s`.
pub fn objective<T: Scalar>(p: &ReconstructionProblem<T>, s: &Tensor<T>) -> Result<f64> {
    Ok(color_residual(p, s)? + p.lambda * gradient_residual(p, s)?)
}
