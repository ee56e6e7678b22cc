//! Synthetic style operators used to manufacture `(input, stylized)`
//! training pairs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imageio::{is_image_path, load_image, save_image};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Names accepted by [`StyleOp::from_str`]; `posterize-N` takes any N ≥ 2.
pub const STYLE_NAMES: [&str; 5] = ["identity", "posterize-N", "smooth", "exaggerate", "cartoon"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleOp {
    Identity,
    /// Quantise every channel to `levels` evenly spaced values.
    Posterize(u32),
    /// Edge-preserving smoothing: repeated self-guided filtering.
    Smooth,
    /// Unsharp masking, which amplifies gradient magnitudes.
    Exaggerate,
    /// Smoothing followed by 6-level posterisation.
    Cartoon,
}

impl FromStr for StyleOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || {
            Error::invalid(format!(
                "unknown style operator {s:?}; available: {}",
                STYLE_NAMES.join(", ")
            ))
        };
        match s {
            "identity" => Ok(StyleOp::Identity),
            "smooth" => Ok(StyleOp::Smooth),
            "exaggerate" => Ok(StyleOp::Exaggerate),
            "cartoon" => Ok(StyleOp::Cartoon),
            _ => {
                let n = s.strip_prefix("posterize-").ok_or_else(unknown)?;
                match n.parse::<u32>() {
                    Ok(levels) if levels >= 2 => Ok(StyleOp::Posterize(levels)),
                    _ => Err(unknown()),
                }
            }
        }
    }
}

impl fmt::Display for StyleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StyleOp::Identity => write!(f, "identity"),
            StyleOp::Posterize(n) => write!(f, "posterize-{n}"),
            StyleOp::Smooth => write!(f, "smooth"),
            StyleOp::Exaggerate => write!(f, "exaggerate"),
            StyleOp::Cartoon => write!(f, "cartoon"),
        }
    }
}

const GUIDED_RADIUS: usize = 3;
const GUIDED_EPS: f64 = 0.01;
const GUIDED_PASSES: usize = 3;
const UNSHARP_RADIUS: usize = 2;
const UNSHARP_AMOUNT: f64 = 1.5;

impl StyleOp {
    /// Applies the operator to every plane of an image in [0, 1]; the
    /// result is clamped to [0, 1].
    pub fn apply<T: Scalar>(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let s = img.shape();
        if s.c != 3 {
            return Err(Error::invalid(format!("style operators expect RGB images, got shape {s}")));
        }
        if *self == StyleOp::Identity {
            return Ok(img.clone());
        }
        let mut out = Vec::with_capacity(s.len());
        for n in 0..s.n {
            for c in 0..3 {
                let plane: Vec<f64> = img.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
                let styled = match *self {
                    StyleOp::Identity => unreachable!(),
                    StyleOp::Posterize(levels) => posterize(&plane, levels),
                    StyleOp::Smooth => smooth(&plane, s.h, s.w),
                    StyleOp::Exaggerate => unsharp(&plane, s.h, s.w),
                    StyleOp::Cartoon => posterize(&smooth(&plane, s.h, s.w), 6),
                };
                out.extend(styled.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))));
            }
        }
        Tensor::from_vec(s, out)
    }
}

/// Writes `out/input/<name>` (a re-encoded copy) and `out/style/<name>`
/// for every image in `input_dir`, the layout read by
/// [`PairDataset::from_dir`](crate::train::PairDataset::from_dir). Returns
/// the file names written, sorted.
pub fn make_pairs(input_dir: impl AsRef<Path>, op: StyleOp, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let (input_dir, out) = (input_dir.as_ref(), out.as_ref());
    let mut files: Vec<PathBuf> = std::fs::read_dir(input_dir)
        .map_err(|e| Error::io(input_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(input_dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG/PPM images in {}", input_dir.display())));
    }
    let (in_dir, style_dir) = (out.join(crate::train::INPUT_DIR), out.join(crate::train::STYLE_DIR));
    for d in [&in_dir, &style_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut names = Vec::with_capacity(files.len());
    for f in &files {
        let img = load_image::<f64>(f)?;
        let name = PathBuf::from(f.file_name().expect("directory entry"));
        save_image(&img, in_dir.join(&name))?;
        save_image(&op.apply(&img)?, style_dir.join(&name))?;
        names.push(name);
    }
    Ok(names)
}

fn posterize(p: &[f64], levels: u32) -> Vec<f64> {
    let k = (levels - 1) as f64;
    p.iter().map(|&v| (v.clamp(0.0, 1.0) * k).round() / k).collect()
}

/// Mean over a `(2r+1)²` window clipped to the image.
fn box_mean(p: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        let mut prefix = vec![0.0; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x];
        }
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r + 1).min(w));
            rows[y * w + x] = (prefix[b] - prefix[a]) / (b - a) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        let mut prefix = vec![0.0; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x];
        }
        for y in 0..h {
            let (a, b) = (y.saturating_sub(r), (y + r + 1).min(h));
            out[y * w + x] = (prefix[b] - prefix[a]) / (b - a) as f64;
        }
    }
    out
}

/// Self-guided filter: locally linear fit `q = a·p + b`.
fn guided(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let r = GUIDED_RADIUS;
    let mean = box_mean(p, h, w, r);
    let sq: Vec<f64> = p.iter().map(|v| v * v).collect();
    let mean_sq = box_mean(&sq, h, w, r);
    let a: Vec<f64> = mean
        .iter()
        .zip(&mean_sq)
        .map(|(&m, &m2)| {
            let var = (m2 - m * m).max(0.0);
            var / (var + GUIDED_EPS)
        })
        .collect();
    let b: Vec<f64> = mean.iter().zip(&a).map(|(&m, &a)| m - a * m).collect();
    let (ma, mb) = (box_mean(&a, h, w, r), box_mean(&b, h, w, r));
    p.iter().zip(ma.iter().zip(&mb)).map(|(&v, (&a, &b))| a * v + b).collect()
}

fn smooth(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut q = p.to_vec();
    for _ in 0..GUIDED_PASSES {
        q = guided(&q, h, w);
    }
    q
}

fn unsharp(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let blur = box_mean(p, h, w, UNSHARP_RADIUS);
    p.iter().zip(&blur).map(|(&v, &b)| v + UNSHARP_AMOUNT * (v - b)).collect()
}
