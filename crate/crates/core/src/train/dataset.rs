//! Paired training images and random patch sampling.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradient::{forward_gradients, GradientField};
use crate::imageio::{is_image_path, load_image};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Subdirectory names of a pair directory.
pub const INPUT_DIR: &str = "input";
pub const STYLE_DIR: &str = "style";

/// `(input, stylized)` image pairs, each `(1, 3, H, W)` in [0, 1].
#[derive(Clone, Debug)]
pub struct PairDataset<T> {
    pairs: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> PairDataset<T> {
    pub fn from_pairs(pairs: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for (i, (a, b)) in pairs.iter().enumerate() {
            if a.shape() != b.shape() || a.shape().n != 1 || a.shape().c != 3 {
                return Err(Error::invalid(format!(
                    "pair {i}: input {} and style {} must be matching single RGB images",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(PairDataset { pairs })
    }

    /// Pairs where the target is the input itself.
    pub fn identity(images: Vec<Tensor<T>>) -> Result<Self> {
        Self::from_pairs(images.into_iter().map(|i| (i.clone(), i)).collect())
    }

    /// Loads `dir/input/<name>` with `dir/style/<name>` for every image in
    /// `dir/input`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let input_dir = dir.join(INPUT_DIR);
        let mut names: Vec<PathBuf> = std::fs::read_dir(&input_dir)
            .map_err(|e| Error::io(&input_dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&input_dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| is_image_path(p))
            .collect();
        names.sort();
        let pairs = names
            .iter()
            .map(|p| {
                let style = dir.join(STYLE_DIR).join(p.file_name().expect("file entry"));
                let a = load_image(p)?;
                let b = load_image(&style)?;
                if a.shape() != b.shape() {
                    return Err(Error::invalid(format!(
                        "{} and {} differ in size",
                        p.display(),
                        style.display()
                    )));
                }
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        if pairs.is_empty() {
            return Err(Error::invalid(format!("no images found in {}", input_dir.display())));
        }
        Self::from_pairs(pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.pairs
    }
}

/// Location of one sampled patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLocation {
    pub image: usize,
    pub top: usize,
    pub left: usize,
}

/// Draws `batch` patch locations: uniform over images, then uniform over
/// valid offsets.
pub fn sample_locations<T: Scalar, R: Rng + ?Sized>(
    ds: &PairDataset<T>,
    patch: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<PatchLocation>> {
    for (i, (a, _)) in ds.pairs.iter().enumerate() {
        let s = a.shape();
        if s.h < patch || s.w < patch {
            return Err(Error::invalid(format!(
                "image {i} is {}x{}, smaller than the {patch}px patch",
                s.h, s.w
            )));
        }
    }
    Ok((0..batch)
        .map(|_| {
            let image = rng.gen_range(0..ds.len());
            let s = ds.pairs[image].0.shape();
            PatchLocation {
                image,
                top: rng.gen_range(0..=s.h - patch),
                left: rng.gen_range(0..=s.w - patch),
            }
        })
        .collect())
}

/// Co-located input/target patches converted to gradient fields, each
/// `(batch, 6, patch, patch)`.
pub fn sample_patch_batch<T: Scalar, R: Rng + ?Sized>(
    ds: &PairDataset<T>,
    patch: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(GradientField<T>, GradientField<T>)> {
    let locs = sample_locations(ds, patch, batch, rng)?;
    let mut inputs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    for l in locs {
        let (a, b) = &ds.pairs[l.image];
        inputs.push(a.crop(l.top, l.left, patch, patch)?);
        targets.push(b.crop(l.top, l.left, patch, patch)?);
    }
    Ok((
        forward_gradients(&Tensor::stack(&inputs)?)?,
        forward_gradients(&Tensor::stack(&targets)?)?,
    ))
}
