//! Numbered-frame sequences and the inter-frame consistency metric.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{is_image_path, load_image, save_image};
use crate::pipeline::{stylize, StylizeOptions};
use crate::scalar::Scalar;
use crate::stylenet::StyleNet;
use crate::tensor::Tensor;

/// Same-sized `(1, 3, H, W)` frames in order.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<T> {
    frames: Vec<Tensor<T>>,
}

/// The last run of digits in a file stem, e.g. `frame_000012` → 12.
fn frame_index(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end]
        .rfind(|c: char| !c.is_ascii_digit())
        .map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

impl<T: Scalar> FrameSequence<T> {
    pub fn new(frames: Vec<Tensor<T>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let s = first.shape();
            if s.n != 1 || s.c != 3 {
                return Err(Error::invalid(format!("frames must be single RGB images, got shape {s}")));
            }
            if let Some(f) = frames.iter().find(|f| f.shape() != s) {
                return Err(Error::ShapeMismatch {
                    op: "FrameSequence",
                    left: s,
                    right: f.shape(),
                });
            }
        }
        Ok(FrameSequence { frames })
    }

    /// Loads every image in `dir` whose name contains a frame number,
    /// ordered by that number.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut entries: Vec<(u64, PathBuf)> = Vec::new();
        for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = e.map_err(|e| Error::io(dir, e))?.path();
            if !is_image_path(&p) {
                continue;
            }
            if let Some(i) = frame_index(&p) {
                entries.push((i, p));
            }
        }
        entries.sort();
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!(
                "frames {} and {} share index {}",
                w[0].1.display(),
                w[1].1.display(),
                w[0].0
            )));
        }
        if entries.is_empty() {
            return Err(Error::invalid(format!("no numbered frames in {}", dir.display())));
        }
        let frames = entries.iter().map(|(_, p)| load_image(p)).collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    /// Writes `frame_000001.<ext>`, `frame_000002.<ext>`, … into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, ext: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = dir.join(format!("frame_{:06}.{ext}", i + 1));
                save_image(f, &p)?;
                Ok(p)
            })
            .collect()
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The same spatial window of every frame.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(self.frames.iter().map(|f| f.crop(top, left, h, w)).collect::<Result<_>>()?)
    }
}

/// Element `k` is the mean squared difference between frames `k+1` and `k`.
pub fn interframe_mse<T: Scalar>(seq: &FrameSequence<T>) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::invalid("interframe_mse needs at least two frames"));
    }
    seq.frames.windows(2).map(|w| w[1].mse(&w[0])).collect()
}

/// Stylizes each frame independently.
pub fn stylize_sequence<T: Scalar>(
    net: &StyleNet<T>,
    seq: &FrameSequence<T>,
    opts: &StylizeOptions,
) -> Result<FrameSequence<T>> {
    let frames = seq
        .frames
        .iter()
        .map(|f| Ok(stylize(net, f, opts)?.image))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Writes `frame_index,mse` rows; the index is that of the later frame of
/// each pair (1-based, matching saved file names).
pub fn write_mse_csv(path: impl AsRef<Path>, mse: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["frame_index", "mse"]).map_err(csv_err)?;
    for (k, m) in mse.iter().enumerate() {
        w.write_record([(k + 2).to_string(), m.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
