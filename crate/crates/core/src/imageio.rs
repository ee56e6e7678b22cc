//! 8-bit RGB image files <-> `(1, 3, H, W)` tensors in [0, 1].
//!
//! PNG and PPM/PNM are read through the `image` crate; writing picks the
//! format from the extension (`.ppm`/`.pnm` give ASCII P3, anything else PNG).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads an RGB (or greyscale) image. Images with an alpha channel are
/// rejected.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    if img.color().has_alpha() {
        return Err(image_err(path, "images with an alpha channel are not supported; flatten to RGB first"));
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(image_err(path, "image has a zero dimension"));
    }
    let raw = rgb.as_raw();
    let scale = 1.0 / 255.0;
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        T::lit(raw[(y * w + x) * 3 + c] as f64 * scale)
    }))
}

/// Maps [0, 1] to 0..=255 by clamping and rounding half away from zero.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved 8-bit RGB bytes of sample `n`.
pub fn to_rgb8<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.c != 3 || n >= s.n {
        return Err(Error::invalid(format!("cannot write sample {n} of shape {s} as an RGB image")));
    }
    let mut out = vec![0u8; s.h * s.w * 3];
    for c in 0..3 {
        for (i, &v) in t.plane(n, c).iter().enumerate() {
            out[i * 3 + c] = quantize(v);
        }
    }
    Ok(out)
}

/// Writes the first sample of a `(N, 3, H, W)` tensor.
pub fn save_image<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Shape { h, w, .. } = t.shape();
    let bytes = to_rgb8(t, 0)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let res = match ext.as_deref() {
        Some("ppm") | Some("pnm") => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Ascii))
            .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8),
        _ => PngEncoder::new(out).write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8),
    };
    res.map_err(|e| image_err(path, e))
}

/// True for file names this module can read.
pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png") | Some("ppm") | Some("pnm")
    )
}
