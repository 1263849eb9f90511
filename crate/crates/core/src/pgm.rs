use std::path::Path;

use ndarray::Array2;

use crate::error::{IoContext, Result};

/// Linear rescale of a map to the full 16-bit range. Returns the image and
/// the `(min, max)` values mapped to 0 and 65535.
pub fn scale_to_u16(map: &Array2<f64>) -> (Array2<u16>, f64, f64) {
    let finite = || map.iter().copied().filter(|v| v.is_finite());
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return (Array2::zeros(map.dim()), lo, hi);
    }
    let scale = 65535.0 / (hi - lo);
    let img = map.mapv(|v| {
        if v.is_finite() {
            ((v - lo) * scale).round() as u16
        } else {
            0
        }
    });
    (img, lo, hi)
}

/// Binary (P5) PGM with maxval 65535; samples are big-endian.
pub fn encode_pgm16(img: &Array2<u16>) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * w * h);
    for v in img.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: &Path, img: &Array2<u16>) -> Result<()> {
    std::fs::write(path, encode_pgm16(img)).at(path)
}

/// Write counts that are already integral, saturating outside `0..=65535`.
pub fn write_counts(path: &Path, counts: &Array2<f64>) -> Result<()> {
    write_pgm16(path, &counts.mapv(|v| v.round().clamp(0.0, 65535.0) as u16))
}
