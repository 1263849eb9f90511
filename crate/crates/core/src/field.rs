use ndarray::Array2;
use num_complex::Complex64;

use crate::geometry::GridSpec;

/// Sampled complex optical amplitude on a square-pitch grid.
///
/// Arrays are indexed `[row, column] = [y, x]`. Intensities are `|a|^2` in
/// arbitrary units; the total energy is `sum |a|^2 * pitch^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    pub amplitude: Array2<Complex64>,
    pub pitch: f64,
    pub wavelength: f64,
}

impl ComplexField {
    pub fn zeros(grid: &GridSpec, wavelength: f64) -> Self {
        Self {
            amplitude: Array2::zeros(grid.shape()),
            pitch: grid.pitch_m,
            wavelength,
        }
    }

    pub fn from_fn(grid: &GridSpec, wavelength: f64, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let amplitude = Array2::from_shape_fn(grid.shape(), |(iy, ix)| f(grid.x(ix), grid.y(iy)));
        Self {
            amplitude,
            pitch: grid.pitch_m,
            wavelength,
        }
    }

    pub fn grid(&self) -> GridSpec {
        let (ny, nx) = self.amplitude.dim();
        GridSpec {
            nx,
            ny,
            pitch_m: self.pitch,
        }
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.amplitude.mapv(|a| a.norm_sqr())
    }

    pub fn energy(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }

    pub fn is_finite(&self) -> bool {
        self.amplitude
            .iter()
            .all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Raw dump as interleaved little-endian `f64` (re, im) pairs, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.amplitude.len() * 16);
        for a in self.amplitude.iter() {
            out.extend_from_slice(&a.re.to_le_bytes());
            out.extend_from_slice(&a.im.to_le_bytes());
        }
        out
    }
}
