//! CCD model: pixel binning, gain, Gaussian background, 12-bit quantization,
//! bucket sums and background statistics from dark frames.

use ndarray::{s, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Rectangle of detector pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelRegion {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRegion {
    /// `width x height` region centered on a `nx x ny` frame.
    pub fn centered(nx: usize, ny: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width > nx || height > ny {
            return Err(Error::Config(format!(
                "region {width}x{height} does not fit a {nx}x{ny} frame"
            )));
        }
        Ok(Self {
            x0: nx / 2 - width / 2,
            y0: ny / 2 - height / 2,
            width,
            height,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn check_inside(&self, nx: usize, ny: usize) -> Result<()> {
        if self.width == 0
            || self.height == 0
            || self.x0 + self.width > nx
            || self.y0 + self.height > ny
        {
            return Err(Error::Domain(format!(
                "region {}x{} at ({}, {}) lies outside a {nx}x{ny} frame",
                self.width, self.height, self.x0, self.y0
            )));
        }
        Ok(())
    }

    /// The same region expressed in units `factor` times finer.
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            x0: self.x0 * factor,
            y0: self.y0 * factor,
            width: self.width * factor,
            height: self.height * factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcdParams {
    pub pixel_pitch_m: f64,
    pub bit_depth: u32,
    pub gain_counts_per_au: f64,
    pub background_mean_counts: f64,
    pub background_sigma_counts: f64,
}

impl CcdParams {
    pub fn saturation(&self) -> f64 {
        ((1u64 << self.bit_depth) - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::Config(format!(
                "bit_depth must be in 1..=16, got {}",
                self.bit_depth
            )));
        }
        if !(self.pixel_pitch_m > 0.0) {
            return Err(Error::Config("pixel_pitch_m must be positive".into()));
        }
        if !(self.gain_counts_per_au.is_finite() && self.gain_counts_per_au >= 0.0) {
            return Err(Error::Config("gain must be finite and non-negative".into()));
        }
        if !(self.background_sigma_counts >= 0.0) || !self.background_mean_counts.is_finite() {
            return Err(Error::Config("background_sigma_counts must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of simulation samples per detector pixel along each axis.
    pub fn binning(&self, grid_pitch: f64) -> Result<usize> {
        let k = self.pixel_pitch_m / grid_pitch;
        let kr = k.round();
        if kr < 1.0 || (k - kr).abs() > 1e-6 * k {
            return Err(Error::Config(format!(
                "pixel pitch {:e} m is not an integer multiple of the grid pitch {:e} m",
                self.pixel_pitch_m, grid_pitch
            )));
        }
        Ok(kr as usize)
    }
}

/// Gain that puts the brightest pilot intensity at `target` counts.
pub fn calibrate_gain(
    peak_intensity: f64,
    target_counts: f64,
    background_mean: f64,
) -> Result<f64> {
    if !(peak_intensity > 0.0) {
        return Err(Error::Domain(
            "pilot shots carry no light; cannot calibrate gain".into(),
        ));
    }
    Ok((target_counts - background_mean).max(1.0) / peak_intensity)
}

/// Sum `k x k` blocks; trailing rows and columns that do not fill a block are dropped.
pub fn bin(intensity: &Array2<f64>, k: usize) -> Array2<f64> {
    if k == 1 {
        return intensity.clone();
    }
    let (ny, nx) = intensity.dim();
    Array2::from_shape_fn((ny / k, nx / k), |(y, x)| {
        intensity
            .slice(s![y * k..(y + 1) * k, x * k..(x + 1) * k])
            .sum()
    })
}

pub fn crop(map: &Array2<f64>, region: &PixelRegion) -> Result<Array2<f64>> {
    let (ny, nx) = map.dim();
    region.check_inside(nx, ny)?;
    Ok(map
        .slice(s![
            region.y0..region.y0 + region.height,
            region.x0..region.x0 + region.width
        ])
        .to_owned())
}

/// Convert a pixel-pitch intensity map into detector counts.
///
/// With `quantize` the counts are rounded and clamped to the ADC range;
/// otherwise the analog values are returned.
pub fn record_frame(
    intensity: &Array2<f64>,
    params: &CcdParams,
    quantize: bool,
    seed: u64,
) -> Array2<f64> {
    let sat = params.saturation();
    let mut rng = seed::rng(seed);
    let noise = (params.background_sigma_counts > 0.0).then(|| {
        Normal::new(
            params.background_mean_counts,
            params.background_sigma_counts,
        )
        .expect("sigma > 0")
    });
    intensity.mapv(|i| {
        let bg = match &noise {
            Some(n) => n.sample(&mut rng),
            None => params.background_mean_counts,
        };
        let c = i * params.gain_counts_per_au + bg;
        if quantize {
            c.round().clamp(0.0, sat)
        } else {
            c
        }
    })
}

pub fn bucket_sum(frame: &Array2<f64>, region: &PixelRegion) -> Result<f64> {
    Ok(crop(frame, region)?.sum())
}

/// Paired measurement of one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub shot_index: u64,
    /// Reference-arm counts.
    pub map_r: Array2<f64>,
    /// Bucket counts of the Test arm.
    pub bucket_t: f64,
}

/// Pooled background mean and variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackgroundStats {
    pub mean: f64,
    pub variance: f64,
}

pub const MIN_DARK_FRAMES: usize = 100;

/// Pooled per-pixel statistics of a set of dark frames.
pub fn background_model(dark_frames: &[Array2<f64>]) -> Result<BackgroundStats> {
    if dark_frames.len() < MIN_DARK_FRAMES {
        return Err(Error::InsufficientData(format!(
            "{} dark frames, need at least {MIN_DARK_FRAMES}",
            dark_frames.len()
        )));
    }
    Ok(pooled(dark_frames.iter().flat_map(|f| f.iter().copied())))
}

fn pooled(values: impl Iterator<Item = f64>) -> BackgroundStats {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    BackgroundStats {
        mean,
        variance: if n > 1.0 { m2 / (n - 1.0) } else { 0.0 },
    }
}

/// Background of both detectors, estimated from dark shot records.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Background {
    /// Per-pixel statistics of the Reference frames.
    pub r: BackgroundStats,
    /// Statistics of the bucket value.
    pub t: BackgroundStats,
}

impl Background {
    pub fn from_darks(darks: &[ShotRecord]) -> Result<Self> {
        let maps: Vec<Array2<f64>> = darks.iter().map(|d| d.map_r.clone()).collect();
        let r = background_model(&maps)?;
        let t = pooled(darks.iter().map(|d| d.bucket_t));
        Ok(Self { r, t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(gain: f64, mean: f64, sigma: f64) -> CcdParams {
        CcdParams {
            pixel_pitch_m: 16e-6,
            bit_depth: 12,
            gain_counts_per_au: gain,
            background_mean_counts: mean,
            background_sigma_counts: sigma,
        }
    }

    #[test]
    fn dark_frame_mean() {
        let p = params(1.0, 100.0, 5.0);
        let f = record_frame(&Array2::zeros((128, 128)), &p, true, 3);
        let n = f.len() as f64;
        assert!((f.mean().unwrap() - 100.0).abs() < 3.0 * 5.0 / n.sqrt());
    }

    #[test]
    fn saturation_clamps() {
        let p = params(10.0, 0.0, 0.0);
        let f = record_frame(&Array2::from_elem((4, 4), 1000.0), &p, true, 0);
        assert!(f.iter().all(|&c| c == 4095.0));
        let analog = record_frame(&Array2::from_elem((4, 4), 1000.0), &p, false, 0);
        assert!(analog.iter().all(|&c| c == 10_000.0));
    }

    #[test]
    fn integer_passthrough() {
        let p = params(1.0, 0.0, 0.0);
        let i = Array2::from_shape_fn((7, 9), |(y, x)| (y * 9 + x) as f64);
        assert_eq!(record_frame(&i, &p, true, 1), i);
    }

    #[test]
    fn bucket_examples() {
        let region = PixelRegion::centered(128, 128, 110, 110).unwrap();
        assert_eq!(
            bucket_sum(&Array2::zeros((128, 128)), &region).unwrap(),
            0.0
        );
        assert_eq!(
            bucket_sum(&Array2::from_elem((128, 128), 3.0), &region).unwrap(),
            36_300.0
        );
        let off = PixelRegion { x0: 100, ..region };
        assert!(bucket_sum(&Array2::zeros((128, 128)), &off).is_err());
    }

    #[test]
    fn binning_sums_blocks() {
        let i = Array2::from_elem((9, 8), 1.0);
        let b = bin(&i, 2);
        assert_eq!(b.dim(), (4, 4));
        assert!(b.iter().all(|&v| v == 4.0));
        let p = params(1.0, 0.0, 0.0);
        assert_eq!(p.binning(8e-6).unwrap(), 2);
        assert!(p.binning(7e-6).is_err());
    }

    #[test]
    fn background_recovery() {
        let p = params(1.0, 100.0, 6.0);
        let darks: Vec<_> = (0..120)
            .map(|s| record_frame(&Array2::zeros((32, 32)), &p, false, s))
            .collect();
        let m = background_model(&darks).unwrap();
        assert!((m.mean / 100.0 - 1.0).abs() < 0.05);
        assert!((m.variance / 36.0 - 1.0).abs() < 0.05);
        assert!(background_model(&darks[..50]).is_err());
        let flat: Vec<_> = (0..100)
            .map(|s| record_frame(&Array2::zeros((8, 8)), &params(1.0, 100.0, 0.0), true, s))
            .collect();
        assert_eq!(
            background_model(&flat).unwrap(),
            BackgroundStats {
                mean: 100.0,
                variance: 0.0
            }
        );
    }

    #[test]
    fn gain_calibration() {
        let g = calibrate_gain(12.0, 3000.0, 100.0).unwrap();
        assert!((g * 12.0 + 100.0 - 3000.0).abs() < 1e-9);
        assert!(calibrate_gain(0.0, 3000.0, 100.0).is_err());
    }
}
