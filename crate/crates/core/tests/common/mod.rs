#![allow(dead_code)]

use std::f64::consts::PI;

use ghostcorr::fft;
use ghostcorr::{ComplexField, GridSpec, ObjectShape, RunConfig};
use ndarray::Array2;
use num_complex::Complex64;

pub const LAMBDA: f64 = 1064e-9;

/// Laboratory geometry on a coarse 128x128 grid of 100 um samples with large
/// speckles; a few hundred shots run in seconds.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::laboratory();
    cfg.grid = GridSpec::new(128, 128, 100e-6).unwrap();
    cfg.ccd.pixel_pitch_m = 100e-6;
    cfg.ccd.bucket_width_px = 40;
    cfg.ccd.bucket_height_px = 40;
    cfg.ccd.r_window_width_px = 32;
    cfg.ccd.r_window_height_px = 32;
    cfg.speckle.coherence_diameter_m = 640e-6;
    cfg.object = ObjectShape::CircularHole { diameter_m: 2e-3 };
    cfg.run.shots = 200;
    cfg.run.dark_frames = 100;
    cfg.pipeline.pilot_shots = 4;
    cfg
}

pub fn grid(n: usize, pitch: f64) -> GridSpec {
    GridSpec::new(n, n, pitch).unwrap()
}

pub fn spectrum(f: &ComplexField) -> Array2<Complex64> {
    let mut a = f.amplitude.clone();
    fft::fft2(&mut a);
    a
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

/// Every `step`-th sample in both directions.
pub fn subsample(map: &Array2<f64>, step: usize) -> Vec<f64> {
    map.indexed_iter()
        .filter(|((y, x), _)| y % step == 0 && x % step == 0)
        .map(|(_, &v)| v)
        .collect()
}

pub fn rel_rms(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Proptest configuration with a fixed RNG seed, so statistical properties
/// are checked on the same draws every run.
pub fn fixed_cases(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x6c05_7c0a),
        failure_persistence: None,
        ..Default::default()
    }
}

pub fn random_field(g: &GridSpec, seed: u64) -> ComplexField {
    let mut s = seed;
    let mut next = move || {
        s = ghostcorr::seed::mix64(s.wrapping_add(0x9e37_79b9_7f4a_7c15));
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let amplitude = Array2::from_shape_simple_fn(g.shape(), || Complex64::new(next(), next()));
    ComplexField {
        amplitude,
        pitch: g.pitch_m,
        wavelength: LAMBDA,
    }
}

/// Fresnel propagation by explicit summation: the transfer function is
/// inverted with direct DFT sums into a kernel, which is then applied as a
/// circular Huygens sum over every source sample.
pub fn huygens_oracle(field: &ComplexField, z: f64) -> Array2<Complex64> {
    let (ny, nx) = field.amplitude.dim();
    let kernel_1d = |n: usize| -> Vec<Complex64> {
        let freq = |k: usize| {
            let k = if k <= n / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            k / (n as f64 * field.pitch)
        };
        (0..n)
            .map(|m| {
                (0..n)
                    .map(|k| {
                        let f = freq(k);
                        Complex64::from_polar(1.0, -PI * field.wavelength * z * f * f)
                            * Complex64::from_polar(1.0, 2.0 * PI * (k * m) as f64 / n as f64)
                    })
                    .sum::<Complex64>()
                    / n as f64
            })
            .collect()
    };
    let (kx, ky) = (kernel_1d(nx), kernel_1d(ny));
    Array2::from_shape_fn((ny, nx), |(y, x)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((sy, sx), a) in field.amplitude.indexed_iter() {
            acc += a * ky[(y + ny - sy) % ny] * kx[(x + nx - sx) % nx];
        }
        acc
    })
}
