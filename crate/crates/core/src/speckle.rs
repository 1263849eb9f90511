//! Pseudo-thermal seed fields.
//!
//! One realization is circular complex Gaussian white noise shaped in the
//! spatial-frequency domain by a Gaussian pupil. For a pupil
//! `exp(-f^2 / (2 s^2))` the intensity autocorrelation is
//! `|gamma(r)|^2 = exp(-2 pi^2 s^2 r^2)`, whose FWHM equals the coherence
//! diameter when `s = sqrt(2 ln 2) / (pi * coherence_diameter)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::ComplexField;
use crate::geometry::GridSpec;
use crate::seed::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeckleParams {
    /// FWHM of the intensity autocorrelation.
    pub coherence_diameter_m: f64,
    pub mean_intensity_au: f64,
    /// Independent temporal modes summed within one shot.
    pub temporal_modes: u32,
    /// Optional Gaussian amplitude envelope `exp(-r^2 / w^2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_radius_m: Option<f64>,
}

impl SpeckleParams {
    pub fn laboratory() -> Self {
        Self {
            coherence_diameter_m: 320e-6,
            mean_intensity_au: 1.0,
            temporal_modes: 1,
            envelope_radius_m: None,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.mean_intensity_au.is_finite() && self.mean_intensity_au > 0.0) {
            return Err(Error::Config("mean_intensity_au must be positive".into()));
        }
        if self.temporal_modes < 1 {
            return Err(Error::Config("temporal_modes must be at least 1".into()));
        }
        if !(self.coherence_diameter_m > 2.0 * grid.pitch_m) {
            return Err(Error::Config(format!(
                "coherence diameter {:e} m is not resolvable at pitch {:e} m (needs > 2 samples)",
                self.coherence_diameter_m, grid.pitch_m
            )));
        }
        if let Some(w) = self.envelope_radius_m {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config("envelope_radius_m must be positive".into()));
            }
        }
        Ok(())
    }

    fn single_spatial_mode(&self, grid: &GridSpec) -> bool {
        self.coherence_diameter_m >= grid.min_window()
    }
}

/// Pupil width `s` in cycles per meter for a given coherence diameter.
pub fn pupil_sigma(coherence_diameter: f64) -> f64 {
    (2.0 * std::f64::consts::LN_2).sqrt() / (std::f64::consts::PI * coherence_diameter)
}

/// Expected `|A(q)|^2` per unitary FFT bin for one realization carrying
/// `mean_intensity` per pixel.
pub fn seed_spectrum(params: &SpeckleParams, grid: &GridSpec, mean_intensity: f64) -> Array2<f64> {
    let n = (grid.nx * grid.ny) as f64;
    if params.single_spatial_mode(grid) {
        let mut s = Array2::zeros(grid.shape());
        s[[0, 0]] = mean_intensity * n;
        return s;
    }
    let sigma = pupil_sigma(params.coherence_diameter_m);
    let f2 = fft::radial_frequency_sq(grid.nx, grid.ny, grid.pitch_m);
    let mut s = f2.mapv(|f2| (-f2 / (sigma * sigma)).exp());
    let total: f64 = s.sum();
    s.mapv_inplace(|v| v * mean_intensity * n / total);
    s
}

fn envelope(params: &SpeckleParams, field: &mut ComplexField) {
    if let Some(w) = params.envelope_radius_m {
        let grid = field.grid();
        for ((iy, ix), a) in field.amplitude.indexed_iter_mut() {
            let r2 = grid.x(ix).powi(2) + grid.y(iy).powi(2);
            *a *= (-r2 / (w * w)).exp();
        }
    }
}

fn realize(spectrum: &Array2<f64>, grid: &GridSpec, wavelength: f64, seed: u64) -> ComplexField {
    let mut rng = seed::rng(seed);
    let mut amp = spectrum.mapv(|s| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * (0.5 * s).sqrt()
    });
    fft::ifft2(&mut amp);
    ComplexField {
        amplitude: amp,
        pitch: grid.pitch_m,
        wavelength,
    }
}

/// One temporal-mode realization of the seed field.
pub fn generate_speckle_field(
    params: &SpeckleParams,
    grid: &GridSpec,
    wavelength: f64,
    seed: u64,
) -> Result<ComplexField> {
    params.validate(grid)?;
    let spectrum = seed_spectrum(params, grid, params.mean_intensity_au);
    let mut field = realize(&spectrum, grid, wavelength, seed);
    envelope(params, &mut field);
    Ok(field)
}

/// Temporal-mode realizations for one shot, each carrying
/// `mean_intensity / temporal_modes`.
pub fn generate_mode_fields(
    params: &SpeckleParams,
    grid: &GridSpec,
    wavelength: f64,
    shot_seed: u64,
) -> Result<Vec<ComplexField>> {
    params.validate(grid)?;
    let per_mode = params.mean_intensity_au / params.temporal_modes as f64;
    let spectrum = seed_spectrum(params, grid, per_mode);
    Ok((0..params.temporal_modes)
        .map(|m| {
            let mut f = realize(
                &spectrum,
                grid,
                wavelength,
                seed::stream_seed(shot_seed, Stream::Speckle(m)),
            );
            envelope(params, &mut f);
            f
        })
        .collect())
}

/// Shot intensity summed over `temporal_modes` independent realizations;
/// per-pixel statistics are multithermal with `mu = temporal_modes`.
pub fn generate_multimode_intensity(
    params: &SpeckleParams,
    grid: &GridSpec,
    wavelength: f64,
    shot_seed: u64,
) -> Result<Array2<f64>> {
    let fields = generate_mode_fields(params, grid, wavelength, shot_seed)?;
    let mut total = Array2::zeros(grid.shape());
    for f in &fields {
        total += &f.intensity();
    }
    Ok(total)
}

/// Normalized intensity-fluctuation autocorrelation of a map, lag zero at `(0, 0)`.
pub fn normalized_autocorrelation(intensity: &Array2<f64>) -> Option<Array2<f64>> {
    let mean = intensity.mean()?;
    let fluct = intensity.mapv(|v| v - mean);
    let ac = fft::autocorrelation(&fluct);
    let zero = ac[[0, 0]];
    let scale = intensity
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .powi(2)
        * intensity.len() as f64;
    if !(zero > 1e-24 * scale) {
        return None;
    }
    Some(ac.mapv(|v| v / zero))
}

/// Radius (in samples) where a decaying profile of `(r^2, c)` points first
/// drops to one half, interpolating `ln c` linearly in `r^2` (exact for a
/// Gaussian).
fn half_width(profile: &[(f64, f64)]) -> Option<f64> {
    for w in profile.windows(2) {
        let ((r0, a), (r1, b)) = (w[0], w[1]);
        if b <= 0.5 {
            let r2 = if a > 0.0 && b > 0.0 {
                r0 + (a.ln() - 0.5f64.ln()) / (a.ln() - b.ln()) * (r1 - r0)
            } else {
                let (s0, s1) = (r0.sqrt(), r1.sqrt());
                return Some(s0 + (a - 0.5) / (a - b) * (s1 - s0));
            };
            return Some(r2.sqrt());
        }
    }
    None
}

/// FWHM of the spatial intensity autocorrelation, averaged over both axes.
pub fn estimate_coherence_diameter(field: &ComplexField) -> Result<f64> {
    coherence_diameter_of_intensity(&field.intensity(), field.pitch)
}

/// FWHM of the azimuthally averaged autocorrelation. Lags are binned by
/// rounded radius, and each bin is placed at its mean squared radius.
pub fn coherence_diameter_of_intensity(intensity: &Array2<f64>, pitch: f64) -> Result<f64> {
    let ac = normalized_autocorrelation(intensity)
        .ok_or_else(|| Error::Unresolved("intensity has no fluctuations".into()))?;
    let (ny, nx) = ac.dim();
    let rmax = nx.min(ny) / 2;
    let mut sum_c = vec![0.0; rmax];
    let mut sum_r2 = vec![0.0; rmax];
    let mut n = vec![0usize; rmax];
    for ((iy, ix), &c) in ac.indexed_iter() {
        let dy = fft::signed_index(iy, ny) as f64;
        let dx = fft::signed_index(ix, nx) as f64;
        let r2 = dx * dx + dy * dy;
        let bin = r2.sqrt().round() as usize;
        if bin < rmax {
            sum_c[bin] += c;
            sum_r2[bin] += r2;
            n[bin] += 1;
        }
    }
    let profile: Vec<(f64, f64)> = (0..rmax)
        .map(|b| (sum_r2[b] / n[b] as f64, sum_c[b] / n[b] as f64))
        .collect();
    let h = half_width(&profile)
        .ok_or_else(|| Error::Unresolved("autocorrelation wider than the window".into()))?;
    Ok(2.0 * h * pitch)
}

/// Exact `|gamma(dx, dy)|^2` on the grid lags implied by a field spectrum.
pub fn intensity_coherence(spectrum: &Array2<f64>) -> Array2<f64> {
    let mut g = spectrum.mapv(|s| Complex64::new(s, 0.0));
    fft::ifft2(&mut g);
    let g0 = g[[0, 0]].norm();
    g.mapv(|v| (v.norm() / g0).powi(2))
}

/// Number of thermal modes seen by a detector that integrates intensity with
/// weights `w(x)` (mean intensity times aperture):
/// `mu = (sum w)^2 / sum_xy w(x) w(y) |gamma(x - y)|^2`.
pub fn integrated_mode_count(weights: &Array2<f64>, coherence: &Array2<f64>) -> f64 {
    let total: f64 = weights.sum();
    let mut w = weights.mapv(|v| Complex64::new(v, 0.0));
    let mut k = coherence.mapv(|v| Complex64::new(v, 0.0));
    fft::fft2(&mut w);
    fft::fft2(&mut k);
    // sum_xy w(x) w(y) g(x - y) = sum_q |W(q)|^2 G(q) * sqrt(N) for the unitary transform.
    let n = (weights.len() as f64).sqrt();
    let quad: f64 = w
        .iter()
        .zip(k.iter())
        .map(|(wq, gq)| wq.norm_sqr() * gq.re)
        .sum::<f64>()
        * n;
    total * total / quad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, pitch: f64) -> GridSpec {
        GridSpec::new(n, n, pitch).unwrap()
    }

    #[test]
    fn rejects_unresolvable_speckle() {
        let p = SpeckleParams {
            coherence_diameter_m: 30e-6,
            ..SpeckleParams::laboratory()
        };
        assert!(matches!(
            generate_speckle_field(&p, &grid(64, 16e-6), 1e-6, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_window_speckle_is_one_mode() {
        let g = grid(32, 10e-6);
        let p = SpeckleParams {
            coherence_diameter_m: g.min_window(),
            ..SpeckleParams::laboratory()
        };
        let f = generate_speckle_field(&p, &g, 1e-6, 3).unwrap();
        let a0 = f.amplitude[[0, 0]];
        assert!(a0.norm() > 0.0);
        assert!(f.amplitude.iter().all(|a| (a - a0).norm() < 1e-12));
    }

    #[test]
    fn deterministic_given_seed() {
        let g = grid(64, 10e-6);
        let p = SpeckleParams {
            coherence_diameter_m: 60e-6,
            ..SpeckleParams::laboratory()
        };
        let a = generate_speckle_field(&p, &g, 1e-6, 11).unwrap();
        let b = generate_speckle_field(&p, &g, 1e-6, 11).unwrap();
        let c = generate_speckle_field(&p, &g, 1e-6, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite() && a.energy() > 0.0);
    }

    #[test]
    fn plane_wave_is_unresolved() {
        let g = grid(32, 10e-6);
        let f = ComplexField::from_fn(&g, 1e-6, |_, _| Complex64::new(1.0, 0.0));
        assert!(matches!(
            estimate_coherence_diameter(&f),
            Err(Error::Unresolved(_))
        ));
    }

    #[test]
    fn white_noise_is_about_one_pixel() {
        let g = grid(128, 10e-6);
        let mut rng = seed::rng(5);
        let f = ComplexField {
            amplitude: Array2::from_shape_fn(g.shape(), |_| {
                Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            }),
            pitch: g.pitch_m,
            wavelength: 1e-6,
        };
        let d = estimate_coherence_diameter(&f).unwrap() / g.pitch_m;
        assert!((0.8..=2.0).contains(&d), "white-noise width {d} px");
    }

    #[test]
    fn gaussian_profile_half_width_is_exact() {
        // |gamma|^2 = exp(-4 ln2 r^2 / d^2), d = 7 samples.
        let d: f64 = 7.0;
        let prof: Vec<(f64, f64)> = (0..20)
            .map(|r| {
                let r2 = (r * r) as f64;
                (r2, (-4.0 * std::f64::consts::LN_2 * r2 / (d * d)).exp())
            })
            .collect();
        assert!((2.0 * half_width(&prof).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn spectrum_coherence_fwhm_matches_target() {
        let g = grid(256, 10e-6);
        let p = SpeckleParams {
            coherence_diameter_m: 120e-6,
            ..SpeckleParams::laboratory()
        };
        let coh = intensity_coherence(&seed_spectrum(&p, &g, 1.0));
        let prof: Vec<(f64, f64)> = (0..128).map(|i| ((i * i) as f64, coh[[0, i]])).collect();
        let fwhm = 2.0 * half_width(&prof).unwrap() * g.pitch_m;
        assert!((fwhm - 120e-6).abs() < 1e-3 * 120e-6, "{fwhm}");
    }

    #[test]
    fn mode_count_of_single_pixel_is_one() {
        let g = grid(64, 10e-6);
        let p = SpeckleParams {
            coherence_diameter_m: 50e-6,
            ..SpeckleParams::laboratory()
        };
        let coh = intensity_coherence(&seed_spectrum(&p, &g, 1.0));
        let mut w = Array2::zeros(g.shape());
        w[[10, 20]] = 1.0;
        assert!((integrated_mode_count(&w, &coh) - 1.0).abs() < 1e-9);
        // Whole window of a homogeneous field: mu = window area / coherence area.
        let w = Array2::ones(g.shape());
        let acoh: f64 = coh.sum();
        let mu = integrated_mode_count(&w, &coh);
        assert!((mu - (64.0 * 64.0) / acoh).abs() < 1e-6 * mu);
    }
}
