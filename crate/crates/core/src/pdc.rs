//! Seeded parametric downconversion in the intense-field limit.
//!
//! Mode operators become c-number amplitudes on the spatial-frequency grid:
//!
//! ```text
//! E_T(q) = U_q A(q)                  [+ V_q e^{i phi_q} xi*(-q)]
//! E_R(q) = V_q e^{i phi_q} A*(-q)    [+ V_q e^{i phi_q} eta*(-q)]
//! ```
//!
//! with `U_q^2 - V_q^2 = 1`. The bracketed vacuum terms are optional,
//! independent circular Gaussian noise with a per-mode variance equal to one
//! photon; they reproduce the normally ordered spontaneous photon numbers
//! `<n_T> = U^2 n_th + V^2` and `<n_R> = V^2 (n_th + 1)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::ComplexField;
use crate::geometry::{GridSpec, OpticalGeometry};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdcParams {
    /// Spontaneous photons per mode at normal incidence, `V_0^2`.
    pub n_pdc_peak: f64,
    /// Half width at half maximum of the angular gain profile `V_q^2`.
    pub angular_bandwidth_rad: f64,
    #[serde(default)]
    pub phase_rad: f64,
    /// Thermal photons per seed mode at the spectral peak; sets the vacuum
    /// noise level relative to the seed.
    #[serde(default = "default_n_th")]
    pub n_th_per_mode: f64,
}

fn default_n_th() -> f64 {
    1e12
}

impl PdcParams {
    pub fn laboratory() -> Self {
        Self {
            n_pdc_peak: 0.5,
            angular_bandwidth_rad: 5e-3,
            phase_rad: 0.0,
            n_th_per_mode: default_n_th(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_pdc_peak.is_finite() && self.n_pdc_peak >= 0.0) {
            return Err(Error::Config("n_pdc_peak must be non-negative".into()));
        }
        if !(self.angular_bandwidth_rad > 0.0) {
            return Err(Error::Config(
                "angular_bandwidth_rad must be positive".into(),
            ));
        }
        if !(self.n_th_per_mode > 0.0) {
            return Err(Error::Config("n_th_per_mode must be positive".into()));
        }
        Ok(())
    }
}

/// Per-mode Bogoliubov coefficients on the FFT grid (unshifted ordering).
#[derive(Clone, Debug, PartialEq)]
pub struct PdcGain {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub phi: Array2<f64>,
    pub angular_bandwidth: f64,
    pub pitch: f64,
}

impl PdcGain {
    pub fn n_pdc(&self) -> Array2<f64> {
        self.v.mapv(|v| v * v)
    }

    /// `max |U^2 - V^2 - 1|` over the grid.
    pub fn hyperbolic_defect(&self) -> f64 {
        self.u
            .iter()
            .zip(self.v.iter())
            .map(|(u, v)| (u * u - v * v - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest mismatch between a coefficient and its value at `-q`.
    pub fn symmetry_defect(&self) -> f64 {
        let (ny, nx) = self.u.dim();
        let mut worst: f64 = 0.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let (my, mx) = (fft::mirror(iy, ny), fft::mirror(ix, nx));
                for m in [&self.u, &self.v, &self.phi] {
                    worst = worst.max((m[[iy, ix]] - m[[my, mx]]).abs());
                }
            }
        }
        worst
    }
}

/// Gaussian angular gain: `V_q^2 = n_pdc_peak * 2^{-(theta / bandwidth)^2}`
/// with `theta = lambda |q| / 2 pi` the propagation angle of mode `q`.
pub fn make_gain(params: &PdcParams, grid: &GridSpec, geom: &OpticalGeometry) -> Result<PdcGain> {
    params.validate()?;
    let lambda = geom.wavelength();
    let bw = params.angular_bandwidth_rad;
    let f2 = fft::radial_frequency_sq(grid.nx, grid.ny, grid.pitch_m);
    let v = f2.mapv(|f2| {
        let theta2 = lambda * lambda * f2;
        (params.n_pdc_peak * (-std::f64::consts::LN_2 * theta2 / (bw * bw)).exp()).sqrt()
    });
    let u = v.mapv(|v| (1.0 + v * v).sqrt());
    Ok(PdcGain {
        u,
        v,
        phi: Array2::from_elem(grid.shape(), params.phase_rad),
        angular_bandwidth: bw,
        pitch: grid.pitch_m,
    })
}

/// Warn when the seed's angular content exceeds half the gain bandwidth.
pub fn check_divergence(coherence_diameter: f64, wavelength: f64, bandwidth: f64) -> bool {
    let divergence = wavelength / coherence_diameter;
    if divergence > 0.5 * bandwidth {
        log::warn!(
            "speckle divergence {:.2e} rad exceeds half the gain bandwidth {:.2e} rad; \
             the Reference arm will be low-pass filtered",
            divergence,
            bandwidth
        );
        return true;
    }
    false
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinFields {
    pub field_t: ComplexField,
    pub field_r: ComplexField,
}

/// Vacuum noise for the spontaneous contribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VacuumNoise {
    /// `<|xi(q)|^2>` per unitary FFT bin, i.e. one photon in seed units.
    pub variance_per_mode: f64,
    pub seed: u64,
}

fn noise_spectrum(shape: (usize, usize), variance: f64, rng: &mut impl Rng) -> Array2<Complex64> {
    let s = (0.5 * variance).sqrt();
    Array2::from_shape_simple_fn(shape, || {
        Complex64::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ) * s
    })
}

/// Apply the input-output relations to one seed realization.
pub fn seeded_transform(
    seed_field: &ComplexField,
    gain: &PdcGain,
    spontaneous: Option<VacuumNoise>,
) -> Result<TwinFields> {
    if seed_field.amplitude.dim() != gain.u.dim()
        || (seed_field.pitch - gain.pitch).abs() > 1e-12 * gain.pitch
    {
        return Err(Error::GridMismatch(format!(
            "seed {:?} @ {:e} m, gain {:?} @ {:e} m",
            seed_field.amplitude.dim(),
            seed_field.pitch,
            gain.u.dim(),
            gain.pitch
        )));
    }
    let (ny, nx) = gain.u.dim();
    let mut a = seed_field.amplitude.clone();
    fft::fft2(&mut a);

    let (xi, eta) = match spontaneous {
        Some(noise) => {
            let mut rng = seed::rng(noise.seed);
            let xi = noise_spectrum((ny, nx), noise.variance_per_mode, &mut rng);
            let eta = noise_spectrum((ny, nx), noise.variance_per_mode, &mut rng);
            (Some(xi), Some(eta))
        }
        None => (None, None),
    };

    let mut t = Array2::zeros((ny, nx));
    let mut r = Array2::zeros((ny, nx));
    for iy in 0..ny {
        let my = fft::mirror(iy, ny);
        for ix in 0..nx {
            let mx = fft::mirror(ix, nx);
            let (u, v) = (gain.u[[iy, ix]], gain.v[[iy, ix]]);
            let rot = Complex64::from_polar(v, gain.phi[[iy, ix]]);
            let mut et = a[[iy, ix]] * u;
            let mut seed_conj = a[[my, mx]];
            if let (Some(xi), Some(eta)) = (&xi, &eta) {
                et += rot * xi[[my, mx]].conj();
                seed_conj += eta[[my, mx]];
            }
            t[[iy, ix]] = et;
            r[[iy, ix]] = rot * seed_conj.conj();
        }
    }
    fft::ifft2(&mut t);
    fft::ifft2(&mut r);
    let wrap = |amplitude| ComplexField {
        amplitude,
        pitch: seed_field.pitch,
        wavelength: seed_field.wavelength,
    };
    Ok(TwinFields {
        field_t: wrap(t),
        field_r: wrap(r),
    })
}
