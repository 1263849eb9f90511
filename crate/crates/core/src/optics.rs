//! Free-space propagation, thin lenses and object masks.
//!
//! Propagation uses the Fresnel transfer function
//! `H(f) = exp(-i pi lambda z |f|^2)` on the periodic grid, which is exactly
//! unitary and composes additively in `z`. The constant phase `exp(ikz)` is
//! dropped.

use std::path::PathBuf;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::ComplexField;
use crate::geometry::{GridSpec, OpticalGeometry};

/// Ratio `lambda z / (pitch * window)` of a propagation step; the transfer
/// function is only trusted below one.
pub fn aliasing_ratio(grid: &GridSpec, wavelength: f64, distance: f64) -> f64 {
    wavelength * distance.abs() / (grid.pitch_m * grid.min_window())
}

pub fn check_propagation(grid: &GridSpec, wavelength: f64, distance: f64) -> Result<()> {
    let ratio = aliasing_ratio(grid, wavelength, distance);
    if ratio >= 1.0 {
        let n_min = wavelength * distance.abs() / (grid.pitch_m * grid.pitch_m);
        let pitch_min = (wavelength * distance.abs() / grid.nx.min(grid.ny) as f64).sqrt();
        return Err(Error::Sampling {
            reason: format!(
                "propagation over {distance} m aliases (lambda z / (pitch window) = {ratio:.3})"
            ),
            guidance: format!(
                "use at least {} samples per axis at pitch {:.3e} m, or a pitch above {:.3e} m",
                (n_min.ceil() as usize + 1).next_power_of_two(),
                grid.pitch_m,
                pitch_min
            ),
        });
    }
    Ok(())
}

pub fn fresnel_propagate(field: &ComplexField, distance: f64) -> Result<ComplexField> {
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(Error::Domain(format!(
            "propagation distance must be >= 0, got {distance}"
        )));
    }
    let mut out = field.clone();
    if distance == 0.0 {
        return Ok(out);
    }
    let grid = field.grid();
    check_propagation(&grid, field.wavelength, distance)?;
    let phase = -std::f64::consts::PI * field.wavelength * distance;
    let fx = fft::frequencies(grid.nx, grid.pitch_m);
    let fy = fft::frequencies(grid.ny, grid.pitch_m);
    let hx: Vec<Complex64> = fx
        .iter()
        .map(|f| Complex64::from_polar(1.0, phase * f * f))
        .collect();
    let hy: Vec<Complex64> = fy
        .iter()
        .map(|f| Complex64::from_polar(1.0, phase * f * f))
        .collect();
    fft::fft2(&mut out.amplitude);
    for ((iy, ix), a) in out.amplitude.indexed_iter_mut() {
        *a *= hy[iy] * hx[ix];
    }
    fft::ifft2(&mut out.amplitude);
    Ok(out)
}

/// Largest radius at which the lens phase is still Nyquist sampled.
pub fn lens_nyquist_radius(wavelength: f64, focal_length: f64, pitch: f64) -> f64 {
    wavelength * focal_length.abs() / (2.0 * pitch)
}

/// Thin lens `exp(-i pi r^2 / (lambda f))` behind a circular pupil.
///
/// Without an explicit `aperture_radius` the pupil is the Nyquist radius of
/// the phase, so the lens never aliases; a larger explicit pupil is refused.
pub fn apply_lens(
    field: &ComplexField,
    focal_length: f64,
    aperture_radius: Option<f64>,
) -> Result<ComplexField> {
    if focal_length == 0.0 || focal_length.is_nan() {
        return Err(Error::Domain("focal length must be nonzero".into()));
    }
    let grid = field.grid();
    let r_nyq = lens_nyquist_radius(field.wavelength, focal_length, grid.pitch_m);
    let radius = match aperture_radius {
        Some(r) if r > r_nyq => {
            return Err(Error::Sampling {
                reason: format!(
                    "lens aperture {r:.3e} m exceeds the Nyquist radius {r_nyq:.3e} m of its phase"
                ),
                guidance: format!(
                    "reduce the aperture or the pitch below {:.3e} m",
                    field.wavelength * focal_length.abs() / (2.0 * r)
                ),
            })
        }
        Some(r) if r <= 0.0 => return Err(Error::Domain("lens aperture must be positive".into())),
        Some(r) => r,
        None => r_nyq,
    };
    let k = -std::f64::consts::PI / (field.wavelength * focal_length);
    let mut out = field.clone();
    for ((iy, ix), a) in out.amplitude.indexed_iter_mut() {
        let (x, y) = (grid.x(ix), grid.y(iy));
        let r2 = x * x + y * y;
        *a = if r2 <= radius * radius {
            *a * Complex64::from_polar(1.0, k * r2)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    Ok(out)
}

/// Parametric or image-defined transmission masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectShape {
    Open,
    Opaque,
    CircularHole {
        diameter_m: f64,
    },
    /// Circular hole crossed by a vertical opaque wire. The hole is cut in an
    /// opaque plate of `plate_diameter_m`; light passes freely outside the
    /// plate. Without a plate diameter the screen is infinite.
    HoleWithWire {
        hole_diameter_m: f64,
        wire_width_m: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plate_diameter_m: Option<f64>,
    },
    Pinhole {
        x_m: f64,
        y_m: f64,
        diameter_m: f64,
    },
    /// 8-bit grayscale image, 0 opaque and 255 transparent, centered on the
    /// axis with square pixels of `pixel_m`. Outside the image is opaque.
    Image {
        path: PathBuf,
        pixel_m: f64,
    },
}

impl ObjectShape {
    pub fn laboratory() -> Self {
        ObjectShape::HoleWithWire {
            hole_diameter_m: 1.6e-3,
            wire_width_m: 0.5e-3,
            plate_diameter_m: None,
        }
    }

    /// Diameter of the structured part of the object, used by the grid guard.
    pub fn extent_m(&self) -> f64 {
        match self {
            ObjectShape::Open | ObjectShape::Opaque | ObjectShape::Image { .. } => 0.0,
            ObjectShape::CircularHole { diameter_m } => *diameter_m,
            ObjectShape::HoleWithWire {
                hole_diameter_m,
                plate_diameter_m,
                ..
            } => plate_diameter_m.unwrap_or(0.0).max(*hole_diameter_m),
            ObjectShape::Pinhole {
                x_m,
                y_m,
                diameter_m,
            } => 2.0 * x_m.hypot(*y_m) + diameter_m,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            ObjectShape::CircularHole { diameter_m } => positive("diameter_m", *diameter_m),
            ObjectShape::HoleWithWire {
                hole_diameter_m,
                wire_width_m,
                plate_diameter_m,
            } => {
                positive("hole_diameter_m", *hole_diameter_m)?;
                if !(*wire_width_m >= 0.0 && wire_width_m < hole_diameter_m) {
                    return Err(Error::Config(
                        "wire_width_m must lie in [0, hole_diameter_m)".into(),
                    ));
                }
                if let Some(p) = plate_diameter_m {
                    if !(p > hole_diameter_m) {
                        return Err(Error::Config(
                            "plate_diameter_m must exceed hole_diameter_m".into(),
                        ));
                    }
                }
                Ok(())
            }
            ObjectShape::Pinhole { diameter_m, .. } => positive("diameter_m", *diameter_m),
            ObjectShape::Image { pixel_m, .. } => positive("pixel_m", *pixel_m),
            ObjectShape::Open | ObjectShape::Opaque => Ok(()),
        }
    }

    fn transmission_at(&self, x: f64, y: f64) -> f64 {
        let r2 = x * x + y * y;
        let inside = |d: f64| r2 <= 0.25 * d * d;
        match self {
            ObjectShape::Open => 1.0,
            ObjectShape::Opaque => 0.0,
            ObjectShape::CircularHole { diameter_m } => inside(*diameter_m) as u8 as f64,
            ObjectShape::HoleWithWire {
                hole_diameter_m,
                wire_width_m,
                plate_diameter_m,
            } => {
                if inside(*hole_diameter_m) {
                    (x.abs() > 0.5 * wire_width_m) as u8 as f64
                } else {
                    plate_diameter_m.is_some_and(|p| !inside(p)) as u8 as f64
                }
            }
            ObjectShape::Pinhole {
                x_m,
                y_m,
                diameter_m,
            } => {
                let (dx, dy) = (x - x_m, y - y_m);
                (dx * dx + dy * dy <= 0.25 * diameter_m * diameter_m) as u8 as f64
            }
            ObjectShape::Image { .. } => unreachable!("image masks are rasterized separately"),
        }
    }
}

/// Complex amplitude transmission sampled on the simulation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    pub transmission: Array2<Complex64>,
    pub pitch: f64,
    pub descriptor: ObjectShape,
}

impl ObjectMask {
    /// Rasterize a shape with pixel-center sampling.
    pub fn build(shape: &ObjectShape, grid: &GridSpec) -> Result<Self> {
        shape.validate()?;
        grid.check_object_extent(shape.extent_m())?;
        let transmission = match shape {
            ObjectShape::Image { path, pixel_m } => rasterize_image(path, *pixel_m, grid)?,
            _ => Array2::from_shape_fn(grid.shape(), |(iy, ix)| {
                Complex64::new(shape.transmission_at(grid.x(ix), grid.y(iy)), 0.0)
            }),
        };
        Ok(Self {
            transmission,
            pitch: grid.pitch_m,
            descriptor: shape.clone(),
        })
    }

    pub fn grid(&self) -> GridSpec {
        let (ny, nx) = self.transmission.dim();
        GridSpec {
            nx,
            ny,
            pitch_m: self.pitch,
        }
    }

    /// `|t|^2` map.
    pub fn power_transmission(&self) -> Array2<f64> {
        self.transmission.mapv(|t| t.norm_sqr())
    }

    /// Open area `sum |t|^2 * pitch^2`.
    pub fn open_area_m2(&self) -> f64 {
        self.transmission.iter().map(|t| t.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }
}

fn rasterize_image(
    path: &std::path::Path,
    pixel_m: f64,
    grid: &GridSpec,
) -> Result<Array2<Complex64>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as f64, img.height() as f64);
    Ok(Array2::from_shape_fn(grid.shape(), |(iy, ix)| {
        let u = (grid.x(ix) / pixel_m + 0.5 * w).floor();
        let v = (grid.y(iy) / pixel_m + 0.5 * h).floor();
        let t = if u >= 0.0 && v >= 0.0 && u < w && v < h {
            img.get_pixel(u as u32, v as u32).0[0] as f64 / 255.0
        } else {
            0.0
        };
        Complex64::new(t, 0.0)
    }))
}

pub fn apply_object(field: &ComplexField, mask: &ObjectMask) -> Result<ComplexField> {
    if field.amplitude.dim() != mask.transmission.dim()
        || (field.pitch - mask.pitch).abs() > 1e-12 * mask.pitch
    {
        return Err(Error::GridMismatch(format!(
            "field {:?} @ {:e} m, mask {:?} @ {:e} m",
            field.amplitude.dim(),
            field.pitch,
            mask.transmission.dim(),
            mask.pitch
        )));
    }
    let mut out = field.clone();
    Zip::from(&mut out.amplitude)
        .and(&mask.transmission)
        .for_each(|a, t| *a *= t);
    Ok(out)
}

/// Test arm: crystal to object, through the mask. Returns the transmitted
/// intensity seen by the bucket optics.
pub fn arm_t(
    field: &ComplexField,
    geom: &OpticalGeometry,
    mask: &ObjectMask,
) -> Result<Array2<f64>> {
    let at_object = fresnel_propagate(field, geom.d1_m)?;
    Ok(apply_object(&at_object, mask)?.intensity())
}

/// Reference arm: crystal to lens, lens, lens to camera.
pub fn arm_r(
    field: &ComplexField,
    geom: &OpticalGeometry,
    lens_aperture: Option<f64>,
) -> Result<ComplexField> {
    let at_lens = fresnel_propagate(field, geom.d2_m)?;
    let behind = apply_lens(&at_lens, geom.f_m, lens_aperture)?;
    fresnel_propagate(&behind, geom.q_m)
}

/// Check every propagation and lens step of the two arms up front.
pub fn check_geometry(grid: &GridSpec, geom: &OpticalGeometry) -> Result<()> {
    let lambda = geom.wavelength();
    for z in [geom.d1_m, geom.d2_m, geom.q_m] {
        check_propagation(grid, lambda, z)?;
    }
    Ok(())
}
