//! Physical configuration of the two-arm system.
//!
//! The Test arm propagates `d1` from the crystal to the object; the
//! Reference arm propagates `d2` to a lens of focal length `f` and then `q`
//! to the camera. Because the Reference field is the phase conjugate of the
//! Test field, the correlation image obeys the thin-lens law with object
//! distance `d1 + d2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IMAGING_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalGeometry {
    pub lambda_seed_m: f64,
    pub lambda_pump_m: f64,
    pub d1_m: f64,
    pub d2_m: f64,
    pub q_m: f64,
    pub f_m: f64,
    #[serde(default = "default_tolerance")]
    pub imaging_tolerance_per_m: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_IMAGING_TOLERANCE
}

impl OpticalGeometry {
    /// The laboratory configuration: 60 cm arms, 400 mm lens, degenerate
    /// type-I downconversion of a 532 nm pump.
    pub fn laboratory() -> Self {
        Self {
            lambda_seed_m: 1064e-9,
            lambda_pump_m: 532e-9,
            d1_m: 0.6,
            d2_m: 0.6,
            q_m: 0.6,
            f_m: 0.4,
            imaging_tolerance_per_m: DEFAULT_IMAGING_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("lambda_seed_m", self.lambda_seed_m),
            ("lambda_pump_m", self.lambda_pump_m),
            ("d1_m", self.d1_m),
            ("d2_m", self.d2_m),
            ("q_m", self.q_m),
            ("f_m", self.f_m),
            ("imaging_tolerance_per_m", self.imaging_tolerance_per_m),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let rel = (self.lambda_seed_m - 2.0 * self.lambda_pump_m).abs() / self.lambda_seed_m;
        if rel > 1e-9 {
            return Err(Error::Config(format!(
                "only degenerate downconversion is supported: lambda_seed_m ({}) must equal 2 * lambda_pump_m ({})",
                self.lambda_seed_m, self.lambda_pump_m
            )));
        }
        Ok(())
    }

    /// Ghost-image magnification `q / (d1 + d2)`.
    pub fn magnification(&self) -> f64 {
        self.q_m / (self.d1_m + self.d2_m)
    }

    /// `1/(d1 + d2) + 1/q - 1/f` in inverse meters.
    pub fn imaging_residual(&self) -> f64 {
        1.0 / (self.d1_m + self.d2_m) + 1.0 / self.q_m - 1.0 / self.f_m
    }

    pub fn is_imaging(&self) -> bool {
        self.imaging_residual().abs() < self.imaging_tolerance_per_m
    }

    pub fn wavelength(&self) -> f64 {
        self.lambda_seed_m
    }
}

/// Sampling grid shared by every plane of the simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch_m: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch_m: f64) -> Result<Self> {
        let g = Self { nx, ny, pitch_m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 {
            return Err(Error::Config(format!(
                "grid must be at least 8x8, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.pitch_m.is_finite() && self.pitch_m > 0.0) {
            return Err(Error::Config(format!(
                "pitch_m must be positive, got {}",
                self.pitch_m
            )));
        }
        if !self.nx.is_power_of_two() || !self.ny.is_power_of_two() {
            log::debug!(
                "grid {}x{} is not a power of two; FFTs will be slower",
                self.nx,
                self.ny
            );
        }
        Ok(())
    }

    /// Sampling guard: the window must span more than four object diameters.
    pub fn check_object_extent(&self, object_diameter_m: f64) -> Result<()> {
        if self.min_window() <= 4.0 * object_diameter_m {
            return Err(Error::Sampling {
                reason: format!(
                    "window {:.3e} m does not exceed 4x the object diameter {:.3e} m",
                    self.min_window(),
                    object_diameter_m
                ),
                guidance: format!(
                    "use at least {} samples per axis at this pitch",
                    ((4.0 * object_diameter_m / self.pitch_m).floor() as usize + 1)
                        .next_power_of_two()
                ),
            });
        }
        Ok(())
    }

    pub fn window_x(&self) -> f64 {
        self.nx as f64 * self.pitch_m
    }

    pub fn window_y(&self) -> f64 {
        self.ny as f64 * self.pitch_m
    }

    pub fn min_window(&self) -> f64 {
        self.window_x().min(self.window_y())
    }

    /// Physical coordinate of column `ix`; the optical axis sits on sample `nx / 2`.
    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx / 2) as f64) * self.pitch_m
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny / 2) as f64) * self.pitch_m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: f64, q: f64, f: f64) -> OpticalGeometry {
        OpticalGeometry {
            d1_m: d / 2.0,
            d2_m: d / 2.0,
            q_m: q,
            f_m: f,
            ..OpticalGeometry::laboratory()
        }
    }

    #[test]
    fn laboratory_magnification_and_residual() {
        let g = OpticalGeometry::laboratory();
        assert!((g.magnification() - 0.5).abs() < 1e-15);
        assert!(g.imaging_residual().abs() < 1e-12);
        assert!(g.is_imaging());
    }

    #[test]
    fn symmetric_two_f_imaging() {
        let g = geom(0.8, 0.8, 0.4);
        assert!((g.magnification() - 1.0).abs() < 1e-15);
        let g = geom(1.0, 1.0, 0.5);
        assert!(g.imaging_residual().abs() < 1e-12);
    }

    #[test]
    fn ratio_definition() {
        for f in [0.1, 0.3, 2.0] {
            assert!((geom(1.4, 0.7, f).magnification() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn off_focus_residual() {
        // 1/1.2 + 1/0.6 - 1/0.5 = 0.8333 + 1.6667 - 2.0
        let g = geom(1.2, 0.6, 0.5);
        assert!((g.imaging_residual() - 0.5).abs() < 1e-12);
        assert!(!g.is_imaging());
    }

    #[test]
    fn magnification_scale_invariant() {
        let g = geom(1.2, 0.6, 0.4);
        for s in [0.5, 2.0, 7.3] {
            let h = geom(1.2 * s, 0.6 * s, 0.4 * s);
            assert!((g.magnification() - h.magnification()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_degenerate_and_nonpositive() {
        let mut g = OpticalGeometry::laboratory();
        g.lambda_pump_m = 500e-9;
        assert!(matches!(g.validate(), Err(Error::Config(_))));
        let mut g = OpticalGeometry::laboratory();
        g.q_m = 0.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn grid_guards() {
        assert!(GridSpec::new(4, 16, 1e-5).is_err());
        assert!(GridSpec::new(16, 16, 0.0).is_err());
        let g = GridSpec::new(256, 256, 50e-6).unwrap();
        assert!(g.check_object_extent(1.6e-3).is_ok());
        let g = GridSpec::new(256, 256, 16e-6).unwrap();
        assert!(matches!(
            g.check_object_extent(1.6e-3),
            Err(Error::Sampling { .. })
        ));
    }
}
