//! Declarative run configuration (TOML). Every physical quantity carries its
//! SI unit in the key name, and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{CcdParams, PixelRegion};
use crate::error::{Error, IoContext, Result};
use crate::geometry::{GridSpec, OpticalGeometry};
use crate::optics::{self, ObjectShape};
use crate::pdc::PdcParams;
use crate::speckle::SpeckleParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub shots: u64,
    pub dark_frames: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcdSection {
    pub pixel_pitch_m: f64,
    pub bit_depth: u32,
    /// Fixed gain; calibrated from pilot shots when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_counts_per_au: Option<f64>,
    /// Counts assigned to the brightest pilot pixel during calibration.
    pub target_peak_counts: f64,
    pub background_mean_counts: f64,
    pub background_sigma_counts: f64,
    pub bucket_width_px: usize,
    pub bucket_height_px: usize,
    pub r_window_width_px: usize,
    pub r_window_height_px: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub spontaneous: bool,
    pub quantize: bool,
    /// Reference-arm lens pupil radius; the Nyquist radius of the lens
    /// phase when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lens_aperture_m: Option<f64>,
    /// Shots simulated to calibrate the gain when none is given.
    pub pilot_shots: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub geometry: OpticalGeometry,
    pub grid: GridSpec,
    pub speckle: SpeckleParams,
    pub pdc: PdcParams,
    pub ccd: CcdSection,
    pub object: ObjectShape,
    pub pipeline: PipelineSection,
}

impl RunConfig {
    /// The laboratory configuration on a 256x256 grid of 56 um samples.
    pub fn laboratory() -> Self {
        Self {
            run: RunSection {
                shots: 9500,
                dark_frames: 200,
                master_seed: 20_110_113,
                output_dir: PathBuf::from("out"),
            },
            geometry: OpticalGeometry::laboratory(),
            grid: GridSpec {
                nx: 256,
                ny: 256,
                pitch_m: 56e-6,
            },
            speckle: SpeckleParams::laboratory(),
            pdc: PdcParams::laboratory(),
            ccd: CcdSection {
                pixel_pitch_m: 56e-6,
                bit_depth: 12,
                gain_counts_per_au: None,
                target_peak_counts: 3000.0,
                background_mean_counts: 100.0,
                background_sigma_counts: 8.0,
                bucket_width_px: 110,
                bucket_height_px: 110,
                r_window_width_px: 64,
                r_window_height_px: 64,
            },
            object: ObjectShape::laboratory(),
            pipeline: PipelineSection {
                spontaneous: false,
                quantize: true,
                lens_aperture_m: None,
                pilot_shots: 16,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; parsing it back yields an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable in TOML")
    }

    /// Hex SHA-256 of the canonical serialization, ignoring where the run
    /// is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.run.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// CCD parameters with a concrete gain.
    pub fn ccd_params(&self, gain: f64) -> CcdParams {
        CcdParams {
            pixel_pitch_m: self.ccd.pixel_pitch_m,
            bit_depth: self.ccd.bit_depth,
            gain_counts_per_au: gain,
            background_mean_counts: self.ccd.background_mean_counts,
            background_sigma_counts: self.ccd.background_sigma_counts,
        }
    }

    /// Detector frame size in pixels after binning.
    pub fn detector_size(&self) -> Result<(usize, usize)> {
        let k = self.ccd_params(1.0).binning(self.grid.pitch_m)?;
        Ok((self.grid.nx / k, self.grid.ny / k))
    }

    pub fn bucket_region(&self) -> Result<PixelRegion> {
        let (nx, ny) = self.detector_size()?;
        PixelRegion::centered(nx, ny, self.ccd.bucket_width_px, self.ccd.bucket_height_px)
    }

    pub fn r_window(&self) -> Result<PixelRegion> {
        let (nx, ny) = self.detector_size()?;
        PixelRegion::centered(
            nx,
            ny,
            self.ccd.r_window_width_px,
            self.ccd.r_window_height_px,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.grid.validate()?;
        self.speckle.validate(&self.grid)?;
        self.pdc.validate()?;
        let ccd = self.ccd_params(self.ccd.gain_counts_per_au.unwrap_or(1.0));
        ccd.validate()?;
        if !(self.ccd.target_peak_counts > self.ccd.background_mean_counts
            && self.ccd.target_peak_counts <= ccd.saturation())
        {
            return Err(Error::Config(format!(
                "target_peak_counts must lie between the background mean and {}",
                ccd.saturation()
            )));
        }
        self.bucket_region()?;
        self.r_window()?;
        optics::check_geometry(&self.grid, &self.geometry)?;
        if self.run.dark_frames > 0
            && self.run.dark_frames < crate::detector::MIN_DARK_FRAMES as u64
        {
            return Err(Error::Config(format!(
                "dark_frames must be 0 or at least {}",
                crate::detector::MIN_DARK_FRAMES
            )));
        }
        if self.pipeline.pilot_shots == 0 && self.ccd.gain_counts_per_au.is_none() {
            return Err(Error::Config(
                "gain calibration needs pilot_shots > 0".into(),
            ));
        }
        Ok(())
    }
}
