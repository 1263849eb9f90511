//! Ghost imaging with intense, chaotically seeded parametric downconversion.
//!
//! A pseudo-thermal seed beam drives a high-gain parametric amplifier whose
//! signal (Test arm) illuminates an object in front of a bucket detector and
//! whose phase-conjugated idler (Reference arm) is imaged onto a camera. The
//! shot-by-shot correlation between camera pixels and bucket value forms a
//! ghost image of the object.
//!
//! The crate covers the whole chain:
//!
//! - [`speckle`]: seed field realizations with a chosen coherence diameter;
//! - [`pdc`]: the twin-beam transformation with angle-dependent gain;
//! - [`optics`]: Fresnel propagation, the thin lens and object masks;
//! - [`detector`]: CCD sampling, noise, quantization and the bucket sum;
//! - [`analysis`]: streaming correlation maps and image metrics;
//! - [`modefit`]: multithermal mode-number fits;
//! - [`fock`]: the two-mode Fock-space state and its separability;
//! - [`pipeline`] and [`run`]: deterministic parallel runs, frame stacks and
//!   reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detector;
pub mod error;
pub mod fft;
pub mod field;
pub mod fock;
pub mod geometry;
pub mod modefit;
pub mod optics;
pub mod pdc;
pub mod pgm;
pub mod pipeline;
pub mod run;
pub mod seed;
pub mod speckle;
pub mod stack;

pub use analysis::{CorrelationMaps, ImageMetrics, ImageVerdict, ShotEnsemble};
pub use config::RunConfig;
pub use detector::{Background, CcdParams, PixelRegion, ShotRecord};
pub use error::{Error, Result};
pub use field::ComplexField;
pub use fock::{FockConfig, PhsReport, Verdict};
pub use geometry::{GridSpec, OpticalGeometry};
pub use modefit::{FitStatus, ModeFitResult};
pub use optics::{ObjectMask, ObjectShape};
pub use pdc::{PdcGain, PdcParams};
pub use pipeline::Simulator;
pub use run::{Analysis, FitSamples, Report};
pub use speckle::SpeckleParams;
