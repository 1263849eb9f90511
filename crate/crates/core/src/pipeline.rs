//! Shot simulation and deterministic ensemble reduction.
//!
//! Shots are grouped into fixed chunks. Each chunk is accumulated in index
//! order and chunk ensembles are merged in index order, so the result is
//! bitwise identical for any number of workers.

use std::ops::Range;

use ndarray::Array2;
use rayon::prelude::*;

use crate::analysis::ShotEnsemble;
use crate::config::RunConfig;
use crate::detector::{self, Background, CcdParams, PixelRegion, ShotRecord};
use crate::error::{Error, Result};
use crate::optics::{self, ObjectMask};
use crate::pdc::{self, PdcGain, VacuumNoise};
use crate::seed::{self, Stream};
use crate::speckle;

pub const CHUNK: u64 = 64;

/// Continuous intensities of one shot at detector pixel resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotIntensities {
    /// Reference arm over the camera window.
    pub r: Array2<f64>,
    /// Test arm over the bucket region.
    pub t: Array2<f64>,
}

pub struct Simulator {
    cfg: RunConfig,
    gain: PdcGain,
    mask: ObjectMask,
    ccd: CcdParams,
    binning: usize,
    bucket: PixelRegion,
    r_window: PixelRegion,
    vacuum_variance: f64,
}

impl Simulator {
    /// Build the simulator; calibrates the detector gain from pilot shots
    /// unless the configuration fixes it.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = &cfg.geometry;
        let gain = pdc::make_gain(&cfg.pdc, &cfg.grid, geom)?;
        pdc::check_divergence(
            cfg.speckle.coherence_diameter_m,
            geom.wavelength(),
            cfg.pdc.angular_bandwidth_rad,
        );
        let mask = ObjectMask::build(&cfg.object, &cfg.grid)?;
        let per_mode = cfg.speckle.mean_intensity_au / cfg.speckle.temporal_modes as f64;
        let peak = speckle::seed_spectrum(&cfg.speckle, &cfg.grid, per_mode)[[0, 0]];
        let mut sim = Self {
            cfg: cfg.clone(),
            gain,
            mask,
            ccd: cfg.ccd_params(cfg.ccd.gain_counts_per_au.unwrap_or(1.0)),
            binning: cfg.ccd_params(1.0).binning(cfg.grid.pitch_m)?,
            bucket: cfg.bucket_region()?,
            r_window: cfg.r_window()?,
            vacuum_variance: peak / cfg.pdc.n_th_per_mode,
        };
        if cfg.ccd.gain_counts_per_au.is_none() {
            let pilot = (0..cfg.pipeline.pilot_shots)
                .into_par_iter()
                .map(|i| {
                    let s = sim.intensities(i)?;
                    Ok(s.r.iter().chain(s.t.iter()).copied().fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?;
            let brightest = pilot.into_iter().fold(0.0, f64::max);
            sim.ccd.gain_counts_per_au = detector::calibrate_gain(
                brightest,
                cfg.ccd.target_peak_counts,
                cfg.ccd.background_mean_counts,
            )?;
            log::info!(
                "calibrated gain: {:.6e} counts per unit intensity",
                sim.ccd.gain_counts_per_au
            );
        }
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn ccd(&self) -> &CcdParams {
        &self.ccd
    }

    pub fn mask(&self) -> &ObjectMask {
        &self.mask
    }

    pub fn gain(&self) -> &PdcGain {
        &self.gain
    }

    pub fn r_window(&self) -> PixelRegion {
        self.r_window
    }

    pub fn bucket_region(&self) -> PixelRegion {
        self.bucket
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.r_window.height, self.r_window.width)
    }

    /// Thermal modes integrated by the bucket detector, from the Test-arm
    /// spectrum, the object transmission and the bucket aperture.
    pub fn expected_bucket_modes(&self) -> f64 {
        let cfg = &self.cfg;
        let mut spectrum = speckle::seed_spectrum(&cfg.speckle, &cfg.grid, 1.0);
        spectrum.zip_mut_with(&self.gain.u, |s, u| *s *= u * u);
        let coherence = speckle::intensity_coherence(&spectrum);
        let region = self.bucket.scaled(self.binning);
        let mut weights = self.mask.power_transmission();
        for ((iy, ix), w) in weights.indexed_iter_mut() {
            let inside = (region.x0..region.x0 + region.width).contains(&ix)
                && (region.y0..region.y0 + region.height).contains(&iy);
            if !inside {
                *w = 0.0;
            } else if let Some(r) = cfg.speckle.envelope_radius_m {
                let r2 = cfg.grid.x(ix).powi(2) + cfg.grid.y(iy).powi(2);
                *w *= (-2.0 * r2 / (r * r)).exp();
            }
        }
        cfg.speckle.temporal_modes as f64 * speckle::integrated_mode_count(&weights, &coherence)
    }

    /// Full-resolution intensities of both arms for one shot, before binning.
    pub fn arm_intensities(&self, index: u64) -> Result<(Array2<f64>, Array2<f64>)> {
        let cfg = &self.cfg;
        let shot_seed = seed::derive(cfg.run.master_seed, index);
        let fields = speckle::generate_mode_fields(
            &cfg.speckle,
            &cfg.grid,
            cfg.geometry.wavelength(),
            shot_seed,
        )?;
        let mut r = Array2::zeros(cfg.grid.shape());
        let mut t = Array2::zeros(cfg.grid.shape());
        for (m, field) in fields.iter().enumerate() {
            let vacuum = cfg.pipeline.spontaneous.then(|| VacuumNoise {
                variance_per_mode: self.vacuum_variance,
                seed: seed::stream_seed(shot_seed, Stream::Vacuum(m as u32)),
            });
            let twin = pdc::seeded_transform(field, &self.gain, vacuum)?;
            t += &optics::arm_t(&twin.field_t, &cfg.geometry, &self.mask)?;
            r += &optics::arm_r(&twin.field_r, &cfg.geometry, cfg.pipeline.lens_aperture_m)?
                .intensity();
        }
        Ok((r, t))
    }

    /// Intensities binned to detector pixels and cut to the two detector regions.
    pub fn intensities(&self, index: u64) -> Result<ShotIntensities> {
        let (r, t) = self.arm_intensities(index)?;
        Ok(ShotIntensities {
            r: detector::crop(&detector::bin(&r, self.binning), &self.r_window)?,
            t: detector::crop(&detector::bin(&t, self.binning), &self.bucket)?,
        })
    }

    pub fn record(&self, index: u64, intensities: &ShotIntensities) -> ShotRecord {
        let shot_seed = seed::derive(self.cfg.run.master_seed, index);
        self.detect(index, intensities, shot_seed)
    }

    fn detect(&self, index: u64, i: &ShotIntensities, shot_seed: u64) -> ShotRecord {
        let q = self.cfg.pipeline.quantize;
        let map_r = detector::record_frame(
            &i.r,
            &self.ccd,
            q,
            seed::stream_seed(shot_seed, Stream::DetectorR),
        );
        let t = detector::record_frame(
            &i.t,
            &self.ccd,
            q,
            seed::stream_seed(shot_seed, Stream::DetectorT),
        );
        ShotRecord {
            shot_index: index,
            map_r,
            bucket_t: t.sum(),
        }
    }

    pub fn shot(&self, index: u64) -> Result<ShotRecord> {
        let i = self.intensities(index)?;
        Ok(self.record(index, &i))
    }

    /// Dark frame `index`: background noise only, from its own seed stream.
    pub fn dark(&self, index: u64) -> ShotRecord {
        let zeros = ShotIntensities {
            r: Array2::zeros(self.frame_shape()),
            t: Array2::zeros((self.bucket.height, self.bucket.width)),
        };
        self.detect(
            index,
            &zeros,
            seed::dark_seed(self.cfg.run.master_seed, index),
        )
    }

    pub fn darks(&self, count: u64, workers: usize) -> Result<Vec<ShotRecord>> {
        with_pool(workers, || {
            (0..count)
                .into_par_iter()
                .map(|i| Ok(self.dark(i)))
                .collect()
        })
    }

    pub fn background(&self, workers: usize) -> Result<Background> {
        if self.cfg.run.dark_frames == 0 {
            return Ok(Background::default());
        }
        Background::from_darks(&self.darks(self.cfg.run.dark_frames, workers)?)
    }

    /// Simulate and accumulate shots `0..count`.
    pub fn run(
        &self,
        count: u64,
        background: Background,
        workers: usize,
        snapshots: &[u64],
        sink: &mut dyn FnMut(&ShotRecord) -> Result<()>,
    ) -> Result<Reduction> {
        reduce(
            count,
            self.frame_shape(),
            background,
            workers,
            snapshots,
            |range| range.map(|i| self.shot(i)).collect(),
            sink,
        )
    }
}

/// Run `f` on a pool of `workers` threads; zero uses the global pool.
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
        .install(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub ensemble: ShotEnsemble,
    /// Copies of the ensemble after the requested shot counts.
    pub snapshots: Vec<ShotEnsemble>,
}

/// Chunk boundaries: multiples of `CHUNK` plus every snapshot count.
fn chunks(count: u64, snapshots: &[u64]) -> Vec<Range<u64>> {
    let mut cuts: Vec<u64> = (0..=count).step_by(CHUNK as usize).collect();
    cuts.extend(snapshots.iter().copied().filter(|&s| s < count));
    cuts.push(count);
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2).map(|w| w[0]..w[1]).collect()
}

/// Deterministic reduction of records `0..count` produced chunk by chunk.
/// Records reach `sink` in index order.
pub fn reduce<P>(
    count: u64,
    shape: (usize, usize),
    background: Background,
    workers: usize,
    snapshots: &[u64],
    produce: P,
    sink: &mut dyn FnMut(&ShotRecord) -> Result<()>,
) -> Result<Reduction>
where
    P: Fn(Range<u64>) -> Result<Vec<ShotRecord>> + Sync,
{
    if let Some(&s) = snapshots.iter().find(|&&s| s > count || s == 0) {
        return Err(Error::Config(format!(
            "snapshot at {s} shots outside 1..={count}"
        )));
    }
    let all = chunks(count, snapshots);
    let threads = if workers == 0 {
        rayon::current_num_threads()
    } else {
        workers
    };
    let wave = (2 * threads).max(1);
    let mut total = ShotEnsemble::new(shape, background);
    let mut taken = Vec::new();
    for group in all.chunks(wave) {
        let parts: Vec<(ShotEnsemble, Vec<ShotRecord>)> = with_pool(workers, || {
            group
                .par_iter()
                .map(|range| {
                    let records = produce(range.clone())?;
                    let mut e = ShotEnsemble::new(shape, background);
                    for r in &records {
                        e.accumulate(r)?;
                    }
                    Ok((e, records))
                })
                .collect()
        })?;
        for (e, records) in parts {
            for r in &records {
                sink(r)?;
            }
            total.merge(&e)?;
            if snapshots.contains(&total.count()) {
                taken.push(total.clone());
            }
        }
    }
    let snapshots = snapshots
        .iter()
        .map(|s| {
            taken
                .iter()
                .find(|e| e.count() == *s)
                .cloned()
                .expect("every snapshot count is a chunk boundary")
        })
        .collect();
    Ok(Reduction {
        ensemble: total,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::ObjectShape;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::laboratory();
        cfg.grid = crate::geometry::GridSpec {
            nx: 128,
            ny: 128,
            pitch_m: 100e-6,
        };
        cfg.ccd.pixel_pitch_m = 100e-6;
        cfg.ccd.bucket_width_px = 40;
        cfg.ccd.bucket_height_px = 40;
        cfg.ccd.r_window_width_px = 32;
        cfg.ccd.r_window_height_px = 32;
        cfg.speckle.coherence_diameter_m = 640e-6;
        cfg.object = ObjectShape::CircularHole { diameter_m: 2e-3 };
        cfg.run.dark_frames = 100;
        cfg.pipeline.pilot_shots = 4;
        cfg
    }

    #[test]
    fn chunking_respects_snapshots() {
        let c = chunks(200, &[50, 128]);
        assert_eq!(c, vec![0..50, 50..64, 64..128, 128..192, 192..200]);
        assert!(chunks(0, &[]).is_empty());
    }

    #[test]
    fn gain_calibration_hits_target() {
        let sim = Simulator::new(&small()).unwrap();
        let brightest = (0..4)
            .map(|i| {
                let s = sim.intensities(i).unwrap();
                s.r.iter().chain(s.t.iter()).copied().fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let counts = brightest * sim.ccd().gain_counts_per_au + 100.0;
        assert!((counts - 3000.0).abs() < 1e-6);
    }

    #[test]
    fn shots_are_reproducible() {
        let sim = Simulator::new(&small()).unwrap();
        assert_eq!(sim.shot(7).unwrap(), sim.shot(7).unwrap());
        assert_ne!(sim.shot(7).unwrap().map_r, sim.shot(8).unwrap().map_r);
        assert_eq!(sim.dark(3), sim.dark(3));
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let sim = Simulator::new(&small()).unwrap();
        let bg = sim.background(1).unwrap();
        let a = sim.run(150, bg, 1, &[100], &mut |_| Ok(())).unwrap();
        let b = sim.run(150, bg, 3, &[100], &mut |_| Ok(())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots[0].count(), 100);
    }

    #[test]
    fn sink_sees_records_in_order() {
        let sim = Simulator::new(&small()).unwrap();
        let mut seen = Vec::new();
        sim.run(70, Background::default(), 2, &[], &mut |r| {
            seen.push(r.shot_index);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..70).collect::<Vec<_>>());
    }
}
