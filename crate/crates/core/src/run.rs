//! End-to-end commands: simulate a stack, analyze it, and the two
//! self-check runs. Every output is a pure function of the inputs, so
//! repeated runs produce identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::analysis::{self, CorrelationMaps, ImageMetrics, ShotEnsemble};
use crate::config::RunConfig;
use crate::detector::{Background, ShotRecord};
use crate::error::{Error, IoContext, Result};
use crate::fock::{self, FockRow};
use crate::modefit::{self, FitCurve, FitOptions, ModeFitResult};
use crate::optics::ObjectShape;
use crate::pgm;
use crate::pipeline::{self, Simulator};
use crate::seed;
use crate::speckle;
use crate::stack::{self, Manifest, StackReader, StackWriter};

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG: &str = "config.toml";
pub const SHOT_STACK: &str = "shots.stack";
pub const DARK_STACK: &str = "darks.stack";
pub const MANIFEST_FORMAT: &str = "ghostcorr-run-1";

/// Ordered `key = value` report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<(String, String)>,
}

impl Report {
    pub fn add(&mut self, key: &str, value: impl ToString) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.lines.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).at(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub out_dir: PathBuf,
    pub shots: u64,
    pub dark_frames: u64,
    pub gain_counts_per_au: f64,
    pub config_hash: String,
    pub expected_bucket_modes: f64,
}

/// Simulate `cfg.run.shots` shots and `cfg.run.dark_frames` dark frames into
/// `cfg.run.output_dir`, with the first `export_frames` frames also written
/// as 16-bit PGM images.
pub fn simulate(cfg: &RunConfig, workers: usize, export_frames: u64) -> Result<SimulateSummary> {
    if !cfg.pipeline.quantize {
        return Err(Error::Config(
            "frame stacks need pipeline.quantize = true".into(),
        ));
    }
    let sim = pipeline::with_pool(workers, || Simulator::new(cfg))?;
    let dir = &cfg.run.output_dir;
    std::fs::create_dir_all(dir).at(dir)?;
    write(&dir.join(CONFIG), &cfg.to_toml())?;
    let (h, w) = sim.frame_shape();
    let pitch = cfg.ccd.pixel_pitch_m;

    let dark_path = dir.join(DARK_STACK);
    let mut darks = StackWriter::create(&dark_path, w, h, pitch, true, cfg.run.dark_frames)?;
    for d in sim.darks(cfg.run.dark_frames, workers)? {
        darks.write(&d)?;
    }
    darks.finish()?;

    let shot_path = dir.join(SHOT_STACK);
    let mut shots = StackWriter::create(&shot_path, w, h, pitch, false, cfg.run.shots)?;
    let mut sink = |r: &ShotRecord| -> Result<()> {
        if r.shot_index < export_frames {
            pgm::write_counts(
                &dir.join(format!("frame_{:06}.pgm", r.shot_index)),
                &r.map_r,
            )?;
        }
        shots.write(r)
    };
    sim.run(
        cfg.run.shots,
        Background::default(),
        workers,
        &[],
        &mut sink,
    )?;
    shots.finish()?;

    let summary = SimulateSummary {
        out_dir: dir.clone(),
        shots: cfg.run.shots,
        dark_frames: cfg.run.dark_frames,
        gain_counts_per_au: sim.ccd().gain_counts_per_au,
        config_hash: cfg.hash(),
        expected_bucket_modes: sim.expected_bucket_modes(),
    };
    let mut m = Manifest::default();
    m.set("format", MANIFEST_FORMAT);
    m.set("config_hash", &summary.config_hash);
    m.set("master_seed", cfg.run.master_seed);
    m.set("seed_derivation", "splitmix64(master, shot_index)");
    m.set("shots", cfg.run.shots);
    m.set("dark_frames", cfg.run.dark_frames);
    m.set("chunk", pipeline::CHUNK);
    m.set("gain_counts_per_au", summary.gain_counts_per_au);
    m.set("frame_width_px", w);
    m.set("frame_height_px", h);
    m.set("pixel_pitch_m", pitch);
    m.set(
        "expected_bucket_modes",
        format!("{:.6}", summary.expected_bucket_modes),
    );
    m.set("shot_stack", SHOT_STACK);
    m.set("shot_stack_sha256", stack::file_sha256(&shot_path)?);
    m.set("dark_stack", DARK_STACK);
    m.set("dark_stack_sha256", stack::file_sha256(&dark_path)?);
    m.save(&dir.join(MANIFEST))?;
    Ok(summary)
}

/// Per-shot samples for the mode fits: one Reference pixel and the bucket,
/// plus the matching dark-frame samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitSamples {
    pub pixel: (usize, usize),
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub background_r: Vec<f64>,
    pub background_t: Vec<f64>,
}

impl FitSamples {
    /// Sample the center pixel of frames of the given shape.
    pub fn centered(shape: (usize, usize)) -> Self {
        Self {
            pixel: (shape.0 / 2, shape.1 / 2),
            ..Self::default()
        }
    }

    pub fn push(&mut self, record: &ShotRecord) {
        self.r.push(record.map_r[self.pixel]);
        self.t.push(record.bucket_t);
    }

    /// Dark samples; every pixel of every dark frame shares one background
    /// distribution, so all of them are pooled for the Reference pixel.
    pub fn set_darks(&mut self, darks: &[ShotRecord]) {
        self.background_r = darks.iter().flat_map(|d| d.map_r.iter().copied()).collect();
        self.background_t = darks.iter().map(|d| d.bucket_t).collect();
    }

    /// The first `n` shots.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            r: self.r[..n.min(self.r.len())].to_vec(),
            t: self.t[..n.min(self.t.len())].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeFit {
    pub result: ModeFitResult,
    pub curve: FitCurve,
}

fn fit(samples: &[f64], background: &[f64]) -> std::result::Result<ModeFit, String> {
    let opts = FitOptions::default();
    let result = modefit::fit_mu(samples, background, &opts).map_err(|e| e.to_string())?;
    let curve = modefit::fit_curve(samples, background, &result, &opts);
    Ok(ModeFit { result, curve })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub count: u64,
    pub maps: CorrelationMaps,
    pub metrics: ImageMetrics,
    pub fit_r: std::result::Result<ModeFit, String>,
    pub fit_t: std::result::Result<ModeFit, String>,
    /// `C (1 - V) / V` at the visibility maximum.
    pub mode_consistency: Option<f64>,
    /// `sqrt(mu_R mu_T)` from the two fits.
    pub fitted_modes: Option<f64>,
    /// PSF width of the correlation map, for pinhole objects.
    pub psf_width_m: Option<f64>,
    pub identity_defect: f64,
    /// Angular gain profile assumed by the simulation.
    pub gain_profile: String,
}

/// Correlation maps, image metrics and mode fits of an accumulated ensemble.
pub fn analyze_ensemble(
    ensemble: &ShotEnsemble,
    cfg: &RunConfig,
    samples: &FitSamples,
) -> Result<Analysis> {
    let maps = analysis::correlation_maps(ensemble)?;
    let pitch = cfg.ccd.pixel_pitch_m;
    let metrics = analysis::image_metrics(&maps, pitch, &cfg.geometry, &cfg.object);
    let fit_r = fit(&samples.r, &samples.background_r);
    let fit_t = fit(&samples.t, &samples.background_t);
    let mode_consistency = modefit::mode_consistency(metrics.c_at_v_max, metrics.v_max).ok();
    let fitted_modes = match (&fit_r, &fit_t) {
        (Ok(r), Ok(t)) if r.result.mu.is_finite() && t.result.mu.is_finite() => {
            Some((r.result.mu * t.result.mu).sqrt())
        }
        _ => None,
    };
    let psf_width_m = match cfg.object {
        ObjectShape::Pinhole { .. } => {
            let masked = ndarray::Zip::from(&maps.corr_coeff)
                .and(&maps.corr_valid)
                .map_collect(|&c, &ok| if ok { c } else { 0.0 });
            analysis::psf_width(&masked, pitch).ok()
        }
        _ => None,
    };
    let identity_defect = analysis::visibility_identity_defect(ensemble, &maps);
    Ok(Analysis {
        count: ensemble.count(),
        maps,
        metrics,
        fit_r,
        fit_t,
        mode_consistency,
        fitted_modes,
        psf_width_m,
        identity_defect,
        gain_profile: format!(
            "gaussian (assumed), hwhm {} rad",
            cfg.pdc.angular_bandwidth_rad
        ),
    })
}

fn fit_lines(report: &mut Report, arm: &str, fit: &std::result::Result<ModeFit, String>) {
    match fit {
        Ok(f) => {
            let r = &f.result;
            report.add(&format!("mu_{arm}"), format!("{:.6}", r.mu));
            report.add(&format!("mu_{arm}_moment"), format!("{:.6}", r.mu_moment));
            report.add(&format!("mu_{arm}_status"), format!("{:?}", r.status));
            report.add(&format!("mu_{arm}_method"), format!("{:?}", r.method));
            report.add(&format!("mu_{arm}_reduced_chi2"), format!("{:.4}", r.gof));
            report.add(&format!("mu_{arm}_bins"), r.bins);
        }
        Err(e) => report.add(&format!("mu_{arm}"), format!("NA ({e})")),
    }
}

impl Analysis {
    pub fn report(&self) -> Report {
        let m = &self.metrics;
        let mut r = Report::default();
        r.add("shots", self.count);
        r.add("image", m.verdict);
        r.add("peak_corr_coeff", format!("{:.6}", m.peak_c));
        r.add("noise_floor", format!("{:.6}", m.noise_floor));
        r.add("magnification", format!("{:.6}", m.magnification));
        r.add("hole_diameter_m", opt(m.hole_diameter_m));
        r.add("expected_hole_diameter_m", opt(m.expected_hole_m));
        r.add("wire_width_m", opt(m.wire_width_m));
        r.add("expected_wire_width_m", opt(m.expected_wire_m));
        r.add("wire_contrast", opt(m.wire_contrast));
        r.add(
            "centroid_object_m",
            format!(
                "{:.6e}, {:.6e}",
                m.centroid_object_m.0, m.centroid_object_m.1
            ),
        );
        r.add("visibility_max", format!("{:.6}", m.v_max));
        r.add(
            "corr_coeff_at_visibility_max",
            format!("{:.6}", m.c_at_v_max),
        );
        fit_lines(&mut r, "r", &self.fit_r);
        fit_lines(&mut r, "t", &self.fit_t);
        r.add("mode_consistency", opt(self.mode_consistency));
        r.add("fitted_modes", opt(self.fitted_modes));
        r.add("psf_width_m", opt(self.psf_width_m));
        r.add(
            "visibility_identity_defect",
            format!("{:.3e}", self.identity_defect),
        );
        r.add("gain_profile", &self.gain_profile);
        r
    }

    /// Maps (PGM upright, CSV as detected), fit curves and the report.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let maps = [
            ("g2", &self.maps.g2),
            ("corr_coeff", &self.maps.corr_coeff),
            ("visibility", &self.maps.visibility),
        ];
        for (name, map) in maps {
            let (img, _, _) = pgm::scale_to_u16(&analysis::upright(map));
            pgm::write_pgm16(&dir.join(format!("{name}.pgm")), &img)?;
            write(&dir.join(format!("{name}.csv")), &analysis::map_to_csv(map))?;
        }
        for (arm, fit) in [("r", &self.fit_r), ("t", &self.fit_t)] {
            if let Ok(f) = fit {
                write(&dir.join(format!("fit_{arm}.csv")), &curve_csv(&f.curve))?;
            }
        }
        write(&dir.join("report.txt"), &self.report().render())
    }
}

fn curve_csv(c: &FitCurve) -> String {
    let mut s = String::from("bin_low,bin_high,count,model\n");
    for (i, (n, m)) in c.counts.iter().zip(&c.model).enumerate() {
        let _ = writeln!(
            s,
            "{:.6e},{:.6e},{},{:.6e}",
            c.edges[i],
            c.edges[i + 1],
            n,
            m
        );
    }
    s
}

/// Analyze a simulated run directory against the configuration that made it.
pub fn analyze(dir: &Path, cfg: &RunConfig, workers: usize) -> Result<Analysis> {
    let manifest = Manifest::load(&dir.join(MANIFEST))?;
    if manifest.get("format")? != MANIFEST_FORMAT {
        return Err(Error::ManifestMismatch(format!(
            "unknown format `{}`",
            manifest.get("format")?
        )));
    }
    let hash = cfg.hash();
    if manifest.get("config_hash")? != hash {
        return Err(Error::ManifestMismatch(format!(
            "stack was made with config {}, this config hashes to {hash}",
            manifest.get("config_hash")?
        )));
    }
    let open = |name_key: &str, sha_key: &str| -> Result<StackReader> {
        let path = dir.join(manifest.get(name_key)?);
        if stack::file_sha256(&path)? != manifest.get(sha_key)? {
            return Err(Error::CorruptStack {
                path,
                reason: "checksum differs from manifest".into(),
            });
        }
        StackReader::open(&path)
    };
    let shots = open("shot_stack", "shot_stack_sha256")?;
    let darks = open("dark_stack", "dark_stack_sha256")?;
    if shots.count() == 0 {
        return Err(Error::InsufficientData("the shot stack is empty".into()));
    }
    let shape = (shots.header.height as usize, shots.header.width as usize);
    let dark_records = darks.read_all()?;
    let background = if dark_records.is_empty() {
        Background::default()
    } else {
        Background::from_darks(&dark_records)?
    };
    let mut samples = FitSamples::centered(shape);
    samples.set_darks(&dark_records);
    let mut sink = |r: &ShotRecord| -> Result<()> {
        samples.push(r);
        Ok(())
    };
    let reduction = pipeline::reduce(
        shots.count(),
        shape,
        background,
        workers,
        &[],
        |range| shots.read_range(range),
        &mut sink,
    )?;
    analyze_ensemble(&reduction.ensemble, cfg, &samples)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeckleCheck {
    pub realizations: u64,
    pub coherence_diameter_m: f64,
    pub expected_coherence_diameter_m: f64,
    pub mean_intensity: f64,
    pub mu_moment: f64,
    pub expected_mu: f64,
}

impl SpeckleCheck {
    pub fn report(&self) -> Report {
        let mut r = Report::default();
        r.add("realizations", self.realizations);
        r.add(
            "coherence_diameter_m",
            format!("{:.6e}", self.coherence_diameter_m),
        );
        r.add(
            "expected_coherence_diameter_m",
            format!("{:.6e}", self.expected_coherence_diameter_m),
        );
        r.add("mean_intensity_au", format!("{:.6}", self.mean_intensity));
        r.add("mu_moment", format!("{:.6}", self.mu_moment));
        r.add("expected_mu", format!("{:.6}", self.expected_mu));
        r
    }
}

/// Generate seed-field realizations and compare their statistics with the
/// configured coherence diameter and mode count. Writes the first intensity
/// map and its complex field (little-endian `f64` pairs) to `out`.
pub fn speckle_check(cfg: &RunConfig, realizations: u64, out: &Path) -> Result<SpeckleCheck> {
    if realizations == 0 {
        return Err(Error::InsufficientData(
            "speckle check needs at least one realization".into(),
        ));
    }
    let lambda = cfg.geometry.wavelength();
    let mut diameters = 0.0;
    let mut pooled: Vec<f64> = Vec::new();
    let mut first: Option<Array2<f64>> = None;
    for i in 0..realizations {
        let shot_seed = seed::derive(cfg.run.master_seed, i);
        let intensity =
            speckle::generate_multimode_intensity(&cfg.speckle, &cfg.grid, lambda, shot_seed)?;
        diameters += speckle::coherence_diameter_of_intensity(&intensity, cfg.grid.pitch_m)?;
        pooled.extend(intensity.iter().copied());
        if i == 0 {
            std::fs::create_dir_all(out).at(out)?;
            let field = speckle::generate_mode_fields(&cfg.speckle, &cfg.grid, lambda, shot_seed)?;
            let path = out.join("speckle_field.bin");
            std::fs::write(&path, field[0].to_le_bytes()).at(&path)?;
            first = Some(intensity);
        }
    }
    let first = first.expect("at least one realization");
    let (img, _, _) = pgm::scale_to_u16(&first);
    pgm::write_pgm16(&out.join("speckle.pgm"), &img)?;
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let check = SpeckleCheck {
        realizations,
        coherence_diameter_m: diameters / realizations as f64,
        expected_coherence_diameter_m: cfg.speckle.coherence_diameter_m,
        mean_intensity: mean,
        mu_moment: modefit::moment_mu(&pooled)?,
        expected_mu: cfg.speckle.temporal_modes as f64,
    };
    write(&out.join("speckle_check.txt"), &check.report().render())?;
    Ok(check)
}

/// Fock-basis separability table over the product of the two parameter
/// lists, written to `out/fock_check.csv`.
pub fn fock_check(n_th: &[f64], n_pdc: &[f64], cutoff: usize, out: &Path) -> Result<Vec<FockRow>> {
    let rows = fock::fock_table(n_th, n_pdc, cutoff)?;
    std::fs::create_dir_all(out).at(out)?;
    write(&out.join("fock_check.csv"), &fock::fock_table_csv(&rows))?;
    Ok(rows)
}
