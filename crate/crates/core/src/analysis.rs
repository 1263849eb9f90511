//! Streaming ensemble moments and ghost-image maps.
//!
//! Moments are kept as running means and co-moments (sums of products of
//! deviations) so that partial ensembles merge exactly. Background means are
//! removed as shots arrive; background variances are removed when variances
//! are read out.

use ndarray::{Array2, Zip};

use crate::detector::{Background, ShotRecord};
use crate::error::{Error, Result};
use crate::geometry::OpticalGeometry;
use crate::optics::ObjectShape;

#[derive(Clone, Debug, PartialEq)]
pub struct ShotEnsemble {
    count: u64,
    mean_r: Array2<f64>,
    m2_r: Array2<f64>,
    mean_t: f64,
    m2_t: f64,
    c_rt: Array2<f64>,
    background: Background,
}

impl ShotEnsemble {
    pub fn new(shape: (usize, usize), background: Background) -> Self {
        Self {
            count: 0,
            mean_r: Array2::zeros(shape),
            m2_r: Array2::zeros(shape),
            mean_t: 0.0,
            m2_t: 0.0,
            c_rt: Array2::zeros(shape),
            background,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean_r.dim()
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn accumulate(&mut self, shot: &ShotRecord) -> Result<()> {
        if shot.map_r.dim() != self.mean_r.dim() {
            return Err(Error::GridMismatch(format!(
                "shot {} has a {:?} frame, ensemble expects {:?}",
                shot.shot_index,
                shot.map_r.dim(),
                self.mean_r.dim()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        let t = shot.bucket_t - self.background.t.mean;
        let dt = t - self.mean_t;
        self.mean_t += dt / n;
        let dt_after = t - self.mean_t;
        self.m2_t += dt * dt_after;
        let bg_r = self.background.r.mean;
        Zip::from(&mut self.mean_r)
            .and(&mut self.m2_r)
            .and(&mut self.c_rt)
            .and(&shot.map_r)
            .for_each(|mean, m2, c, &raw| {
                let r = raw - bg_r;
                let dr = r - *mean;
                *mean += dr / n;
                *m2 += dr * (r - *mean);
                *c += dr * dt_after;
            });
        Ok(())
    }

    /// Combine with an ensemble accumulated over a disjoint set of shots.
    pub fn merge(&mut self, other: &ShotEnsemble) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        if other.background != self.background {
            return Err(Error::Config(
                "cannot merge ensembles with different background models".into(),
            ));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let dt = other.mean_t - self.mean_t;
        let w = na * nb / n;
        self.mean_t += dt * nb / n;
        self.m2_t += other.m2_t + dt * dt * w;
        Zip::from(&mut self.mean_r)
            .and(&mut self.m2_r)
            .and(&mut self.c_rt)
            .and(&other.mean_r)
            .and(&other.m2_r)
            .and(&other.c_rt)
            .for_each(|mean, m2, c, &mb, &m2b, &cb| {
                let dr = mb - *mean;
                *mean += dr * nb / n;
                *m2 += m2b + dr * dr * w;
                *c += cb + dr * dt * w;
            });
        self.count += other.count;
        Ok(())
    }

    pub fn mean_r(&self) -> &Array2<f64> {
        &self.mean_r
    }

    pub fn mean_t(&self) -> f64 {
        self.mean_t
    }

    fn denom(&self) -> f64 {
        (self.count.max(2) - 1) as f64
    }

    /// Background-corrected per-pixel variance of the Reference frames.
    pub fn var_r(&self) -> Array2<f64> {
        let (d, bg) = (self.denom(), self.background.r.variance);
        self.m2_r.mapv(|m2| (m2 / d - bg).max(0.0))
    }

    /// Background-corrected bucket variance.
    pub fn var_t(&self) -> f64 {
        (self.m2_t / self.denom() - self.background.t.variance).max(0.0)
    }

    /// Per-pixel covariance `<I_R I_T> - <I_R><I_T>`.
    pub fn cov_rt(&self) -> Array2<f64> {
        let d = self.denom();
        self.c_rt.mapv(|c| c / d)
    }
}

/// Ghost-image maps derived from an ensemble. Pixels where a map is
/// undefined carry 0 and are `false` in the corresponding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMaps {
    pub g2: Array2<f64>,
    pub corr_coeff: Array2<f64>,
    pub visibility: Array2<f64>,
    pub corr_valid: Array2<bool>,
    pub visibility_valid: Array2<bool>,
    pub count: u64,
}

pub fn g2_map(ensemble: &ShotEnsemble) -> Result<Array2<f64>> {
    if ensemble.count() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} shots accumulated, need at least 2",
            ensemble.count()
        )));
    }
    Ok(ensemble.cov_rt())
}

/// Correlation coefficient. Pixels whose background-corrected variance does
/// not exceed the background variance carry too little light and are masked.
pub fn corr_coeff_map(ensemble: &ShotEnsemble) -> Result<(Array2<f64>, Array2<bool>)> {
    let g2 = g2_map(ensemble)?;
    let var_t = ensemble.var_t();
    let var_r = ensemble.var_r();
    let floor = ensemble.background().r.variance;
    let valid = var_r.mapv(|v| v > floor && v * var_t > 0.0);
    let c = Zip::from(&g2)
        .and(&var_r)
        .and(&valid)
        .map_collect(|&g, &v, &ok| if ok { g / (v * var_t).sqrt() } else { 0.0 });
    Ok((c, valid))
}

pub fn visibility_map(ensemble: &ShotEnsemble) -> Result<(Array2<f64>, Array2<bool>)> {
    let g2 = g2_map(ensemble)?;
    let mean_t = ensemble.mean_t();
    let denom = Zip::from(&g2)
        .and(ensemble.mean_r())
        .map_collect(|&g, &m| m * mean_t + g);
    let valid = denom.mapv(|d| d > 0.0);
    let v = Zip::from(&g2)
        .and(&denom)
        .map_collect(|&g, &d| if d > 0.0 { g / d } else { 0.0 });
    Ok((v, valid))
}

pub fn correlation_maps(ensemble: &ShotEnsemble) -> Result<CorrelationMaps> {
    let g2 = g2_map(ensemble)?;
    let (corr_coeff, corr_valid) = corr_coeff_map(ensemble)?;
    let (visibility, visibility_valid) = visibility_map(ensemble)?;
    Ok(CorrelationMaps {
        g2,
        corr_coeff,
        visibility,
        corr_valid,
        visibility_valid,
        count: ensemble.count(),
    })
}

/// Largest deviation from `V = C / (<I_R><I_T> / sqrt(var_R var_T) + C)`
/// over pixels where both sides are defined.
pub fn visibility_identity_defect(ensemble: &ShotEnsemble, maps: &CorrelationMaps) -> f64 {
    let var_t = ensemble.var_t();
    let var_r = ensemble.var_r();
    let mean_t = ensemble.mean_t();
    let mut worst: f64 = 0.0;
    for ((idx, &c), &vr) in maps.corr_coeff.indexed_iter().zip(var_r.iter()) {
        if !(maps.corr_valid[idx] && maps.visibility_valid[idx]) {
            continue;
        }
        let ratio = ensemble.mean_r()[idx] * mean_t / (vr * var_t).sqrt();
        let denom = ratio + c;
        if denom == 0.0 {
            continue;
        }
        let predicted = c / denom;
        let v = maps.visibility[idx];
        worst = worst.max((predicted - v).abs() / v.abs().max(1e-300).max(predicted.abs()));
    }
    worst
}

/// Rotate a map by 180 degrees so the inverted ghost image reads upright.
pub fn upright(map: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = map.dim();
    Array2::from_shape_fn((ny, nx), |(y, x)| map[[ny - 1 - y, nx - 1 - x]])
}

/// 3x3 box average with edge clamping.
pub fn smooth3(map: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = map.dim();
    Array2::from_shape_fn((ny, nx), |(y, x)| {
        let (mut s, mut n) = (0.0, 0.0);
        for yy in y.saturating_sub(1)..(y + 2).min(ny) {
            for xx in x.saturating_sub(1)..(x + 2).min(nx) {
                s += map[[yy, xx]];
                n += 1.0;
            }
        }
        s / n
    })
}

/// Standard deviation of the valid pixels at least `inner_radius` pixels
/// from the map center, or of all valid pixels when that ring is too sparse.
pub fn noise_floor(map: &Array2<f64>, valid: &Array2<bool>, inner_radius: f64) -> f64 {
    let (ny, nx) = map.dim();
    let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
    let pick = |ring: bool| -> Vec<f64> {
        map.indexed_iter()
            .filter(|((y, x), _)| valid[[*y, *x]])
            .filter(|((y, x), _)| !ring || (*x as f64 - cx).hypot(*y as f64 - cy) >= inner_radius)
            .map(|(_, &v)| v)
            .collect()
    };
    let mut vals = pick(true);
    if vals.len() < 30 {
        vals = pick(false);
    }
    if vals.len() < 2 {
        return f64::NAN;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Inner radius of the noise ring: 30% of the smaller map dimension.
pub fn default_noise_radius(shape: (usize, usize)) -> f64 {
    0.3 * shape.0.min(shape.1) as f64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageVerdict {
    Image,
    NoImage,
}

impl std::fmt::Display for ImageVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImageVerdict::Image => "image",
            ImageVerdict::NoImage => "no image",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub verdict: ImageVerdict,
    pub peak_c: f64,
    pub noise_floor: f64,
    /// Outer half-maximum width of the horizontal profile, image plane.
    pub hole_diameter_m: Option<f64>,
    /// Inner half-maximum width around the central minimum, image plane.
    pub wire_width_m: Option<f64>,
    /// Michelson contrast `(L - c) / (L + c)` between the mean lobe maximum
    /// `L` and the profile value `c` midway between the outer crossings.
    pub wire_contrast: Option<f64>,
    /// Centroid of the image in upright object coordinates.
    pub centroid_object_m: (f64, f64),
    pub expected_hole_m: Option<f64>,
    pub expected_wire_m: Option<f64>,
    pub magnification: f64,
    /// Maximum of the smoothed visibility over the image support.
    pub v_max: f64,
    /// Smoothed correlation coefficient at the visibility maximum.
    pub c_at_v_max: f64,
}

/// Signal-to-noise threshold below which no image is reported.
pub const IMAGE_SNR: f64 = 5.0;

/// Half-maximum size measurements on the correlation-coefficient map.
///
/// `pitch` is the detector pixel pitch; the map center sits at pixel
/// `(nx / 2, ny / 2)`. The noise floor is taken from valid pixels outside
/// the central disc of `default_noise_radius`, so the image must lie near
/// the axis.
pub fn image_metrics(
    maps: &CorrelationMaps,
    pitch: f64,
    geom: &OpticalGeometry,
    shape: &ObjectShape,
) -> ImageMetrics {
    let m = geom.magnification();
    let valid = &maps.corr_valid;
    let c = smooth3(&maps.corr_coeff);
    let (ny, nx) = c.dim();
    let radius = default_noise_radius((ny, nx));
    let noise = noise_floor(&maps.corr_coeff, valid, radius);
    let peak = c
        .iter()
        .zip(valid.iter())
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let (expected_hole_m, expected_wire_m) = match shape {
        ObjectShape::HoleWithWire {
            hole_diameter_m,
            wire_width_m,
            ..
        } => (Some(m * hole_diameter_m), Some(m * wire_width_m)),
        ObjectShape::CircularHole { diameter_m } => (Some(m * diameter_m), None),
        _ => (None, None),
    };
    let mut out = ImageMetrics {
        verdict: ImageVerdict::NoImage,
        peak_c: peak,
        noise_floor: noise,
        hole_diameter_m: None,
        wire_width_m: None,
        wire_contrast: None,
        centroid_object_m: (0.0, 0.0),
        expected_hole_m,
        expected_wire_m,
        magnification: m,
        v_max: 0.0,
        c_at_v_max: 0.0,
    };
    let smooth_noise = noise_floor(&c, valid, radius);
    if !(peak > 0.0 && peak > IMAGE_SNR * smooth_noise) {
        return out;
    }
    out.verdict = ImageVerdict::Image;

    let half = 0.5 * peak;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((y, x), &v) in c.indexed_iter() {
        if v > half && valid[[y, x]] {
            sw += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    let (cx, cy) = (sx / sw, sy / sw);
    out.centroid_object_m = (
        -(cx - (nx / 2) as f64) * pitch / m,
        -(cy - (ny / 2) as f64) * pitch / m,
    );

    let smooth_v = smooth3(&maps.visibility);
    for ((y, x), &v) in smooth_v.indexed_iter() {
        if c[[y, x]] > half && valid[[y, x]] && maps.visibility_valid[[y, x]] && v > out.v_max {
            out.v_max = v;
            out.c_at_v_max = c[[y, x]];
        }
    }

    let row = cy.round() as usize;
    let rows = row.saturating_sub(2)..(row + 3).min(ny);
    let nrows = rows.len() as f64;
    let profile: Vec<f64> = (0..nx)
        .map(|x| rows.clone().map(|y| maps.corr_coeff[[y, x]]).sum::<f64>() / nrows)
        .collect();
    let level = 0.5 * profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let Some((left, right)) = outer_crossings(&profile, level) else {
        return out;
    };
    out.hole_diameter_m = Some((right - left) * pitch);

    let (li, ri) = (left.ceil() as usize, right.floor() as usize);
    if ri <= li + 2 {
        return out;
    }
    let mid = 0.5 * (left + right);
    let center = interpolate(&profile, mid);
    let m = mid.floor() as usize;
    let lobe_l = profile[li..=m]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lobe_r = profile[m + 1..=ri]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lobes = 0.5 * (lobe_l + lobe_r);
    if lobes + center > 0.0 {
        out.wire_contrast = Some(((lobes - center) / (lobes + center)).clamp(0.0, 1.0));
    }
    if center < level {
        let mut a = m;
        while a > li && profile[a - 1] < level {
            a -= 1;
        }
        let mut b = m;
        while b < ri && profile[b + 1] < level {
            b += 1;
        }
        if a > li && b < ri && profile[a] < level && profile[b] < level {
            let xl = crossing(&profile, a - 1, level);
            let xr = crossing(&profile, b, level);
            out.wire_width_m = Some((xr - xl) * pitch);
        }
    }
    out
}

fn interpolate(p: &[f64], x: f64) -> f64 {
    let i = (x.floor() as usize).min(p.len() - 2);
    let t = x - i as f64;
    p[i] * (1.0 - t) + p[i + 1] * t
}

/// Interpolated position where the profile crosses `level` between samples
/// `i` and `i + 1`.
fn crossing(p: &[f64], i: usize, level: f64) -> f64 {
    let (a, b) = (p[i], p[i + 1]);
    if a == b {
        i as f64 + 0.5
    } else {
        i as f64 + (level - a) / (b - a)
    }
}

fn outer_crossings(p: &[f64], level: f64) -> Option<(f64, f64)> {
    let first = p.iter().position(|&v| v >= level)?;
    let last = p.iter().rposition(|&v| v >= level)?;
    if first == 0 || last + 1 >= p.len() {
        return None;
    }
    Some((crossing(p, first - 1, level), crossing(p, last, level)))
}

/// FWHM of a compact peak, from a Gaussian fit to the log of the samples
/// above 30% of the maximum along the row and column through the peak,
/// averaged over both axes.
pub fn psf_width(map: &Array2<f64>, pitch: f64) -> Result<f64> {
    let (ny, nx) = map.dim();
    let ((py, px), &peak) = map
        .indexed_iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InsufficientData("empty map".into()))?;
    if !(peak > 0.0) {
        return Err(Error::Domain("map has no positive peak".into()));
    }
    let row: Vec<f64> = (0..nx).map(|x| map[[py, x]]).collect();
    let col: Vec<f64> = (0..ny).map(|y| map[[y, px]]).collect();
    let sx = gaussian_sigma(&row, px)?;
    let sy = gaussian_sigma(&col, py)?;
    Ok(0.5 * (sx + sy) * 2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * pitch)
}

fn gaussian_sigma(p: &[f64], at: usize) -> Result<f64> {
    let floor = 0.3 * p[at];
    let mut lo = at;
    while lo > 0 && p[lo - 1] > floor && p[lo - 1] < p[lo] * 1.5 {
        lo -= 1;
    }
    let mut hi = at;
    while hi + 1 < p.len() && p[hi + 1] > floor && p[hi + 1] < p[hi] * 1.5 {
        hi += 1;
    }
    // A peak narrower than the threshold window still has positive neighbours.
    if hi - lo < 2 {
        lo = at.saturating_sub(1);
        hi = (at + 1).min(p.len() - 1);
    }
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .filter(|&i| p[i] > 0.0)
        .map(|i| (i as f64 - at as f64, p[i].ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Unresolved(
            "peak has fewer than three positive samples".into(),
        ));
    }
    let curvature = quadratic_fit(&pts)[2];
    if !(curvature < 0.0) {
        return Err(Error::Unresolved("peak profile is not concave".into()));
    }
    Ok((-0.5 / curvature).sqrt())
}

/// Least-squares `y = c0 + c1 x + c2 x^2`.
fn quadratic_fit(pts: &[(f64, f64)]) -> [f64; 3] {
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    for &(x, y) in pts {
        let v = nalgebra::Vector3::new(1.0, x, x * x);
        a += v * v.transpose();
        b += v * y;
    }
    let c = a.lu().solve(&b).unwrap_or_else(nalgebra::Vector3::zeros);
    [c[0], c[1], c[2]]
}

/// Comma-separated rows, one line per map row.
pub fn map_to_csv(map: &Array2<f64>) -> String {
    let mut out = String::with_capacity(map.len() * 12);
    for row in map.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BackgroundStats;
    use rand::Rng;

    fn shot(i: u64, map: Array2<f64>, t: f64) -> ShotRecord {
        ShotRecord {
            shot_index: i,
            map_r: map,
            bucket_t: t,
        }
    }

    fn random_shots(n: usize, seed: u64) -> Vec<ShotRecord> {
        let mut rng = crate::seed::rng(seed);
        (0..n)
            .map(|i| {
                let t: f64 = rng.random::<f64>() * 10.0;
                let map = Array2::from_shape_fn((3, 4), |(y, x)| {
                    rng.random::<f64>() + if (y, x) == (1, 1) { 0.5 * t } else { 0.0 }
                });
                shot(i as u64, map, t)
            })
            .collect()
    }

    fn two_pass(shots: &[ShotRecord], y: usize, x: usize) -> (f64, f64, f64) {
        let n = shots.len() as f64;
        let mr = shots.iter().map(|s| s.map_r[[y, x]]).sum::<f64>() / n;
        let mt = shots.iter().map(|s| s.bucket_t).sum::<f64>() / n;
        let vr = shots
            .iter()
            .map(|s| (s.map_r[[y, x]] - mr).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let vt = shots.iter().map(|s| (s.bucket_t - mt).powi(2)).sum::<f64>() / (n - 1.0);
        let c = shots
            .iter()
            .map(|s| (s.map_r[[y, x]] - mr) * (s.bucket_t - mt))
            .sum::<f64>()
            / (n - 1.0);
        (vr, vt, c)
    }

    #[test]
    fn one_shot_has_zero_variance() {
        let mut e = ShotEnsemble::new((3, 4), Background::default());
        e.accumulate(&random_shots(1, 0)[0]).unwrap();
        assert!(e.var_r().iter().all(|&v| v == 0.0));
        assert!(g2_map(&e).is_err());
    }

    #[test]
    fn identical_shots_have_no_covariance() {
        let s = random_shots(1, 1).remove(0);
        let mut e = ShotEnsemble::new((3, 4), Background::default());
        for _ in 0..10 {
            e.accumulate(&s).unwrap();
        }
        assert!(e.cov_rt().iter().all(|&c| c.abs() < 1e-12));
    }

    #[test]
    fn matches_two_pass_reference() {
        let shots = random_shots(500, 2);
        let mut e = ShotEnsemble::new((3, 4), Background::default());
        shots.iter().for_each(|s| e.accumulate(s).unwrap());
        for (y, x) in [(0, 0), (1, 1), (2, 3)] {
            let (vr, vt, c) = two_pass(&shots, y, x);
            assert!((e.var_r()[[y, x]] - vr).abs() < 1e-10 * vr);
            assert!((e.var_t() - vt).abs() < 1e-10 * vt);
            assert!((e.cov_rt()[[y, x]] - c).abs() < 1e-10 * (vr * vt).sqrt());
        }
    }

    #[test]
    fn merge_matches_single_pass() {
        let shots = random_shots(300, 3);
        let mut whole = ShotEnsemble::new((3, 4), Background::default());
        shots.iter().for_each(|s| whole.accumulate(s).unwrap());
        let mut a = ShotEnsemble::new((3, 4), Background::default());
        let mut b = a.clone();
        shots[..117].iter().for_each(|s| a.accumulate(s).unwrap());
        shots[117..].iter().for_each(|s| b.accumulate(s).unwrap());
        a.merge(&b).unwrap();
        assert_eq!(a.count(), whole.count());
        for (p, q) in a.cov_rt().iter().zip(whole.cov_rt().iter()) {
            assert!((p - q).abs() < 1e-9 * q.abs().max(1e-3));
        }
        assert!((a.var_t() / whole.var_t() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn background_is_subtracted() {
        let shots = random_shots(200, 4);
        let bg = Background {
            r: BackgroundStats {
                mean: 7.0,
                variance: 0.01,
            },
            t: BackgroundStats {
                mean: 100.0,
                variance: 0.5,
            },
        };
        let mut raw = ShotEnsemble::new((3, 4), Background::default());
        let mut sub = ShotEnsemble::new((3, 4), bg);
        for s in &shots {
            raw.accumulate(s).unwrap();
            let mut shifted = s.clone();
            shifted.map_r += 7.0;
            shifted.bucket_t += 100.0;
            sub.accumulate(&shifted).unwrap();
        }
        assert!((sub.mean_t() - raw.mean_t()).abs() < 1e-9);
        assert!((sub.var_t() - (raw.var_t() - 0.5)).abs() < 1e-9);
        for (p, q) in sub.cov_rt().iter().zip(raw.cov_rt().iter()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_bucket_gives_unit_correlation() {
        let mut rng = crate::seed::rng(5);
        let mut e = ShotEnsemble::new((2, 2), Background::default());
        for i in 0..1000 {
            let m = Array2::from_shape_fn((2, 2), |_| rng.random::<f64>());
            let t = 3.0 * m[[0, 1]] + 2.0;
            e.accumulate(&shot(i, m, t)).unwrap();
        }
        let maps = correlation_maps(&e).unwrap();
        assert!((maps.corr_coeff[[0, 1]] - 1.0).abs() < 1e-9);
        assert!(maps.corr_coeff[[1, 1]].abs() < 4.0 / 1000f64.sqrt());
        assert!(visibility_identity_defect(&e, &maps) < 1e-9);
    }

    #[test]
    fn visibility_midpoint() {
        // Two shots: r = (1, 3), t = (1, 3) gives cov 2, means 2 and 2.
        let mut e = ShotEnsemble::new((1, 1), Background::default());
        e.accumulate(&shot(0, Array2::from_elem((1, 1), 1.0), 1.0))
            .unwrap();
        e.accumulate(&shot(1, Array2::from_elem((1, 1), 3.0), 3.0))
            .unwrap();
        let (v, _) = visibility_map(&e).unwrap();
        assert!((v[[0, 0]] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn psf_of_gaussian() {
        let sigma = 2.3;
        let map = Array2::from_shape_fn((41, 41), |(y, x)| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        });
        let w = psf_width(&map, 1e-5).unwrap();
        assert!((w / (2.3548 * sigma * 1e-5) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [500.0, 2000.0, 8000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn synthetic_hole_with_wire_profile() {
        let n = 160;
        let pitch = 10e-6;
        let geom = OpticalGeometry::laboratory();
        let shape = ObjectShape::laboratory();
        // Ideal image: hole 0.8 mm, wire 0.25 mm.
        let c = Array2::from_shape_fn((n, n), |(y, x)| {
            let (xx, yy) = ((x as f64 - 80.0) * pitch, (y as f64 - 80.0) * pitch);
            let inside = xx.hypot(yy) <= 0.4e-3 && xx.abs() > 0.125e-3;
            if inside {
                0.3
            } else {
                0.0
            }
        });
        let maps = CorrelationMaps {
            g2: c.clone(),
            visibility: c.mapv(|v| v / 10.0),
            corr_valid: c.mapv(|_| true),
            visibility_valid: c.mapv(|_| true),
            corr_coeff: c + Array2::from_shape_fn((n, n), |(y, x)| {
                1e-3 * (((x * 7 + y * 13) % 5) as f64 - 2.0)
            }),
            count: 100,
        };
        let m = image_metrics(&maps, pitch, &geom, &shape);
        assert_eq!(m.verdict, ImageVerdict::Image);
        assert!((m.hole_diameter_m.unwrap() - 0.8e-3).abs() < 3.0 * pitch);
        assert!((m.wire_width_m.unwrap() - 0.25e-3).abs() < 3.0 * pitch);
        assert!(m.wire_contrast.unwrap() > 0.9);
        assert!((m.v_max - 0.03).abs() < 1e-3);
    }

    #[test]
    fn flat_map_has_no_image() {
        let n = 64;
        let noise = Array2::from_shape_fn((n, n), |(y, x)| {
            1e-2 * ((((x * 31 + y * 17) % 11) as f64) - 5.0)
        });
        let maps = CorrelationMaps {
            g2: noise.clone(),
            corr_coeff: noise.clone(),
            visibility: noise.clone(),
            corr_valid: noise.mapv(|_| true),
            visibility_valid: noise.mapv(|_| true),
            count: 10,
        };
        let m = image_metrics(
            &maps,
            1e-5,
            &OpticalGeometry::laboratory(),
            &ObjectShape::laboratory(),
        );
        assert_eq!(m.verdict, ImageVerdict::NoImage);
    }
}
