//! Mode-number estimation from intensity samples.
//!
//! The multithermal law is a gamma distribution with shape `mu` and scale
//! `<I>/mu`. The histogram fit convolves it with the empirical background
//! histogram and maximizes the multinomial likelihood over `(mu, <I>)`.

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Multithermal density `P_mu(I)` for real `mu >= 1`.
pub fn multithermal_pdf(intensity: f64, mu: f64, mean: f64) -> f64 {
    if intensity < 0.0 {
        return 0.0;
    }
    if mu == 1.0 {
        return (-intensity / mean).exp() / mean;
    }
    if intensity == 0.0 {
        return if mu > 1.0 { 0.0 } else { f64::INFINITY };
    }
    let scale = mean / mu;
    (-intensity / scale + (mu - 1.0) * intensity.ln() - mu * scale.ln() - ln_gamma(mu)).exp()
}

/// Cumulative distribution of the multithermal law.
pub fn multithermal_cdf(intensity: f64, mu: f64, mean: f64) -> f64 {
    if intensity <= 0.0 {
        0.0
    } else {
        gamma_lr(mu, intensity * mu / mean)
    }
}

pub const MIN_SAMPLES: usize = 100;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

/// `<I>^2 / var(I)` with optional background moments removed.
pub fn moment_mu_corrected(samples: &[f64], bg_mean: f64, bg_var: f64) -> Result<f64> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            samples.len()
        )));
    }
    let (m, v) = mean_var(samples);
    let var = v - bg_var;
    if !(var > 0.0) {
        return Err(Error::Domain(
            "sample variance does not exceed the background variance".into(),
        ));
    }
    Ok((m - bg_mean).powi(2) / var)
}

pub fn moment_mu(samples: &[f64]) -> Result<f64> {
    moment_mu_corrected(samples, 0.0, 0.0)
}

/// `sqrt(mu_R mu_T)` implied by a correlation coefficient and a visibility.
pub fn mode_consistency(c_peak: f64, v_peak: f64) -> Result<f64> {
    if !(v_peak > 0.0 && v_peak < 1.0) {
        return Err(Error::Domain(format!(
            "visibility must lie in (0, 1), got {v_peak}"
        )));
    }
    if !(c_peak > 0.0) {
        return Err(Error::Domain(format!(
            "correlation coefficient must be positive, got {c_peak}"
        )));
    }
    Ok(c_peak * (1.0 - v_peak) / v_peak)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMethod {
    Histogram,
    Moment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// The optimizer hit its iteration limit; `mu` holds the moment estimate.
    NotConverged,
    /// The signal is indistinguishable from the background.
    Unidentifiable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeFitResult {
    pub mu: f64,
    pub mu_moment: f64,
    /// Mean of the thermal component, background removed.
    pub mean_intensity: f64,
    /// Reduced chi-square of the fitted histogram.
    pub gof: f64,
    pub method: FitMethod,
    pub status: FitStatus,
    pub bins: usize,
    pub iterations: usize,
}

/// Histogram and fitted model, for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct FitCurve {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub model: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Fixed bin width; Freedman-Diaconis when `None`.
    pub bin_width: Option<f64>,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bin_width: None,
            max_iterations: 600,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

/// Freedman-Diaconis bin width `2 IQR n^{-1/3}`.
pub fn freedman_diaconis(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let h = 2.0 * iqr / (s.len() as f64).cbrt();
    if h > 0.0 {
        h
    } else {
        let span = s[s.len() - 1] - s[0];
        if span > 0.0 {
            span / (s.len() as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Histogram on the lattice `k * h`: returns the first lattice index and counts.
fn lattice_histogram(x: &[f64], h: f64) -> (i64, Vec<f64>) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k0 = (lo / h).floor() as i64;
    let k1 = (hi / h).floor() as i64;
    let mut counts = vec![0.0; (k1 - k0 + 1) as usize];
    for &v in x {
        let k = ((v / h).floor() as i64 - k0).clamp(0, counts.len() as i64 - 1);
        counts[k as usize] += 1.0;
    }
    (k0, counts)
}

struct Model {
    h: f64,
    s0: i64,
    counts: Vec<f64>,
    b0: i64,
    weights: Vec<f64>,
    total: f64,
}

impl Model {
    /// Bin probabilities of signal = thermal + background, with each
    /// background bin treated as a point mass at its center.
    fn probabilities(&self, mu: f64, mean: f64) -> Vec<f64> {
        let (ns, nb) = (self.counts.len() as i64, self.weights.len() as i64);
        // Signal bin i spans [(s0+i) h, (s0+i+1) h); background bin j is
        // centered at (b0+j+0.5) h. The CDF argument depends on d = i - j.
        let base = self.s0 - self.b0;
        let d_min = -(nb - 1);
        let cdf: Vec<f64> = (d_min..=ns)
            .map(|d| multithermal_cdf((base + d) as f64 * self.h - 0.5 * self.h, mu, mean))
            .collect();
        let at = |d: i64| cdf[(d - d_min) as usize];
        let mut p = vec![0.0; self.counts.len()];
        for (i, pi) in p.iter_mut().enumerate() {
            let i = i as i64;
            *pi = self
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let d = i - j as i64;
                    w * (at(d + 1) - at(d))
                })
                .sum();
        }
        let s: f64 = p.iter().sum();
        if s > 0.0 {
            p.iter_mut().for_each(|v| *v /= s);
        }
        p
    }

    fn nll(&self, mu: f64, mean: f64) -> f64 {
        let p = self.probabilities(mu, mean);
        -self
            .counts
            .iter()
            .zip(&p)
            .filter(|(n, _)| **n > 0.0)
            .map(|(n, p)| n * p.max(1e-300).ln())
            .sum::<f64>()
    }

    fn reduced_chi_square(&self, mu: f64, mean: f64) -> f64 {
        let p = self.probabilities(mu, mean);
        let (mut chi, mut bins) = (0.0, 0usize);
        for (n, p) in self.counts.iter().zip(&p) {
            let e = p * self.total;
            if e >= 5.0 {
                chi += (n - e).powi(2) / e;
                bins += 1;
            }
        }
        chi / (bins.saturating_sub(3).max(1)) as f64
    }
}

/// Nelder-Mead minimization in two dimensions. Returns the best point and
/// whether the simplex converged within `max_iter`.
fn nelder_mead(
    f: impl Fn([f64; 2]) -> f64,
    start: [f64; 2],
    step: [f64; 2],
    max_iter: usize,
) -> ([f64; 2], bool, usize) {
    let mut pts = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut vals = pts.map(&f);
    for it in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.map(|i| pts[i]);
        vals = order.map(|i| vals[i]);
        let spread = (vals[2] - vals[0]).abs();
        let size = (0..2)
            .map(|k| {
                (pts[1][k] - pts[0][k])
                    .abs()
                    .max((pts[2][k] - pts[0][k]).abs())
            })
            .fold(0.0, f64::max);
        if spread <= 1e-9 * (1.0 + vals[0].abs()) && size < 1e-7 {
            return (pts[0], true, it);
        }
        let c = [0.5 * (pts[0][0] + pts[1][0]), 0.5 * (pts[0][1] + pts[1][1])];
        let along = |t: f64| [c[0] + t * (pts[2][0] - c[0]), c[1] + t * (pts[2][1] - c[1])];
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(xe);
            if fe < fr {
                (pts[2], vals[2]) = (xe, fe);
            } else {
                (pts[2], vals[2]) = (xr, fr);
            }
        } else if fr < vals[1] {
            (pts[2], vals[2]) = (xr, fr);
        } else {
            let xc = if fr < vals[2] {
                along(-0.5)
            } else {
                along(0.5)
            };
            let fc = f(xc);
            if fc < vals[2].min(fr) {
                (pts[2], vals[2]) = (xc, fc);
            } else {
                for i in 1..3 {
                    pts[i] = [0.5 * (pts[0][0] + pts[i][0]), 0.5 * (pts[0][1] + pts[i][1])];
                    vals[i] = f(pts[i]);
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    (pts[best], false, max_iter)
}

fn build_model(samples: &[f64], background: &[f64], h: f64) -> Model {
    let (s0, counts) = lattice_histogram(samples, h);
    let (b0, weights) = if background.is_empty() {
        (-1, vec![1.0])
    } else {
        let (b0, c) = lattice_histogram(background, h);
        let n = background.len() as f64;
        (b0, c.into_iter().map(|v| v / n).collect())
    };
    Model {
        h,
        s0,
        counts,
        b0,
        weights,
        total: samples.len() as f64,
    }
}

/// Maximum-likelihood fit of `(mu, <I>)` to the histogram of `samples`,
/// with the model convolved by the histogram of `background`. An empty
/// background means noiseless data.
pub fn fit_mu(samples: &[f64], background: &[f64], opts: &FitOptions) -> Result<ModeFitResult> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_SAMPLES}",
            samples.len()
        )));
    }
    let (sm, sv) = mean_var(samples);
    let (bm, bv) = if background.is_empty() {
        (0.0, 0.0)
    } else {
        mean_var(background)
    };
    let stderr = (sv / samples.len() as f64
        + if background.is_empty() {
            0.0
        } else {
            bv / background.len() as f64
        })
    .sqrt();
    let unidentifiable = ModeFitResult {
        mu: f64::NAN,
        mu_moment: f64::NAN,
        mean_intensity: sm - bm,
        gof: f64::NAN,
        method: FitMethod::Moment,
        status: FitStatus::Unidentifiable,
        bins: 0,
        iterations: 0,
    };
    if !(sm - bm > 3.0 * stderr) || !(sv - bv > 0.0) {
        return Ok(unidentifiable);
    }
    let mu_moment = (sm - bm).powi(2) / (sv - bv);
    let mean0 = sm - bm;

    let h = opts.bin_width.unwrap_or_else(|| freedman_diaconis(samples));
    let model = if background.is_empty() {
        // Place the zero-width background on a bin center.
        let shifted: Vec<f64> = samples.iter().map(|v| v + 0.5 * h).collect();
        let mut m = build_model(&shifted, &[], h);
        m.b0 = 0;
        m
    } else {
        build_model(samples, background, h)
    };

    let theta0 = (mu_moment - 1.0).max(0.01).sqrt();
    let objective = |p: [f64; 2]| model.nll(1.0 + p[0] * p[0], mean0 * p[1].exp());
    let (best, converged, iterations) = nelder_mead(
        objective,
        [theta0, 0.0],
        [0.2 * theta0.max(0.5), 0.05],
        opts.max_iterations,
    );
    let (mu, mean) = (1.0 + best[0] * best[0], mean0 * best[1].exp());
    if !converged {
        return Ok(ModeFitResult {
            mu: mu_moment.max(1.0),
            mu_moment,
            mean_intensity: mean0,
            gof: model.reduced_chi_square(mu_moment.max(1.0), mean0),
            method: FitMethod::Moment,
            status: FitStatus::NotConverged,
            bins: model.counts.len(),
            iterations,
        });
    }
    Ok(ModeFitResult {
        mu,
        mu_moment,
        mean_intensity: mean,
        gof: model.reduced_chi_square(mu, mean),
        method: FitMethod::Histogram,
        status: FitStatus::Converged,
        bins: model.counts.len(),
        iterations,
    })
}

/// Histogram of `samples` with the fitted model expectation per bin.
pub fn fit_curve(
    samples: &[f64],
    background: &[f64],
    fit: &ModeFitResult,
    opts: &FitOptions,
) -> FitCurve {
    let h = opts.bin_width.unwrap_or_else(|| freedman_diaconis(samples));
    let (model, offset) = if background.is_empty() {
        let shifted: Vec<f64> = samples.iter().map(|v| v + 0.5 * h).collect();
        let mut m = build_model(&shifted, &[], h);
        m.b0 = 0;
        (m, 0.5 * h)
    } else {
        (build_model(samples, background, h), 0.0)
    };
    let p = if fit.mu.is_finite() {
        model.probabilities(fit.mu, fit.mean_intensity)
    } else {
        vec![f64::NAN; model.counts.len()]
    };
    let edges = (0..=model.counts.len())
        .map(|i| (model.s0 + i as i64) as f64 * h - offset)
        .collect();
    FitCurve {
        edges,
        model: p.iter().map(|p| p * model.total).collect(),
        counts: model.counts,
    }
}
