//! Exact two-mode output state of chaotically seeded downconversion.
//!
//! One `(q, -q)` mode pair is treated: the Test mode carries a thermal seed of
//! `n_th` photons, the Reference mode starts in vacuum, and the pair is
//! squeezed with `n_pdc = V^2`. The truncated density matrix is real and uses
//! the basis index `m_T * cutoff + m_R`.
//!
//! The output state is block diagonal in the photon-number difference
//! `m_T - m_R`, and its partial transpose over the Reference mode is block
//! diagonal in the total photon number `m_T + m_R`. Both facts keep the
//! eigenvalue problems at most `cutoff x cutoff`.

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Truncation loss above which a state is refused outright.
pub const TRUNCATION_LIMIT: f64 = 1e-3;
/// Truncation loss above which a state is considered approximate.
pub const TRUNCATION_WARN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FockConfig {
    pub n_th: f64,
    pub n_pdc: f64,
    pub cutoff: usize,
}

impl FockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_th.is_finite() && self.n_th >= 0.0) {
            return Err(Error::Config(format!(
                "n_th must be >= 0, got {}",
                self.n_th
            )));
        }
        if !(self.n_pdc.is_finite() && self.n_pdc >= 0.0) {
            return Err(Error::Config(format!(
                "n_pdc must be >= 0, got {}",
                self.n_pdc
            )));
        }
        if self.cutoff < 2 {
            return Err(Error::Config("cutoff must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Test,
    Reference,
}

/// Bose-Einstein photon-number probability.
pub fn thermal_pn(n_th: f64, m: usize) -> f64 {
    if n_th == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    (m as f64 * (n_th / (1.0 + n_th)).ln() - n_th.ln_1p()).exp()
}

/// Amplitude of `|n+n1><n+n2|_T (x) |n1><n2|_R` given `n` seed photons.
pub fn f_coefficient(n: usize, n1: usize, n2: usize, n_pdc: f64) -> f64 {
    let half = 0.5 * (n1 + n2) as f64;
    if n_pdc == 0.0 {
        return if n1 + n2 == 0 { 1.0 } else { 0.0 };
    }
    let ln = half * n_pdc.ln() - (n as f64 + 1.0 + half) * n_pdc.ln_1p()
        + 0.5 * ln_binomial((n + n1) as u64, n as u64)
        + 0.5 * ln_binomial((n + n2) as u64, n as u64);
    ln.exp()
}

/// `1 - trace` of the truncated state, computed without building it.
pub fn truncation_defect(cfg: &FockConfig) -> f64 {
    let d = cfg.cutoff;
    let kept: f64 = (0..d)
        .map(|n| {
            let p = thermal_pn(cfg.n_th, n);
            if p == 0.0 {
                return 0.0;
            }
            p * (0..d - n)
                .map(|k| f_coefficient(n, k, k, cfg.n_pdc))
                .sum::<f64>()
        })
        .sum();
    (1.0 - kept).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoModeState {
    /// Real symmetric matrix indexed by `m_T * cutoff + m_R`.
    pub matrix: DMatrix<f64>,
    pub cutoff: usize,
}

impl TwoModeState {
    #[inline]
    pub fn index(&self, m_t: usize, m_r: usize) -> usize {
        m_t * self.cutoff + m_r
    }

    #[inline]
    pub fn element(&self, (a, b): (usize, usize), (c, d): (usize, usize)) -> f64 {
        self.matrix[(self.index(a, b), self.index(c, d))]
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in i + 1..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue, using the block structure in `m_T - m_R`.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.cutoff;
        let mut lo = f64::INFINITY;
        for diff in -(d as isize - 1)..=(d as isize - 1) {
            let members: Vec<(usize, usize)> = (0..d)
                .filter_map(|mr| {
                    let mt = mr as isize + diff;
                    (mt >= 0 && (mt as usize) < d).then_some((mt as usize, mr))
                })
                .collect();
            let block = DMatrix::from_fn(members.len(), members.len(), |i, j| {
                self.element(members[i], members[j])
            });
            lo = lo.min(min_symmetric_eigenvalue(block));
        }
        lo
    }

    /// Smallest eigenvalue of the partial transpose over the Reference mode.
    pub fn partial_transpose_min_eigenvalue(&self) -> f64 {
        let d = self.cutoff;
        let mut lo = f64::INFINITY;
        for total in 0..=2 * (d - 1) {
            let first = total.saturating_sub(d - 1);
            let last = total.min(d - 1);
            let size = last - first + 1;
            let block = DMatrix::from_fn(size, size, |i, j| {
                let (a, c) = (first + i, first + j);
                self.element((a, total - c), (c, total - a))
            });
            lo = lo.min(min_symmetric_eigenvalue(block));
        }
        lo
    }

    pub fn marginal(&self, arm: Arm) -> Vec<f64> {
        let d = self.cutoff;
        (0..d)
            .map(|m| {
                (0..d)
                    .map(|k| {
                        let i = match arm {
                            Arm::Test => self.index(m, k),
                            Arm::Reference => self.index(k, m),
                        };
                        self.matrix[(i, i)]
                    })
                    .sum()
            })
            .collect()
    }

    /// Population of each photon-number difference `m_T - m_R`, indexed by
    /// `diff + cutoff - 1`.
    pub fn difference_distribution(&self) -> Vec<f64> {
        let d = self.cutoff;
        let mut out = vec![0.0; 2 * d - 1];
        for mt in 0..d {
            for mr in 0..d {
                let i = self.index(mt, mr);
                out[mt + d - 1 - mr] += self.matrix[(i, i)];
            }
        }
        out
    }
}

fn min_symmetric_eigenvalue(block: DMatrix<f64>) -> f64 {
    if block.nrows() == 1 {
        return block[(0, 0)];
    }
    SymmetricEigen::new(block).eigenvalues.min()
}

/// Assemble the truncated output state.
pub fn output_state(cfg: &FockConfig) -> Result<TwoModeState> {
    cfg.validate()?;
    let defect = truncation_defect(cfg);
    if defect > TRUNCATION_LIMIT {
        return Err(Error::Truncation(format!(
            "cutoff {} loses {:.3e} of the trace for n_th = {}, n_pdc = {}",
            cfg.cutoff, defect, cfg.n_th, cfg.n_pdc
        )));
    }
    if defect > TRUNCATION_WARN {
        log::warn!("cutoff {} loses {:.3e} of the trace", cfg.cutoff, defect);
    }
    let d = cfg.cutoff;
    let mut matrix = DMatrix::zeros(d * d, d * d);
    for n in 0..d {
        let p = thermal_pn(cfg.n_th, n);
        if p == 0.0 {
            continue;
        }
        let g: Vec<f64> = (0..d - n)
            .map(|k| f_coefficient(n, k, 0, cfg.n_pdc))
            .collect();
        let scale = f_coefficient(n, 0, 0, cfg.n_pdc);
        for n1 in 0..d - n {
            for n2 in 0..d - n {
                // F(n, n1, n2) = F(n, n1, 0) F(n, 0, n2) / F(n, 0, 0)
                let v = p * g[n1] * g[n2] / scale;
                matrix[((n + n1) * d + n1, (n + n2) * d + n2)] = v;
            }
        }
    }
    Ok(TwoModeState { matrix, cutoff: d })
}

/// Mean photon numbers `(<n_T>, <n_R>)` of the untruncated state.
pub fn mean_photon_numbers(n_th: f64, n_pdc: f64) -> (f64, f64) {
    ((1.0 + n_pdc) * n_th + n_pdc, n_pdc * (n_th + 1.0))
}

pub fn distribution_mean(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
}

/// Largest deviation of `p` from the Bose-Einstein law with the same mean.
pub fn thermal_fit_residual(p: &[f64]) -> f64 {
    let mean = distribution_mean(p);
    p.iter()
        .enumerate()
        .map(|(m, &pm)| (pm - thermal_pn(mean, m)).abs())
        .fold(0.0, f64::max)
}

/// Covariance matrix of `(x_T, p_T, x_R, p_R)` with vacuum normalized to the
/// identity, obtained by applying the two-mode squeezer to thermal (x) vacuum.
pub fn covariance_matrix(n_th: f64, n_pdc: f64) -> Matrix4<f64> {
    let u = (1.0 + n_pdc).sqrt();
    let v = n_pdc.sqrt();
    let input = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        1.0 + 2.0 * n_th,
        1.0 + 2.0 * n_th,
        1.0,
        1.0,
    ));
    #[rustfmt::skip]
    let s = Matrix4::new(
        u,   0.0, v,   0.0,
        0.0, u,   0.0, -v,
        v,   0.0, u,   0.0,
        0.0, -v,  0.0, u,
    );
    s * input * s.transpose()
}

/// Smallest symplectic eigenvalue of the partially transposed covariance.
pub fn pt_symplectic_eigenvalue(sigma: &Matrix4<f64>) -> f64 {
    let a: Matrix2<f64> = sigma.fixed_view::<2, 2>(0, 0).into();
    let b: Matrix2<f64> = sigma.fixed_view::<2, 2>(2, 2).into();
    let c: Matrix2<f64> = sigma.fixed_view::<2, 2>(0, 2).into();
    let delta = a.determinant() + b.determinant() - 2.0 * c.determinant();
    let det = sigma.determinant();
    let disc = (delta * delta - 4.0 * det).max(0.0);
    (0.5 * (delta - disc.sqrt())).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Inseparable,
    Separable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Inseparable => "inseparable",
            Verdict::Separable => "separable",
        })
    }
}

/// Margin below the vacuum level required to call a state inseparable.
const SIMON_TOLERANCE: f64 = 1e-12;
/// Negativity below which the truncated partial transpose counts as negative.
const PT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PhsReport {
    pub cfg: FockConfig,
    pub symplectic_eigenvalue: f64,
    pub verdict: Verdict,
    /// Smallest partial-transpose eigenvalue of the truncated state, when
    /// the cutoff allows building it.
    pub fock_min_pt_eigenvalue: Option<f64>,
    /// Why the Fock cross-check was skipped, if it was.
    pub flag: Option<String>,
}

impl PhsReport {
    /// Whether the Fock cross-check, when present, agrees with the verdict.
    pub fn cross_check_agrees(&self) -> Option<bool> {
        self.fock_min_pt_eigenvalue
            .map(|e| (e < -PT_TOLERANCE) == (self.verdict == Verdict::Inseparable))
    }
}

/// Simon separability test with a numerical partial-transpose cross-check.
pub fn phs_check(cfg: &FockConfig) -> Result<PhsReport> {
    cfg.validate()?;
    let nu = pt_symplectic_eigenvalue(&covariance_matrix(cfg.n_th, cfg.n_pdc));
    let verdict = if nu < 1.0 - SIMON_TOLERANCE {
        Verdict::Inseparable
    } else {
        Verdict::Separable
    };
    let (fock, flag) = match output_state(cfg) {
        Ok(state) => (Some(state.partial_transpose_min_eigenvalue()), None),
        Err(Error::Truncation(msg)) => (None, Some(format!("Gaussian result only: {msg}"))),
        Err(e) => return Err(e),
    };
    Ok(PhsReport {
        cfg: *cfg,
        symplectic_eigenvalue: nu,
        verdict,
        fock_min_pt_eigenvalue: fock,
        flag,
    })
}

/// One line of the separability table.
#[derive(Clone, Debug, PartialEq)]
pub struct FockRow {
    pub n_th: f64,
    pub n_pdc: f64,
    pub trace_defect: f64,
    pub mean_t: f64,
    pub mean_r: f64,
    pub report: PhsReport,
}

pub fn fock_table(n_th: &[f64], n_pdc: &[f64], cutoff: usize) -> Result<Vec<FockRow>> {
    let mut rows = Vec::with_capacity(n_th.len() * n_pdc.len());
    for &nt in n_th {
        for &np in n_pdc {
            let cfg = FockConfig {
                n_th: nt,
                n_pdc: np,
                cutoff,
            };
            let report = phs_check(&cfg)?;
            let (mean_t, mean_r) = mean_photon_numbers(nt, np);
            rows.push(FockRow {
                n_th: nt,
                n_pdc: np,
                trace_defect: truncation_defect(&cfg),
                mean_t,
                mean_r,
                report,
            });
        }
    }
    Ok(rows)
}

pub fn fock_table_csv(rows: &[FockRow]) -> String {
    let mut out = String::from("n_th,n_pdc,trace_defect,mean_n_t,mean_n_r,pt_symplectic_eigenvalue,fock_pt_min_eigenvalue,verdict,note\n");
    for r in rows {
        let fock = r
            .report
            .fock_min_pt_eigenvalue
            .map_or_else(|| "NA".to_string(), |e| format!("{e:.6e}"));
        out.push_str(&format!(
            "{},{},{:.3e},{:.6},{:.6},{:.9},{},{},{}\n",
            r.n_th,
            r.n_pdc,
            r.trace_defect,
            r.mean_t,
            r.mean_r,
            r.report.symplectic_eigenvalue,
            fock,
            r.report.verdict,
            r.report.flag.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_th: f64, n_pdc: f64, cutoff: usize) -> FockConfig {
        FockConfig {
            n_th,
            n_pdc,
            cutoff,
        }
    }

    #[test]
    fn thermal_examples() {
        assert_eq!(thermal_pn(0.0, 0), 1.0);
        assert_eq!(thermal_pn(0.0, 3), 0.0);
        assert!((thermal_pn(1.0, 1) - 0.25).abs() < 1e-15);
        let s: f64 = (0..400).map(|m| thermal_pn(5.0, m)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_examples() {
        assert!((f_coefficient(0, 0, 0, 0.5) - 1.0 / 1.5).abs() < 1e-15);
        assert!((f_coefficient(0, 1, 1, 0.5) - 0.5 / 2.25).abs() < 1e-15);
        for n in 0..20 {
            let want = 1.7f64.powi(-(n as i32 + 1));
            assert!((f_coefficient(n, 0, 0, 0.7) / want - 1.0).abs() < 1e-12);
        }
        // Large arguments stay finite.
        assert!(f_coefficient(300, 250, 240, 2.0).is_finite());
    }

    #[test]
    fn vacuum_limit() {
        let s = output_state(&cfg(0.0, 0.0, 6)).unwrap();
        assert_eq!(s.element((0, 0), (0, 0)), 1.0);
        assert_eq!(s.matrix.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn squeezed_vacuum_has_equal_marginals() {
        let s = output_state(&cfg(0.0, 0.5, 40)).unwrap();
        let (pt, pr) = (s.marginal(Arm::Test), s.marginal(Arm::Reference));
        for (a, b) in pt.iter().zip(&pr) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((distribution_mean(&pr) - 0.5).abs() < 1e-6);
        assert!(thermal_fit_residual(&pr) < 1e-9);
        // Pure state: rank one.
        let d = s.difference_distribution();
        assert!((d[39] - s.trace()).abs() < 1e-15);
    }

    #[test]
    fn seeded_state_invariants() {
        let c = cfg(1.0, 0.5, 40);
        let s = output_state(&c).unwrap();
        assert!((s.trace() - 1.0).abs() < 1e-6);
        assert!((1.0 - s.trace() - truncation_defect(&c)).abs() < 1e-12);
        assert!(s.hermiticity_defect() < 1e-12);
        assert!(s.min_eigenvalue() > -1e-10);
        let (mt, mr) = mean_photon_numbers(1.0, 0.5);
        assert!((distribution_mean(&s.marginal(Arm::Test)) - mt).abs() < 1e-4);
        assert!((distribution_mean(&s.marginal(Arm::Reference)) - mr).abs() < 1e-4);
        assert!(thermal_fit_residual(&s.marginal(Arm::Test)) < 1e-3);
    }

    #[test]
    fn populations_match_direct_double_sum() {
        let c = cfg(1.0, 0.5, 30);
        let s = output_state(&c).unwrap();
        for n in 0..5 {
            for n1 in 0..5 {
                let want = thermal_pn(1.0, n) * f_coefficient(n, n1, n1, 0.5);
                assert!((s.element((n + n1, n1), (n + n1, n1)) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn truncation_is_refused() {
        assert!(matches!(
            output_state(&cfg(10.0, 0.5, 20)),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn simon_closed_form() {
        for &(nt, s) in &[(0.0f64, 0.5f64), (1.0, 0.1), (10.0, 1.0), (100.0, 0.5)] {
            let a = 1.0 + 2.0 * ((1.0 + s) * nt + s);
            let b = 1.0 + 2.0 * s * (nt + 1.0);
            let c = 2.0 * (s * (1.0 + s)).sqrt() * (nt + 1.0);
            let want = 0.5 * (a + b) - (0.25 * (a - b) * (a - b) + c * c).sqrt();
            let got = pt_symplectic_eigenvalue(&covariance_matrix(nt, s));
            assert!(
                (got - want).abs() < 1e-9 * want.max(1.0),
                "{nt} {s}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn no_gain_is_separable_at_threshold() {
        let r = phs_check(&cfg(1.0, 0.0, 30)).unwrap();
        assert_eq!(r.verdict, Verdict::Separable);
        assert!((r.symplectic_eigenvalue - 1.0).abs() < 1e-12);
        assert_eq!(r.cross_check_agrees(), Some(true));
    }

    #[test]
    fn gain_entangles_and_fock_agrees() {
        for &nt in &[0.0, 1.0] {
            let r = phs_check(&cfg(nt, 0.5, 40)).unwrap();
            assert_eq!(r.verdict, Verdict::Inseparable);
            assert_eq!(r.cross_check_agrees(), Some(true));
        }
    }

    #[test]
    fn coarse_cutoff_flags_gaussian_only() {
        let r = phs_check(&cfg(100.0, 0.5, 10)).unwrap();
        assert_eq!(r.verdict, Verdict::Inseparable);
        assert!(r.fock_min_pt_eigenvalue.is_none());
        assert!(r.flag.unwrap().starts_with("Gaussian result only"));
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let rows = fock_table(&[0.0, 1.0], &[0.0, 0.5], 20).unwrap();
        let csv = fock_table_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(4).unwrap().contains("inseparable"));
    }
}
