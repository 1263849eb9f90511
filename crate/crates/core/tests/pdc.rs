mod common;

use common::{fixed_cases, grid, spectrum, subsample, LAMBDA};
use ghostcorr::modefit::moment_mu;
use ghostcorr::pdc::{self, PdcParams, VacuumNoise};
use ghostcorr::speckle::{self, SpeckleParams};
use ghostcorr::{fft, ComplexField, GridSpec, OpticalGeometry};
use num_complex::Complex64;
use proptest::prelude::*;

fn seed_params(diameter: f64) -> SpeckleParams {
    SpeckleParams {
        coherence_diameter_m: diameter,
        mean_intensity_au: 1.0,
        temporal_modes: 1,
        envelope_radius_m: None,
    }
}

fn gain_for(g: &GridSpec, n_pdc: f64, bw: f64, phase: f64) -> pdc::PdcGain {
    let p = PdcParams {
        n_pdc_peak: n_pdc,
        angular_bandwidth_rad: bw,
        phase_rad: phase,
        ..PdcParams::laboratory()
    };
    pdc::make_gain(&p, g, &OpticalGeometry::laboratory()).unwrap()
}

proptest! {
    #![proptest_config(fixed_cases(32))]

    #[test]
    fn gain_is_hyperbolic_and_symmetric(n_pdc in 0.0f64..5.0, bw in 1e-3f64..2e-2, phase in -3.0f64..3.0) {
        let g = gain_for(&grid(32, 40e-6), n_pdc, bw, phase);
        prop_assert!(g.hyperbolic_defect() < 1e-12);
        prop_assert!(g.symmetry_defect() < 1e-12);
        prop_assert!(g.u.iter().all(|&u| u >= 1.0) && g.v.iter().all(|&v| v >= 0.0));
        prop_assert!((g.v[[0, 0]].powi(2) - n_pdc).abs() < 1e-12);
    }

    #[test]
    fn phase_conjugate_product_per_realization(seed in any::<u64>(), phase in -3.0f64..3.0, n_pdc in 0.01f64..2.0) {
        let g = grid(32, 40e-6);
        let gain = gain_for(&g, n_pdc, 5e-3, phase);
        let f = speckle::generate_speckle_field(&seed_params(200e-6), &g, LAMBDA, seed).unwrap();
        let tw = pdc::seeded_transform(&f, &gain, None).unwrap();
        let (a, et, er) = (spectrum(&f), spectrum(&tw.field_t), spectrum(&tw.field_r));
        let scale = a.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        for iy in 0..32 {
            for ix in 0..32 {
                let (my, mx) = (fft::mirror(iy, 32), fft::mirror(ix, 32));
                let lhs = er[[iy, ix]] * et[[my, mx]];
                let rhs = Complex64::from_polar(gain.u[[iy, ix]] * gain.v[[iy, ix]], phase) * a[[my, mx]].norm_sqr();
                prop_assert!((lhs - rhs).norm() <= 1e-10 * scale);
            }
        }
    }
}

#[test]
fn ensemble_cross_correlation_matches_second_moment() {
    let g = grid(64, 40e-6);
    let phase = 0.7;
    let gain = gain_for(&g, 0.5, 5e-3, phase);
    let p = seed_params(200e-6);
    let s = speckle::seed_spectrum(&p, &g, 1.0);
    let lambda_bw = gain.angular_bandwidth / LAMBDA;
    let f2 = fft::radial_frequency_sq(64, 64, g.pitch_m);
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    let realizations = 400;
    for k in 0..realizations {
        let f = speckle::generate_speckle_field(&p, &g, LAMBDA, 1000 + k).unwrap();
        let tw = pdc::seeded_transform(&f, &gain, None).unwrap();
        let (er, et) = (spectrum(&tw.field_r), spectrum(&tw.field_t));
        for ((iy, ix), &fq) in f2.indexed_iter() {
            if fq.sqrt() > lambda_bw {
                continue;
            }
            let (my, mx) = (fft::mirror(iy, 64), fft::mirror(ix, 64));
            num += er[[iy, ix]] * et[[my, mx]];
            den += gain.u[[iy, ix]] * gain.v[[iy, ix]] * s[[iy, ix]];
        }
    }
    let ratio = num / den * Complex64::from_polar(1.0, -phase);
    assert!(
        (ratio.re - 1.0).abs() < 0.02 && ratio.im.abs() < 0.02,
        "{ratio}"
    );
}

#[test]
fn test_arm_intensity_gain() {
    let g = grid(64, 40e-6);
    let gain = gain_for(&g, 0.5, 5e-3, 0.0);
    let p = seed_params(200e-6);
    let s = speckle::seed_spectrum(&p, &g, 1.0);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..200 {
        let f = speckle::generate_speckle_field(&p, &g, LAMBDA, k).unwrap();
        let noise = VacuumNoise {
            variance_per_mode: 1e-12,
            seed: 77 + k,
        };
        let et = spectrum(
            &pdc::seeded_transform(&f, &gain, Some(noise))
                .unwrap()
                .field_t,
        );
        for ((idx, e), sq) in et.indexed_iter().zip(s.iter()) {
            num += e.norm_sqr();
            den += gain.u[idx].powi(2) * sq;
        }
    }
    assert!((num / den - 1.0).abs() < 0.02, "{}", num / den);
}

#[test]
fn reference_arm_keeps_thermal_statistics() {
    let g = grid(256, 20e-6);
    let gain = gain_for(&g, 0.5, 5e-2, 0.0);
    let f = speckle::generate_speckle_field(&seed_params(60e-6), &g, LAMBDA, 4).unwrap();
    let r = pdc::seeded_transform(&f, &gain, None)
        .unwrap()
        .field_r
        .intensity();
    let mu = moment_mu(&subsample(&r, 5)).unwrap();
    assert!((mu - 1.0).abs() < 0.05, "{mu}");
}

#[test]
fn spontaneous_limit_follows_gain_profile() {
    let g = grid(32, 40e-6);
    let gain = gain_for(&g, 0.5, 5e-3, 0.0);
    let zero = ComplexField::zeros(&g, LAMBDA);
    let variance = 2.0;
    let mut acc = ndarray::Array2::<f64>::zeros(g.shape());
    let realizations = 2000;
    for k in 0..realizations {
        let noise = VacuumNoise {
            variance_per_mode: variance,
            seed: k,
        };
        let er = spectrum(
            &pdc::seeded_transform(&zero, &gain, Some(noise))
                .unwrap()
                .field_r,
        );
        acc.zip_mut_with(&er, |a, e| *a += e.norm_sqr());
    }
    // Pool modes in bands of V^2 so each band averages many samples.
    let n2 = gain.n_pdc();
    for (lo, hi) in [(0.3, 0.4), (0.4, 0.45), (0.45, 0.5 + 1e-12)] {
        let (mut got, mut want) = (0.0, 0.0);
        for (idx, &v2) in n2.indexed_iter() {
            if v2 >= lo && v2 < hi {
                got += acc[idx] / realizations as f64;
                want += v2 * variance;
            }
        }
        assert!(want > 0.0);
        assert!(
            (got / want - 1.0).abs() < 0.05,
            "band {lo}-{hi}: {}",
            got / want
        );
    }
}
