//! Unitary two-dimensional FFTs over row-major `Array2<Complex64>` and the
//! matching spatial-frequency grids.

use std::cell::RefCell;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

fn fft_rows(data: &mut [Complex64], len: usize, dir: Direction) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft = match dir {
            Direction::Forward => planner.plan_fft_forward(len),
            Direction::Inverse => planner.plan_fft_inverse(len),
        };
        fft.process(data);
    });
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const BLOCK: usize = 32;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn fft2_in_place(a: &mut Array2<Complex64>, dir: Direction) {
    let (ny, nx) = a.dim();
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    let data = a.as_slice_mut().expect("standard layout");
    fft_rows(data, nx, dir);
    let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
    transpose(data, ny, nx, &mut t);
    fft_rows(&mut t, ny, dir);
    transpose(&t, nx, ny, data);
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= scale);
}

/// Unitary forward transform: `sum |a|^2` is preserved.
pub fn fft2(a: &mut Array2<Complex64>) {
    fft2_in_place(a, Direction::Forward);
}

/// Unitary inverse transform.
pub fn ifft2(a: &mut Array2<Complex64>) {
    fft2_in_place(a, Direction::Inverse);
}

/// Signed frequency index of bin `i` for an `n`-point transform, matching
/// numpy's `fftfreq` ordering (the Nyquist bin is negative for even `n`).
#[inline]
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Spatial frequencies (cycles per meter) along one axis.
pub fn frequencies(n: usize, pitch: f64) -> Vec<f64> {
    (0..n)
        .map(|i| signed_index(i, n) as f64 / (n as f64 * pitch))
        .collect()
}

/// Bin holding the negated frequency of bin `i`.
#[inline]
pub fn mirror(i: usize, n: usize) -> usize {
    (n - i) % n
}

/// Squared radial frequency `fx^2 + fy^2` on an `ny x nx` grid.
pub fn radial_frequency_sq(nx: usize, ny: usize, pitch: f64) -> Array2<f64> {
    let fx = frequencies(nx, pitch);
    let fy = frequencies(ny, pitch);
    Array2::from_shape_fn((ny, nx), |(iy, ix)| fx[ix] * fx[ix] + fy[iy] * fy[iy])
}

/// Circular autocorrelation `sum_x a(x) a(x + d)` of a real map via FFT, with
/// lag zero at index `(0, 0)`.
pub fn autocorrelation(map: &Array2<f64>) -> Array2<f64> {
    let (ny, nx) = map.dim();
    let mut c = map.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut c);
    c.mapv_inplace(|v| Complex64::new(v.norm_sqr(), 0.0));
    ifft2(&mut c);
    let scale = ((nx * ny) as f64).sqrt();
    c.mapv(|v| v.re * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_field(ny: usize, nx: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((ny, nx), |(y, x)| {
            Complex64::new(
                ((x * 7 + y * 3) % 11) as f64 - 5.0,
                (x as f64 * 0.3).sin() + y as f64 * 0.1,
            )
        })
    }

    fn direct_dft(a: &Array2<Complex64>) -> Array2<Complex64> {
        let (ny, nx) = a.dim();
        let norm = 1.0 / ((nx * ny) as f64).sqrt();
        Array2::from_shape_fn((ny, nx), |(ky, kx)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..ny {
                for x in 0..nx {
                    let ph = -2.0
                        * std::f64::consts::PI
                        * ((kx * x) as f64 / nx as f64 + (ky * y) as f64 / ny as f64);
                    acc += a[[y, x]] * Complex64::from_polar(1.0, ph);
                }
            }
            acc * norm
        })
    }

    #[test]
    fn matches_direct_dft_on_rectangular_grid() {
        let a = test_field(6, 10);
        let mut b = a.clone();
        fft2(&mut b);
        let d = direct_dft(&a);
        for (u, v) in b.iter().zip(d.iter()) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let a = test_field(16, 8);
        let mut b = a.clone();
        fft2(&mut b);
        let e0: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        let e1: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-9 * e0);
        ifft2(&mut b);
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn frequency_ordering() {
        assert_eq!(frequencies(4, 0.5), vec![0.0, 0.5, -1.0, -0.5]);
        assert_eq!(mirror(0, 8), 0);
        assert_eq!(mirror(3, 8), 5);
        assert_eq!(mirror(4, 8), 4);
    }
}
