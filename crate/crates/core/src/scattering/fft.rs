//! Square 2D FFTs built from row passes and in-place transposes.
//!
//! A forward transform leaves the spectrum transposed and an inverse
//! transform expects that transposed layout, so a forward/inverse pair costs
//! two transposes instead of four. Everything that lives in the frequency
//! domain (filters included) goes through the same forward routine, so
//! pointwise products line up.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(side: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(side);
        let inverse = planner.plan_fft_inverse(side);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            side,
            forward,
            inverse,
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Spatial (row-major) to transposed spectrum, unnormalized.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.side * self.side);
        self.forward.process_with_scratch(buf, &mut self.scratch);
        transpose_in_place(buf, self.side);
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Transposed spectrum back to spatial layout, unnormalized (scaled by side²).
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.side * self.side);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        transpose_in_place(buf, self.side);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    const TILE: usize = 16;
    for bi in (0..n).step_by(TILE) {
        for bj in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + TILE).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(input: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); n * n];
        for ky in 0..n {
            for kx in 0..n {
                let mut acc = Complex64::default();
                for y in 0..n {
                    for x in 0..n {
                        let phase = -2.0 * PI * ((kx * x + ky * y) % n) as f64 / n as f64;
                        acc += input[y * n + x] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[ky * n + kx] = acc;
            }
        }
        out
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n * n)
            .map(|i| Complex64::new(((i * 7919) % 31) as f64 - 15.0, ((i * 104729) % 17) as f64))
            .collect()
    }

    #[test]
    fn forward_is_transposed_dft() {
        for n in [1, 4, 6, 8, 17] {
            let x = signal(n);
            let expected = naive_dft(&x, n);
            let mut buf = x.clone();
            Fft2::new(n).forward(&mut buf);
            for ky in 0..n {
                for kx in 0..n {
                    let d = (buf[kx * n + ky] - expected[ky * n + kx]).norm();
                    assert!(d < 1e-9, "n={n} ({kx},{ky}) off by {d}");
                }
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let n = 32;
        let x = signal(n);
        let mut buf = x.clone();
        let mut fft = Fft2::new(n);
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        let scale = (n * n) as f64;
        for (a, b) in buf.iter().zip(&x) {
            assert!((a / scale - b).norm() < 1e-10);
        }
    }
}
