//! Morlet wavelet and Gaussian low-pass filter construction.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft2;

/// Shape parameters shared by every filter in a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorletParams {
    /// Envelope width at the finest scale; scale `j` uses `sigma0 * 2^j`.
    pub sigma0: f64,
    /// Center frequency at the finest scale; scale `j` uses `xi0 / 2^j`.
    pub xi0: f64,
    /// Ratio of envelope widths along and across the oscillation.
    pub slant: f64,
    /// Width of the low-pass Gaussian.
    pub phi_sigma: f64,
}

impl MorletParams {
    pub fn standard(scales: usize, orientations: usize) -> Self {
        Self {
            sigma0: 0.8,
            xi0: 3.0 * PI / 4.0,
            slant: 4.0 / orientations as f64,
            phi_sigma: 0.8 * 2f64.powi(scales as i32 - 1),
        }
    }
}

/// One oriented, dilated wavelet.
#[derive(Debug, Clone)]
pub struct Wavelet {
    pub scale: usize,
    pub orientation: usize,
    /// Real Fourier transform in the transposed layout produced by [`Fft2::forward`].
    pub spectrum: Vec<f64>,
}

/// Periodized anisotropic Gabor filter sampled on a `side × side` grid with
/// the origin at index 0.
pub(crate) fn gabor(side: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<Complex64> {
    let (s, c) = theta.sin_cos();
    let denom = 2.0 * sigma * sigma;
    let qa = (c * c + slant * slant * s * s) / denom;
    let qb = 2.0 * c * s * (1.0 - slant * slant) / denom;
    let qc = (s * s + slant * slant * c * c) / denom;
    let (kx, ky) = (xi * c, xi * s);

    // Enough periods that the widest envelope axis has decayed below 1e-20.
    let widest = sigma / slant.min(1.0);
    let periods = (10.0 * widest / side as f64).ceil() as i64;
    let n = side as i64;
    let half = n / 2;

    let norm = 2.0 * PI * sigma * sigma / slant;
    let mut out = vec![Complex64::default(); side * side];
    for row in 0..n {
        let y0 = if row >= half { row - n } else { row };
        for col in 0..n {
            let x0 = if col >= half { col - n } else { col };
            let mut acc = Complex64::default();
            for ey in -periods..=periods {
                let y = (y0 + ey * n) as f64;
                for ex in -periods..=periods {
                    let x = (x0 + ex * n) as f64;
                    let envelope = -(qa * x * x + qb * x * y + qc * y * y);
                    if envelope < -745.0 {
                        continue;
                    }
                    acc += Complex64::from_polar(envelope.exp(), kx * x + ky * y);
                }
            }
            out[(row * n + col) as usize] = acc / norm;
        }
    }
    out
}

/// Morlet wavelet: a Gabor filter minus the multiple of its envelope that
/// makes the spatial sum vanish. The envelope integrates to one, so the
/// spectral peak is close to one at every scale.
pub(crate) fn morlet(side: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<Complex64> {
    let wave = gabor(side, sigma, theta, xi, slant);
    let envelope = gabor(side, sigma, theta, 0.0, slant);
    let beta = wave.iter().sum::<Complex64>() / envelope.iter().sum::<Complex64>();
    wave.iter()
        .zip(&envelope)
        .map(|(w, e)| w - beta * e)
        .collect()
}

pub(crate) fn real_spectrum(fft: &mut Fft2, mut spatial: Vec<Complex64>) -> Vec<f64> {
    fft.forward(&mut spatial);
    spatial.into_iter().map(|z| z.re).collect()
}

/// Gaussian low-pass with unit spatial sum, i.e. unit gain at zero frequency.
pub(crate) fn lowpass(side: usize, sigma: f64) -> Vec<Complex64> {
    let mut g = gabor(side, sigma, 0.0, 0.0, 1.0);
    let total: f64 = g.iter().map(|z| z.re).sum();
    for z in &mut g {
        *z = Complex64::new(z.re / total, 0.0);
    }
    g
}
