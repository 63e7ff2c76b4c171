//! Translation-invariant wavelet scattering features.
//!
//! A [`FilterBank`] holds `J × L` Morlet wavelets and one Gaussian low-pass,
//! all in the frequency domain at the full input resolution. The transform
//! cascades wavelet convolution and complex modulus up to second order and
//! sums every low-passed map over the image domain:
//!
//! - order 0: `Σ_u (x ⋆ φ)(u)`
//! - order 1: `Σ_u (|x ⋆ ψ_λ1| ⋆ φ)(u)`
//! - order 2: `Σ_u (||x ⋆ ψ_λ1| ⋆ ψ_λ2| ⋆ φ)(u)` for `j2 > j1`
//!
//! With periodic boundaries the spatial sum of a circular convolution with
//! `φ` equals `φ̂(0)` times the sum of its input, so the low-pass stage
//! reduces to a scaled sum and the features are exactly shift invariant.

mod fft;
mod filters;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::NormalizedImage;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub use fft::Fft2;
pub use filters::{MorletParams, Wavelet};

/// Boundary handling for the convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Mirror-pad by `2^J` on every side, convolve circularly on the padded
    /// grid and sum only over the original support.
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringConfig {
    #[serde(rename = "J")]
    pub scales: usize,
    #[serde(rename = "L")]
    pub orientations: usize,
    pub max_order: usize,
    pub side: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl ScatteringConfig {
    pub fn new(scales: usize, orientations: usize, max_order: usize, side: usize) -> Result<Self> {
        let cfg = Self {
            scales,
            orientations,
            max_order,
            side,
            boundary: Boundary::Periodic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(Error::InvalidConfig(format!(
                "J and L must be >= 1, got J={} L={}",
                self.scales, self.orientations
            )));
        }
        if !matches!(self.max_order, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "max_order must be 1 or 2, got {}",
                self.max_order
            )));
        }
        if self.scales >= usize::BITS as usize || (1usize << self.scales) > self.side {
            return Err(Error::InvalidConfig(format!(
                "2^J must not exceed the image side: J={} side={}",
                self.scales, self.side
            )));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        feature_count(self.scales, self.orientations, self.max_order)
            .expect("validated configuration")
    }

    /// Side of the FFT grid, including reflection padding.
    pub fn fft_side(&self) -> usize {
        match self.boundary {
            Boundary::Periodic => self.side,
            Boundary::Reflect => self.side + 2 * (1 << self.scales),
        }
    }
}

/// Number of scattering paths: `1 + J·L`, plus `L²·J(J−1)/2` at second order.
pub fn feature_count(scales: usize, orientations: usize, max_order: usize) -> Result<usize> {
    let first = 1 + scales * orientations;
    match max_order {
        1 => Ok(first),
        2 => Ok(first + orientations * orientations * scales * scales.saturating_sub(1) / 2),
        other => Err(Error::InvalidConfig(format!(
            "max_order must be 1 or 2, got {other}"
        ))),
    }
}

/// Identifies one entry of a scattering feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "order")]
pub enum ScatteringPath {
    #[serde(rename = "0")]
    Order0,
    #[serde(rename = "1")]
    Order1 { j1: usize, theta1: usize },
    #[serde(rename = "2")]
    Order2 {
        j1: usize,
        theta1: usize,
        j2: usize,
        theta2: usize,
    },
}

impl fmt::Display for ScatteringPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScatteringPath::Order0 => write!(f, "s0"),
            ScatteringPath::Order1 { j1, theta1 } => write!(f, "s1_j{j1}_t{theta1}"),
            ScatteringPath::Order2 {
                j1,
                theta1,
                j2,
                theta2,
            } => write!(f, "s2_j{j1}_t{theta1}_j{j2}_t{theta2}"),
        }
    }
}

/// Paths in feature order: order 0, then order 1 by `(j1, θ1)`, then order 2
/// by `(j1, θ1, j2, θ2)`.
pub fn path_index(cfg: &ScatteringConfig) -> Vec<ScatteringPath> {
    let (jn, ln) = (cfg.scales, cfg.orientations);
    let mut paths = vec![ScatteringPath::Order0];
    for j1 in 0..jn {
        for theta1 in 0..ln {
            paths.push(ScatteringPath::Order1 { j1, theta1 });
        }
    }
    if cfg.max_order == 2 {
        for j1 in 0..jn {
            for theta1 in 0..ln {
                for j2 in j1 + 1..jn {
                    for theta2 in 0..ln {
                        paths.push(ScatteringPath::Order2 {
                            j1,
                            theta1,
                            j2,
                            theta2,
                        });
                    }
                }
            }
        }
    }
    paths
}

/// Frequency-domain filters for one configuration. Immutable once built.
#[derive(Debug, Clone)]
pub struct FilterBank {
    config: ScatteringConfig,
    params: MorletParams,
    psi: Vec<Wavelet>,
    phi: Vec<f64>,
    paths: Arc<[ScatteringPath]>,
}

impl FilterBank {
    pub fn new(config: ScatteringConfig) -> Result<Self> {
        Self::with_params(
            config,
            MorletParams::standard(config.scales, config.orientations),
        )
    }

    pub fn with_params(config: ScatteringConfig, params: MorletParams) -> Result<Self> {
        config.validate()?;
        let n = config.fft_side();
        let mut fft = Fft2::new(n);
        let l = config.orientations;
        let psi = (0..config.scales)
            .flat_map(|j| (0..l).map(move |t| (j, t)))
            .map(|(scale, orientation)| {
                let dilation = 2f64.powi(scale as i32);
                let spatial = filters::morlet(
                    n,
                    params.sigma0 * dilation,
                    orientation as f64 * std::f64::consts::PI / l as f64,
                    params.xi0 / dilation,
                    params.slant,
                );
                Wavelet {
                    scale,
                    orientation,
                    spectrum: filters::real_spectrum(&mut fft, spatial),
                }
            })
            .collect();
        let phi = filters::real_spectrum(&mut fft, filters::lowpass(n, params.phi_sigma));
        Ok(Self {
            config,
            params,
            psi,
            phi,
            paths: path_index(&config).into(),
        })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.config
    }

    pub fn params(&self) -> &MorletParams {
        &self.params
    }

    pub fn wavelets(&self) -> &[Wavelet] {
        &self.psi
    }

    pub fn wavelet(&self, scale: usize, orientation: usize) -> &Wavelet {
        &self.psi[scale * self.config.orientations + orientation]
    }

    /// Low-pass spectrum, transposed layout; index 0 is zero frequency.
    pub fn lowpass(&self) -> &[f64] {
        &self.phi
    }

    pub fn paths(&self) -> &Arc<[ScatteringPath]> {
        &self.paths
    }

    /// `max_ω Σ_λ |ψ̂_λ(ω)|² + |φ̂(ω)|²`.
    pub fn littlewood_paley_max(&self) -> f64 {
        (0..self.phi.len())
            .map(|k| {
                self.phi[k] * self.phi[k]
                    + self
                        .psi
                        .iter()
                        .map(|w| w.spectrum[k] * w.spectrum[k])
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringFeatures {
    pub values: Vec<f64>,
    pub paths: Arc<[ScatteringPath]>,
}

/// Reusable transform state for one worker: FFT plans and scratch buffers.
pub struct Scatterer<'a> {
    bank: &'a FilterBank,
    fft: Fft2,
    spectrum: Vec<Complex64>,
    work: Vec<Complex64>,
    first_order: Vec<Complex64>,
}

impl<'a> Scatterer<'a> {
    pub fn new(bank: &'a FilterBank) -> Self {
        let n = bank.config.fft_side();
        Self {
            bank,
            fft: Fft2::new(n),
            spectrum: vec![Complex64::default(); n * n],
            work: vec![Complex64::default(); n * n],
            first_order: vec![Complex64::default(); n * n],
        }
    }

    pub fn transform(&mut self, img: &NormalizedImage) -> Result<ScatteringFeatures> {
        self.transform_pixels(img.side(), img.pixels())
    }

    /// Transforms a `side × side` row-major raster. Values need not lie in `[0, 255]`.
    pub fn transform_pixels(&mut self, side: usize, pixels: &[f64]) -> Result<ScatteringFeatures> {
        let bank = self.bank;
        let cfg = bank.config;
        if side != cfg.side {
            return Err(Error::DimensionMismatch {
                expected: cfg.side,
                actual: side,
            });
        }
        if pixels.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                actual: pixels.len(),
            });
        }
        let n = cfg.fft_side();
        let norm = 1.0 / (n * n) as f64;
        let mut values = Vec::with_capacity(bank.paths.len());

        self.load_input(pixels);
        let x_sum: f64 = self.spectrum.iter().map(|z| z.re).sum();
        self.fft.forward(&mut self.spectrum);
        values.push(match cfg.boundary {
            Boundary::Periodic => x_sum * bank.phi[0],
            Boundary::Reflect => self.cropped_lowpass_sum_of(Source::Spectrum),
        });

        let mut second = Vec::new();
        for w1 in &bank.psi {
            for ((dst, &s), &h) in self.work.iter_mut().zip(&self.spectrum).zip(&w1.spectrum) {
                *dst = s * h;
            }
            self.fft.inverse(&mut self.work);
            let mut u1_sum = 0.0;
            for (u, z) in self.first_order.iter_mut().zip(&self.work) {
                let m = z.norm() * norm;
                u1_sum += m;
                *u = Complex64::new(m, 0.0);
            }
            let needs_second = cfg.max_order == 2 && w1.scale + 1 < cfg.scales;
            if needs_second || cfg.boundary == Boundary::Reflect {
                self.fft.forward(&mut self.first_order);
            }
            values.push(match cfg.boundary {
                Boundary::Periodic => u1_sum * bank.phi[0],
                Boundary::Reflect => self.cropped_lowpass_sum_of(Source::FirstOrder),
            });
            if !needs_second {
                continue;
            }
            for w2 in bank.psi.iter().filter(|w2| w2.scale > w1.scale) {
                for ((dst, &s), &h) in self
                    .work
                    .iter_mut()
                    .zip(&self.first_order)
                    .zip(&w2.spectrum)
                {
                    *dst = s * h;
                }
                self.fft.inverse(&mut self.work);
                second.push(match cfg.boundary {
                    Boundary::Periodic => {
                        self.work.iter().map(|z| z.norm()).sum::<f64>() * norm * bank.phi[0]
                    }
                    Boundary::Reflect => {
                        for z in &mut self.work {
                            *z = Complex64::new(z.norm() * norm, 0.0);
                        }
                        self.fft.forward(&mut self.work);
                        self.cropped_lowpass_sum_of(Source::Work)
                    }
                });
            }
        }
        values.extend(second);
        debug_assert_eq!(values.len(), bank.paths.len());
        Ok(ScatteringFeatures {
            values,
            paths: Arc::clone(&bank.paths),
        })
    }

    fn load_input(&mut self, pixels: &[f64]) {
        let cfg = self.bank.config;
        let n = cfg.fft_side();
        let pad = (n - cfg.side) / 2;
        for row in 0..n {
            let src_row = reflect_index(row as isize - pad as isize, cfg.side);
            for col in 0..n {
                let src_col = reflect_index(col as isize - pad as isize, cfg.side);
                self.spectrum[row * n + col] =
                    Complex64::new(pixels[src_row * cfg.side + src_col], 0.0);
            }
        }
    }

    /// Sum over the unpadded support of `ifft(source ⊙ φ̂)`.
    fn cropped_lowpass_sum_of(&mut self, source: Source) -> f64 {
        let cfg = self.bank.config;
        let n = cfg.fft_side();
        let pad = (n - cfg.side) / 2;
        let src = match source {
            Source::Spectrum => &self.spectrum,
            Source::FirstOrder => &self.first_order,
            Source::Work => &self.work,
        };
        let mut buf: Vec<Complex64> = src
            .iter()
            .zip(&self.bank.phi)
            .map(|(&s, &h)| s * h)
            .collect();
        self.fft.inverse(&mut buf);
        let mut sum = 0.0;
        for row in pad..pad + cfg.side {
            sum += buf[row * n + pad..row * n + pad + cfg.side]
                .iter()
                .map(|z| z.re)
                .sum::<f64>();
        }
        sum / (n * n) as f64
    }
}

#[derive(Clone, Copy)]
enum Source {
    Spectrum,
    FirstOrder,
    Work,
}

/// Mirror index without edge repetition, valid for any offset.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// One-shot transform of a single image. Use [`Scatterer`] to amortize FFT
/// planning across many images.
pub fn scattering_transform(
    img: &NormalizedImage,
    bank: &FilterBank,
) -> Result<ScatteringFeatures> {
    Scatterer::new(bank).transform(img)
}

/// Transforms every image, in parallel on the current rayon pool, keeping input order.
pub fn transform_corpus(images: &[NormalizedImage], bank: &FilterBank) -> Result<FeatureMatrix> {
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map_init(
            || Scatterer::new(bank),
            |s, img| s.transform(img).map(|f| f.values),
        )
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(FeatureMatrix::zeros(0, bank.paths.len()));
    }
    FeatureMatrix::from_rows(&rows)
}
