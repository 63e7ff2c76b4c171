//! Kernel two-sample testing with the block MMD (B-test).
//!
//! Both corpora are shuffled with the same seeded stream, truncated to the
//! smaller size `n`, and cut into `m = ⌊n/B⌋` consecutive blocks of size
//! `B` (default `round(√n)`). Block `i` of the first corpus is compared with
//! block `i` of the second using the unbiased MMD estimate; the test
//! statistic is the mean block value, and its null distribution is taken as
//! Gaussian with variance estimated from the block values.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::matrix::{format_f64, FeatureMatrix};
use crate::rng::{indexed_substream, substream};

/// Smallest p-value reported; anything below is flagged as underflow.
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// Default sample cap for [`mmd_full_unbiased`].
pub const FULL_MMD_CAP: usize = 4096;

/// How the RBF scale `γ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    /// `1 / median(‖a − b‖²)` over pairs from a deterministic subsample.
    MedianHeuristic,
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Fixed(g) => write!(f, "{g}"),
            Gamma::MedianHeuristic => write!(f, "auto"),
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Gamma::MedianHeuristic);
        }
        let g: f64 = s.parse().map_err(|_| {
            Error::InvalidConfig(format!("gamma must be a number or `auto`, got {s:?}"))
        })?;
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {g}")));
        }
        Ok(Gamma::Fixed(g))
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Fixed(g) => s.serialize_f64(*g),
            Gamma::MedianHeuristic => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => Ok(Gamma::Fixed(g)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub gamma: Gamma,
    /// z-score features (pooled over both corpora) before the kernel.
    pub standardize: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            gamma: Gamma::Fixed(1.0),
            standardize: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        match self.gamma {
            Gamma::Fixed(g) if !(g > 0.0 && g.is_finite()) => {
                Err(Error::InvalidConfig(format!("gamma must be > 0, got {g}")))
            }
            _ => Ok(()),
        }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(−γ‖x − y‖²)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(rbf(x, y, gamma))
}

#[inline]
fn rbf(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(x, y)).exp()
}

/// Unbiased MMD² on two equally sized samples:
/// `1/(B(B−1)) Σ_{a≠b} [k(xa,xb) + k(ya,yb) − k(xa,yb) − k(xb,ya)]`.
pub fn mmd_block_unbiased<R: AsRef<[f64]>>(xs: &[R], ys: &[R], gamma: f64) -> Result<f64> {
    let b = xs.len();
    if ys.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: ys.len(),
        });
    }
    if b < 2 {
        return Err(Error::InsufficientData(format!(
            "block size must be >= 2, got {b}"
        )));
    }
    let dim = xs[0].as_ref().len();
    if let Some(bad) = xs.iter().chain(ys).find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.as_ref().len(),
        });
    }
    Ok(block_mmd(xs, ys, gamma))
}

fn block_mmd<R: AsRef<[f64]>>(xs: &[R], ys: &[R], gamma: f64) -> f64 {
    let b = xs.len();
    let mut sum = 0.0;
    for i in 0..b {
        let (xi, yi) = (xs[i].as_ref(), ys[i].as_ref());
        for j in i + 1..b {
            let (xj, yj) = (xs[j].as_ref(), ys[j].as_ref());
            // the summand is symmetric in (i, j), so each unordered pair counts twice
            let within = rbf(xi, xj, gamma) + rbf(yi, yj, gamma);
            let across = rbf(xi, yj, gamma) + rbf(xj, yi, gamma);
            sum += within - across;
        }
    }
    2.0 * sum / (b * (b - 1)) as f64
}

/// Single-block unbiased MMD² over the full samples. Quadratic cost, so
/// refused above `cap` samples.
pub fn mmd_full_unbiased(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    gamma: f64,
    cap: usize,
) -> Result<f64> {
    if x.rows() > cap || y.rows() > cap {
        return Err(Error::CapExceeded {
            n: x.rows().max(y.rows()),
            cap,
        });
    }
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            actual: y.cols(),
        });
    }
    let xs: Vec<&[f64]> = x.iter_rows().collect();
    let ys: Vec<&[f64]> = y.iter_rows().collect();
    mmd_block_unbiased(&xs, &ys, gamma)
}

/// Both corpora after optional pooled standardization.
struct Prepared {
    x: FeatureMatrix,
    y: FeatureMatrix,
}

fn prepare(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &KernelConfig) -> Result<Prepared> {
    cfg.validate()?;
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            actual: y.cols(),
        });
    }
    if !cfg.standardize {
        return Ok(Prepared {
            x: x.clone(),
            y: y.clone(),
        });
    }
    let d = x.cols();
    let n = (x.rows() + y.rows()) as f64;
    let mut mean = vec![0.0; d];
    for r in x.iter_rows().chain(y.iter_rows()) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for r in x.iter_rows().chain(y.iter_rows()) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd: Vec<f64> = var
        .iter()
        .map(|s| (s / n).sqrt().max(crate::embedding::SCALE_FLOOR))
        .collect();
    let apply = |m: &FeatureMatrix| {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&sd) {
                *v = (*v - mu) / s;
            }
        }
        out
    };
    Ok(Prepared {
        x: apply(x),
        y: apply(y),
    })
}

const MEDIAN_SUBSAMPLE: usize = 256;

fn resolve_gamma(gamma: Gamma, x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    match gamma {
        Gamma::Fixed(g) => Ok(g),
        Gamma::MedianHeuristic => {
            let pts: Vec<&[f64]> = x
                .iter_rows()
                .take(MEDIAN_SUBSAMPLE)
                .chain(y.iter_rows().take(MEDIAN_SUBSAMPLE))
                .collect();
            let mut d: Vec<f64> = Vec::with_capacity(pts.len() * pts.len() / 2);
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    d.push(sq_dist(pts[i], pts[j]));
                }
            }
            if d.is_empty() {
                return Err(Error::InsufficientData(
                    "median heuristic needs >= 2 samples".into(),
                ));
            }
            let mid = d.len() / 2;
            let (_, median, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
            if *median > 0.0 {
                Ok(1.0 / *median)
            } else {
                log::warn!("median squared distance is zero; falling back to gamma = 1");
                Ok(1.0)
            }
        }
    }
}

fn shuffled(m: &FeatureMatrix, seed: u64, stream: &str) -> FeatureMatrix {
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.shuffle(&mut substream(seed, stream));
    m.select_rows(&order)
}

fn serialize_maybe_infinite<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn deserialize_maybe_infinite<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("bad number {other:?}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BTestResult {
    /// Mean of the block statistics.
    pub statistic: f64,
    #[serde(
        serialize_with = "serialize_maybe_infinite",
        deserialize_with = "deserialize_maybe_infinite"
    )]
    pub z: f64,
    /// One-sided upper Gaussian tail of `z`, floored at [`P_VALUE_FLOOR`].
    pub p_value: f64,
    /// True when the exact tail fell below [`P_VALUE_FLOOR`].
    pub p_value_underflow: bool,
    #[serde(rename = "B")]
    pub block_size: usize,
    #[serde(rename = "m")]
    pub blocks: usize,
    pub alpha: f64,
    pub reject: bool,
    /// The resolved kernel scale.
    pub gamma: f64,
    pub standardize: bool,
    pub seed: u64,
    /// Samples used per corpus (before discarding the block remainder).
    pub n: usize,
    pub block_stats: Vec<f64>,
}

/// Upper Gaussian tail `P(Z > z)`.
pub fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Block-MMD two-sample test at level `alpha`.
pub fn btest(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    cfg: &KernelConfig,
    alpha: f64,
    block_size: Option<usize>,
    seed: u64,
) -> Result<BTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if x.rows() < 4 || y.rows() < 4 {
        return Err(Error::InsufficientData(format!(
            "B-test needs >= 4 samples per corpus, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    let prepared = prepare(x, y, cfg)?;
    // one stream for both: equal-length corpora get the same permutation
    let xs = shuffled(&prepared.x, seed, "btest/shuffle");
    let ys = shuffled(&prepared.y, seed, "btest/shuffle");
    let n = xs.rows().min(ys.rows());
    let b = block_size.unwrap_or_else(|| ((n as f64).sqrt().round() as usize).max(2));
    if b < 2 {
        return Err(Error::InvalidConfig(format!(
            "block size must be >= 2, got {b}"
        )));
    }
    let m = n / b;
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "only {m} block(s) of size {b} from {n} samples; need >= 2 to estimate variance"
        )));
    }
    let gamma = resolve_gamma(cfg.gamma, &xs, &ys)?;

    let block_stats: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let xb: Vec<&[f64]> = (i * b..(i + 1) * b).map(|r| xs.row(r)).collect();
            let yb: Vec<&[f64]> = (i * b..(i + 1) * b).map(|r| ys.row(r)).collect();
            block_mmd(&xb, &yb, gamma)
        })
        .collect();

    let statistic = block_stats.iter().sum::<f64>() / m as f64;
    let var = block_stats
        .iter()
        .map(|v| (v - statistic) * (v - statistic))
        .sum::<f64>()
        / (m - 1) as f64;
    let se = (var / m as f64).sqrt();
    let z = if se > 0.0 {
        statistic / se
    } else if statistic > 0.0 {
        f64::INFINITY
    } else if statistic < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let tail = upper_tail(z);
    let p_value_underflow = tail < P_VALUE_FLOOR;
    let p_value = if p_value_underflow {
        P_VALUE_FLOOR
    } else {
        tail.min(1.0)
    };
    Ok(BTestResult {
        statistic,
        z,
        p_value,
        p_value_underflow,
        block_size: b,
        blocks: m,
        alpha,
        reject: p_value < alpha,
        gamma,
        standardize: cfg.standardize,
        seed,
        n,
        block_stats,
    })
}

impl BTestResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatDistributions {
    pub h0_samples: Vec<f64>,
    pub h1_samples: Vec<f64>,
    #[serde(rename = "B")]
    pub block_size: usize,
    pub gamma: f64,
    pub draws: usize,
    pub seed: u64,
}

impl StatDistributions {
    /// Two-column `hypothesis,value` CSV: all H0 rows, then all H1 rows.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("hypothesis,value\n");
        for v in &self.h0_samples {
            out.push_str(&format!("H0,{}\n", format_f64(*v)));
        }
        for v in &self.h1_samples {
            out.push_str(&format!("H1,{}\n", format_f64(*v)));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Empirical block-statistic distributions.
///
/// Each H1 draw compares `B` samples from each corpus; each H0 draw splits
/// `2B` samples from the pooled union into two pseudo-corpora. Draws use
/// independent per-index substreams, so the output does not depend on the
/// worker count.
pub fn statistic_distributions(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    cfg: &KernelConfig,
    block_size: Option<usize>,
    draws: usize,
    seed: u64,
) -> Result<StatDistributions> {
    if draws < 1 {
        return Err(Error::InvalidConfig("draws must be >= 1".into()));
    }
    let prepared = prepare(x, y, cfg)?;
    let n = x.rows().min(y.rows());
    let b = block_size.unwrap_or_else(|| ((n as f64).sqrt().round() as usize).max(2));
    if b < 2 {
        return Err(Error::InvalidConfig(format!(
            "block size must be >= 2, got {b}"
        )));
    }
    if n < 2 * b {
        return Err(Error::InsufficientData(format!(
            "corpora need >= 2B = {} samples each, smaller has {n}",
            2 * b
        )));
    }
    let gamma = resolve_gamma(
        cfg.gamma,
        &shuffled(&prepared.x, seed, "btest/shuffle"),
        &shuffled(&prepared.y, seed, "btest/shuffle"),
    )?;
    let pooled = prepared.x.vstack(&prepared.y)?;
    let (px, py) = (&prepared.x, &prepared.y);

    let (h0_samples, h1_samples): (Vec<f64>, Vec<f64>) = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = indexed_substream(seed, "dist/h1", d as u64);
            let xi = index::sample(&mut rng, px.rows(), b);
            let yi = index::sample(&mut rng, py.rows(), b);
            let xb: Vec<&[f64]> = xi.iter().map(|i| px.row(i)).collect();
            let yb: Vec<&[f64]> = yi.iter().map(|i| py.row(i)).collect();
            let h1 = block_mmd(&xb, &yb, gamma);

            let mut rng = indexed_substream(seed, "dist/h0", d as u64);
            let pi: Vec<usize> = index::sample(&mut rng, pooled.rows(), 2 * b).into_vec();
            let ab: Vec<&[f64]> = pi[..b].iter().map(|&i| pooled.row(i)).collect();
            let bb: Vec<&[f64]> = pi[b..].iter().map(|&i| pooled.row(i)).collect();
            let h0 = block_mmd(&ab, &bb, gamma);
            (h0, h1)
        })
        .unzip();
    Ok(StatDistributions {
        h0_samples,
        h1_samples,
        block_size: b,
        gamma,
        draws,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, shift: f64, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) + shift)
            .collect::<Vec<f64>>();
        FeatureMatrix::new(rows, cols, data).unwrap()
    }

    /// Ordered-pair double loop, straight from the definition.
    fn naive_mmd(xs: &[Vec<f64>], ys: &[Vec<f64>], gamma: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
            (-gamma * d).exp()
        };
        let b = xs.len();
        let mut s = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    s += k(&xs[i], &xs[j]) + k(&ys[i], &ys[j])
                        - k(&xs[i], &ys[j])
                        - k(&xs[j], &ys[i]);
                }
            }
        }
        s / (b * (b - 1)) as f64
    }

    fn rows(m: &FeatureMatrix) -> Vec<Vec<f64>> {
        m.iter_rows().map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
        assert!(rbf_kernel(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn block_identical_is_exactly_zero() {
        let x = rows(&normal(12, 3, 0.0, 1));
        assert_eq!(mmd_block_unbiased(&x, &x, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn block_hand_case() {
        // x = {0, 1}, y = {10, 11}, γ = 1: every cross distance ≥ 81 so those terms vanish
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![vec![10.0], vec![11.0]];
        let e1 = (-1.0f64).exp();
        let cross = (-121.0f64).exp() + (-81.0f64).exp();
        let expected = (2.0 * (e1 + e1) - 2.0 * cross) / 2.0;
        let got = mmd_block_unbiased(&x, &y, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - naive_mmd(&x, &y, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn block_errors() {
        let one = vec![vec![0.0]];
        assert!(matches!(
            mmd_block_unbiased(&one, &one, 1.0),
            Err(Error::InsufficientData(_))
        ));
        let two = vec![vec![0.0], vec![1.0]];
        assert!(mmd_block_unbiased(&two, &one, 1.0).is_err());
    }

    #[test]
    fn full_matches_naive_and_block() {
        for seed in 0..5 {
            let x = normal(50, 4, 0.0, seed);
            let y = normal(50, 4, 0.3, seed + 100);
            let full = mmd_full_unbiased(&x, &y, 0.5, FULL_MMD_CAP).unwrap();
            assert!((full - naive_mmd(&rows(&x), &rows(&y), 0.5)).abs() < 1e-12);
            assert_eq!(full, mmd_block_unbiased(&rows(&x), &rows(&y), 0.5).unwrap());
        }
        let x = normal(10, 2, 0.0, 1);
        assert_eq!(mmd_full_unbiased(&x, &x, 1.0, FULL_MMD_CAP).unwrap(), 0.0);
        assert!(matches!(
            mmd_full_unbiased(&x, &x, 1.0, 5),
            Err(Error::CapExceeded { n: 10, cap: 5 })
        ));
    }

    #[test]
    fn btest_statistic_is_mean_of_its_blocks() {
        let x = normal(103, 3, 0.0, 4);
        let y = normal(97, 3, 0.2, 5);
        let r = btest(&x, &y, &KernelConfig::default(), 0.05, None, 9).unwrap();
        assert_eq!(r.n, 97);
        assert_eq!(r.block_size, 10);
        assert_eq!(r.blocks, 9);
        assert_eq!(r.block_stats.len(), r.blocks);
        let mean = r.block_stats.iter().sum::<f64>() / r.blocks as f64;
        assert_eq!(r.statistic, mean);
    }

    #[test]
    fn btest_blocks_match_independent_recomputation() {
        let x = normal(64, 2, 0.0, 6);
        let y = normal(64, 2, 0.5, 7);
        let cfg = KernelConfig {
            gamma: Gamma::Fixed(0.8),
            standardize: false,
        };
        let r = btest(&x, &y, &cfg, 0.05, Some(8), 3).unwrap();
        let xs = shuffled(&x, 3, "btest/shuffle");
        let ys = shuffled(&y, 3, "btest/shuffle");
        for i in 0..r.blocks {
            let xb = rows(&xs)[i * 8..(i + 1) * 8].to_vec();
            let yb = rows(&ys)[i * 8..(i + 1) * 8].to_vec();
            assert!((r.block_stats[i] - naive_mmd(&xb, &yb, 0.8)).abs() < 1e-12);
        }
    }

    #[test]
    fn btest_errors() {
        let small = normal(3, 2, 0.0, 1);
        let ok = normal(40, 2, 0.0, 2);
        assert!(matches!(
            btest(&small, &ok, &KernelConfig::default(), 0.05, None, 0),
            Err(Error::InsufficientData(_))
        ));
        // 4 samples with B = 3 leaves a single block
        let four = normal(4, 2, 0.0, 3);
        assert!(matches!(
            btest(&four, &four, &KernelConfig::default(), 0.05, Some(3), 0),
            Err(Error::InsufficientData(_))
        ));
        let wide = normal(40, 3, 0.0, 2);
        assert!(matches!(
            btest(&ok, &wide, &KernelConfig::default(), 0.05, None, 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(btest(&ok, &ok, &KernelConfig::default(), 1.5, None, 0).is_err());
    }

    #[test]
    fn btest_identical_inputs_retain_null() {
        let x = normal(100, 4, 0.0, 8);
        let r = btest(&x, &x, &KernelConfig::default(), 0.05, None, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.05 && !r.reject);
    }

    #[test]
    fn btest_detects_unit_mean_shift() {
        let x = normal(500, 5, 0.0, 10);
        let y = normal(500, 5, 1.0, 11);
        let r = btest(&x, &y, &KernelConfig::default(), 0.01, None, 2).unwrap();
        assert!(r.p_value < 0.01, "{}", r.p_value);
        assert!(r.reject);
    }

    #[test]
    fn btest_underflow_is_flagged() {
        // wide kernel, far-apart corpora: block values sit near 2 with tiny spread
        let x = normal(400, 3, 0.0, 12);
        let y = normal(400, 3, 1000.0, 13);
        let cfg = KernelConfig {
            gamma: Gamma::Fixed(1e-3),
            standardize: false,
        };
        let r = btest(&x, &y, &cfg, 0.05, None, 0).unwrap();
        assert!(r.p_value_underflow);
        assert_eq!(r.p_value, P_VALUE_FLOOR);
        let json = r.to_json().unwrap();
        let back: BTestResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back.z, r.z);
    }

    #[test]
    fn h0_level_on_disjoint_halves() {
        let mut retained = 0;
        for seed in 0..100 {
            let pool = normal(2000, 5, 0.0, 1000 + seed);
            let x = pool.select_rows(&(0..1000).collect::<Vec<_>>());
            let y = pool.select_rows(&(1000..2000).collect::<Vec<_>>());
            let r = btest(&x, &y, &KernelConfig::default(), 0.01, None, seed).unwrap();
            if r.p_value > 0.01 {
                retained += 1;
            }
        }
        assert!(retained >= 95, "retained {retained}/100");
    }

    #[test]
    fn standardization_removes_common_scale() {
        let x = normal(200, 4, 0.0, 20);
        let y = normal(200, 4, 0.2, 21);
        let cfg = KernelConfig::default();
        let base = btest(&x, &y, &cfg, 0.05, None, 4).unwrap();
        let scaled = btest(
            &x.map(|v| v * 37.5),
            &y.map(|v| v * 37.5),
            &cfg,
            0.05,
            None,
            4,
        )
        .unwrap();
        assert!((base.p_value - scaled.p_value).abs() < 1e-9);
    }

    #[test]
    fn gamma_parsing_and_median_heuristic() {
        assert_eq!("auto".parse::<Gamma>().unwrap(), Gamma::MedianHeuristic);
        assert_eq!("0.5".parse::<Gamma>().unwrap(), Gamma::Fixed(0.5));
        assert!("-1".parse::<Gamma>().is_err());
        assert!("x".parse::<Gamma>().is_err());
        let x = normal(50, 3, 0.0, 1);
        let y = normal(50, 3, 0.0, 2);
        let g = resolve_gamma(Gamma::MedianHeuristic, &x, &y).unwrap();
        // median squared distance of two standard normals in 3-D is about 2·3·0.79
        assert!(g > 0.1 && g < 0.5, "{g}");
        let cfg = KernelConfig {
            gamma: Gamma::MedianHeuristic,
            standardize: true,
        };
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            r#"{"gamma":"auto","standardize":true}"#
        );
    }

    #[test]
    fn distributions_same_distribution_agree() {
        let x = normal(400, 4, 0.0, 30);
        let y = normal(400, 4, 0.0, 31);
        let d = statistic_distributions(&x, &y, &KernelConfig::default(), None, 200, 5).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = ((var(&d.h0_samples) + var(&d.h1_samples)) / 200.0).sqrt();
        assert!((mean(&d.h0_samples) - mean(&d.h1_samples)).abs() <= 2.0 * se);
    }

    #[test]
    fn distributions_separate_under_shift() {
        let x = normal(500, 5, 0.0, 31);
        let y = normal(500, 5, 1.0, 32);
        let d = statistic_distributions(&x, &y, &KernelConfig::default(), None, 300, 6).unwrap();
        let mut h0 = d.h0_samples.clone();
        h0.sort_by(f64::total_cmp);
        let q99 = h0[(0.99 * (h0.len() - 1) as f64).ceil() as usize];
        let mean_h1 = d.h1_samples.iter().sum::<f64>() / d.h1_samples.len() as f64;
        assert!(mean_h1 > q99, "{mean_h1} vs {q99}");
    }

    #[test]
    fn distributions_are_deterministic_and_validated() {
        let x = normal(100, 3, 0.0, 1);
        let y = normal(100, 3, 0.4, 2);
        let cfg = KernelConfig::default();
        let a = statistic_distributions(&x, &y, &cfg, None, 50, 7).unwrap();
        let b = statistic_distributions(&x, &y, &cfg, None, 50, 7).unwrap();
        assert_eq!(a, b);
        assert!(statistic_distributions(&x, &y, &cfg, None, 0, 7).is_err());
        assert!(statistic_distributions(&x, &y, &cfg, Some(60), 5, 7).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kernel_symmetric_and_bounded(seed in any::<u64>(), gamma in 0.01f64..5.0) {
            let m = normal(2, 6, 0.0, seed);
            let (a, b) = (m.row(0), m.row(1));
            let kab = rbf_kernel(a, b, gamma).unwrap();
            prop_assert_eq!(kab, rbf_kernel(b, a, gamma).unwrap());
            prop_assert!(kab > 0.0 && kab <= 1.0);
            prop_assert_eq!(rbf_kernel(a, a, gamma).unwrap(), 1.0);
        }

        #[test]
        fn block_invariant_to_joint_permutation(seed in any::<u64>()) {
            let x = rows(&normal(8, 3, 0.0, seed));
            let y = rows(&normal(8, 3, 0.5, seed ^ 1));
            let base = mmd_block_unbiased(&x, &y, 1.0).unwrap();
            let mut order: Vec<usize> = (0..8).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let xp: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
            let yp: Vec<Vec<f64>> = order.iter().map(|&i| y[i].clone()).collect();
            prop_assert!((mmd_block_unbiased(&xp, &yp, 1.0).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn one_sided_permutation_only_moves_the_paired_diagonal(seed in any::<u64>()) {
            // Σ_{a≠b} k(xa, yb) omits the pairs (xa, ya), so reordering xs alone
            // shifts the estimate by exactly the change in those omitted pairs.
            let x = rows(&normal(8, 3, 0.0, seed));
            let y = rows(&normal(8, 3, 0.5, seed ^ 1));
            let mut xp = x.clone();
            xp.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let diag = |a: &[Vec<f64>]| -> f64 {
                a.iter().zip(&y).map(|(p, q)| rbf(p, q, 1.0)).sum()
            };
            let expected_shift = 2.0 * (diag(&xp) - diag(&x)) / (8.0 * 7.0);
            let shift = mmd_block_unbiased(&xp, &y, 1.0).unwrap() - mmd_block_unbiased(&x, &y, 1.0).unwrap();
            prop_assert!((shift - expected_shift).abs() < 1e-12);
        }

        #[test]
        fn block_invariant_to_rigid_motion(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU, tx in -3.0f64..3.0) {
            let x = rows(&normal(10, 2, 0.0, seed));
            let y = rows(&normal(10, 2, 0.3, seed ^ 2));
            let (s, c) = angle.sin_cos();
            let mv = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                v.iter().map(|p| vec![c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] - tx]).collect()
            };
            let a = mmd_block_unbiased(&x, &y, 1.0).unwrap();
            let b = mmd_block_unbiased(&mv(&x), &mv(&y), 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn btest_mean_identity_holds(seed in any::<u64>(), nx in 8usize..60, ny in 8usize..60) {
            let x = normal(nx, 2, 0.0, seed);
            let y = normal(ny, 2, 0.1, seed ^ 3);
            let r = btest(&x, &y, &KernelConfig::default(), 0.05, Some(3), seed).unwrap();
            prop_assert_eq!(r.statistic, r.block_stats.iter().sum::<f64>() / r.blocks as f64);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert_eq!(r.blocks, nx.min(ny) / 3);
        }
    }
}
