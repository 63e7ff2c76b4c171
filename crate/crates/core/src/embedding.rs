//! Whitened two-component PCA embedding, binned densities and OOD selection.
//!
//! Features are centered and scaled per dimension (population statistics over
//! the pooled fit set), then projected onto the top two eigenvectors of the
//! resulting correlation matrix. By default each coordinate is divided by the
//! square root of its eigenvalue so the fit set has unit variance along both
//! axes; [`ScoreScaling::Raw`] keeps the plain projection. Densities are plain 2D histograms over a
//! fixed rectangle; bins are half-open `[lo, hi)` except the last bin along
//! each axis, which is closed so samples on the upper edge are kept.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{format_f64, FeatureMatrix};

/// Floor applied to per-dimension standard deviations.
pub const SCALE_FLOOR: f64 = 1e-8;

pub type Point = [f64; 2];

/// How projected coordinates are scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScaling {
    /// Divide by `sqrt(explained_variance)`, floored at [`SCALE_FLOOR`].
    #[default]
    Unit,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Two orthonormal loading vectors.
    pub components: [Vec<f64>; 2],
    /// Variance of the fit set along each component.
    pub explained_variance: [f64; 2],
    pub fit_corpus_ids: Vec<String>,
    pub n_samples: usize,
    /// Dimensions whose standard deviation was raised to [`SCALE_FLOOR`].
    #[serde(default)]
    pub floored_dims: Vec<usize>,
    #[serde(default)]
    pub score_scaling: ScoreScaling,
}

/// Fits the embedding on a single feature matrix.
pub fn fit_embedding(features: &FeatureMatrix) -> Result<EmbeddingModel> {
    fit_embedding_pooled(&[features], &[])
}

/// Fits on the union of several corpora.
///
/// Statistics are accumulated per group and then combined in group order, so
/// swapping the first two groups yields a bit-identical model.
pub fn fit_embedding_pooled(groups: &[&FeatureMatrix], ids: &[String]) -> Result<EmbeddingModel> {
    let groups: Vec<&FeatureMatrix> = groups.iter().copied().filter(|g| g.rows() > 0).collect();
    let dim = groups.first().map_or(0, |g| g.cols());
    if let Some(bad) = groups.iter().find(|g| g.cols() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.cols(),
        });
    }
    let n: usize = groups.iter().map(|g| g.rows()).sum();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "embedding needs at least 3 samples, got {n}"
        )));
    }
    if dim < 2 {
        return Err(Error::InsufficientData(format!(
            "embedding needs feature dimension >= 2, got {dim}"
        )));
    }
    let nf = n as f64;

    let mean: Vec<f64> = fold_groups(&groups, dim, |g, acc| {
        for row in g.iter_rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    })
    .into_iter()
    .map(|s| s / nf)
    .collect();

    let sq: Vec<f64> = fold_groups(&groups, dim, |g, acc| {
        for row in g.iter_rows() {
            for ((a, v), m) in acc.iter_mut().zip(row).zip(&mean) {
                *a += (v - m) * (v - m);
            }
        }
    });
    let mut floored_dims = Vec::new();
    let scale: Vec<f64> = sq
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let sd = (s / nf).sqrt();
            if sd < SCALE_FLOOR {
                floored_dims.push(k);
                SCALE_FLOOR
            } else {
                sd
            }
        })
        .collect();
    if !floored_dims.is_empty() {
        log::warn!(
            "{} feature dimension(s) have (near-)zero variance; scale floored at {SCALE_FLOOR}",
            floored_dims.len()
        );
    }

    let mut corr = DMatrix::<f64>::zeros(dim, dim);
    for (gi, g) in groups.iter().enumerate() {
        let z = DMatrix::from_fn(g.rows(), dim, |i, k| (g.get(i, k) - mean[k]) / scale[k]);
        let part = z.transpose() * &z;
        if gi == 0 {
            corr = part;
        } else {
            corr += part;
        }
    }
    corr /= nf;

    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let component = |rank: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig
            .eigenvectors
            .column(order[rank])
            .iter()
            .copied()
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (k, x)| {
                if x.abs() > best.1 {
                    (k, x.abs())
                } else {
                    best
                }
            })
            .0;
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for x in &mut v {
            *x *= sign / norm;
        }
        v
    };
    Ok(EmbeddingModel {
        mean,
        scale,
        components: [component(0), component(1)],
        explained_variance: [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]],
        fit_corpus_ids: ids.to_vec(),
        n_samples: n,
        floored_dims,
        score_scaling: ScoreScaling::default(),
    })
}

/// Accumulates one vector per group, then sums the group vectors in order.
fn fold_groups(
    groups: &[&FeatureMatrix],
    dim: usize,
    accumulate: impl Fn(&FeatureMatrix, &mut Vec<f64>),
) -> Vec<f64> {
    let mut total: Option<Vec<f64>> = None;
    for g in groups {
        let mut acc = vec![0.0; dim];
        accumulate(g, &mut acc);
        total = Some(match total {
            None => acc,
            Some(t) => t.iter().zip(&acc).map(|(a, b)| a + b).collect(),
        });
    }
    total.unwrap_or_else(|| vec![0.0; dim])
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_score_scaling(mut self, scaling: ScoreScaling) -> Self {
        self.score_scaling = scaling;
        self
    }

    /// Divisors applied to the two projected coordinates.
    pub fn score_divisors(&self) -> [f64; 2] {
        match self.score_scaling {
            ScoreScaling::Raw => [1.0, 1.0],
            ScoreScaling::Unit => self
                .explained_variance
                .map(|v| v.max(0.0).sqrt().max(SCALE_FLOOR)),
        }
    }

    pub fn project_row(&self, row: &[f64]) -> Result<Point> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: row.len(),
            });
        }
        let mut out = [0.0; 2];
        for (k, v) in row.iter().enumerate() {
            let z = (v - self.mean[k]) / self.scale[k];
            out[0] += z * self.components[0][k];
            out[1] += z * self.components[1][k];
        }
        let div = self.score_divisors();
        Ok([out[0] / div[0], out[1] / div[1]])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

/// `((x − mean) / scale) · components / divisors`, row by row.
pub fn project(model: &EmbeddingModel, features: &FeatureMatrix) -> Result<Vec<Point>> {
    if features.rows() > 0 && features.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: features.cols(),
        });
    }
    features.iter_rows().map(|r| model.project_row(r)).collect()
}

/// Closed rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    fn is_proper(&self) -> bool {
        [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }
}

impl Default for Rect {
    fn default() -> Self {
        Self::new(-4.0, 4.0, -4.0, 4.0)
    }
}

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub range: Rect,
    pub bins: usize,
    pub corpus_ids: Vec<String>,
    /// `counts[c][ix * bins + iy]`.
    pub counts: Vec<Vec<u64>>,
    pub out_of_range: Vec<u64>,
}

impl DensityGrid {
    /// Cell `(ix, iy)` containing `p`, or `None` outside the range.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let ix = axis_bin(p[0], self.range.x0, self.range.x1, self.bins)?;
        let iy = axis_bin(p[1], self.range.y0, self.range.y1, self.bins)?;
        Some((ix, iy))
    }

    pub fn count(&self, corpus: usize, ix: usize, iy: usize) -> u64 {
        self.counts[corpus][ix * self.bins + iy]
    }

    pub fn in_range_total(&self, corpus: usize) -> u64 {
        self.counts[corpus].iter().sum()
    }

    pub fn cell_bounds(&self, ix: usize, iy: usize) -> Rect {
        let wx = (self.range.x1 - self.range.x0) / self.bins as f64;
        let wy = (self.range.y1 - self.range.y0) / self.bins as f64;
        Rect::new(
            self.range.x0 + ix as f64 * wx,
            self.range.x0 + (ix + 1) as f64 * wx,
            self.range.y0 + iy as f64 * wy,
            self.range.y0 + (iy + 1) as f64 * wy,
        )
    }

    /// Long-format CSV: one row per cell, one count column per corpus.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("ix,iy,x_lo,x_hi,y_lo,y_hi");
        for id in &self.corpus_ids {
            out.push_str(&format!(",count_{id}"));
        }
        out.push('\n');
        for ix in 0..self.bins {
            for iy in 0..self.bins {
                let b = self.cell_bounds(ix, iy);
                out.push_str(&format!(
                    "{ix},{iy},{},{},{},{}",
                    format_f64(b.x0),
                    format_f64(b.x1),
                    format_f64(b.y0),
                    format_f64(b.y1)
                ));
                for c in 0..self.counts.len() {
                    out.push_str(&format!(",{}", self.count(c, ix, iy)));
                }
                out.push('\n');
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn axis_bin(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    if v == hi {
        return Some(bins - 1);
    }
    let i = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    Some(i.min(bins - 1))
}

/// Bins each corpus's coordinates over `range` into `bins × bins` cells.
pub fn estimate_density(
    coords: &[&[Point]],
    corpus_ids: &[String],
    range: Rect,
    bins: usize,
) -> Result<DensityGrid> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be >= 1".into()));
    }
    if !range.is_proper() {
        return Err(Error::InvalidConfig(format!(
            "degenerate density range {range:?}"
        )));
    }
    let mut grid = DensityGrid {
        range,
        bins,
        corpus_ids: (0..coords.len())
            .map(|c| corpus_ids.get(c).cloned().unwrap_or_else(|| c.to_string()))
            .collect(),
        counts: vec![vec![0; bins * bins]; coords.len()],
        out_of_range: vec![0; coords.len()],
    };
    for (c, points) in coords.iter().enumerate() {
        for &p in *points {
            match grid.cell_of(p) {
                Some((ix, iy)) => grid.counts[c][ix * bins + iy] += 1,
                None => grid.out_of_range[c] += 1,
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// `Σ_cells sqrt(p̂_a · p̂_b)` over in-range normalized histograms.
    pub bhattacharyya: f64,
    /// Fraction of each corpus's in-range samples lying in cells the other corpus leaves empty.
    pub non_overlap_mass: [f64; 2],
    pub out_of_range: [u64; 2],
}

pub fn overlap_report(grid: &DensityGrid) -> Result<OverlapReport> {
    if grid.counts.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "overlap needs exactly 2 corpora, grid has {}",
            grid.counts.len()
        )));
    }
    let totals = [grid.in_range_total(0), grid.in_range_total(1)];
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(Error::InsufficientData(format!(
            "corpus {} has no samples inside the density range",
            grid.corpus_ids[c]
        )));
    }
    let (ta, tb) = (totals[0] as f64, totals[1] as f64);
    let (a, b) = (&grid.counts[0], &grid.counts[1]);
    let bhattacharyya = a
        .iter()
        .zip(b)
        .map(|(&ca, &cb)| ((ca as f64 / ta) * (cb as f64 / tb)).sqrt())
        .sum::<f64>()
        .min(1.0);
    let alone = |mine: &[u64], other: &[u64]| -> u64 {
        mine.iter()
            .zip(other)
            .filter(|(_, &o)| o == 0)
            .map(|(&m, _)| m)
            .sum()
    };
    Ok(OverlapReport {
        bhattacharyya,
        non_overlap_mass: [alone(a, b) as f64 / ta, alone(b, a) as f64 / tb],
        out_of_range: [grid.out_of_range[0], grid.out_of_range[1]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodCriterion {
    /// Closed rectangle in embedding coordinates.
    Rectangle(Rect),
    /// Cells where the reference corpus has at most `tau` samples.
    NonOverlap { tau: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSelection {
    /// Sorted, unique indices into the source corpus.
    pub indices: Vec<usize>,
    pub criterion: OodCriterion,
}

/// Selects source samples satisfying `criterion`.
///
/// Non-overlap selection looks up each sample's cell in `reference`, a grid
/// plus the index of the other corpus within it. Samples outside the grid
/// range are never selected in that mode.
pub fn select_ood(
    coords: &[Point],
    criterion: OodCriterion,
    reference: Option<(&DensityGrid, usize)>,
) -> Result<OodSelection> {
    let indices: Vec<usize> = match criterion {
        OodCriterion::Rectangle(rect) => {
            if !rect.is_proper() && !(rect.x0 == rect.x1 || rect.y0 == rect.y1) {
                return Err(Error::InvalidConfig(format!(
                    "malformed rectangle {rect:?}"
                )));
            }
            coords
                .iter()
                .enumerate()
                .filter(|(_, &p)| rect.contains(p))
                .map(|(i, _)| i)
                .collect()
        }
        OodCriterion::NonOverlap { tau } => {
            let (grid, other) = reference.ok_or_else(|| {
                Error::InvalidConfig("non-overlap selection needs a reference density grid".into())
            })?;
            if other >= grid.counts.len() {
                return Err(Error::InvalidConfig(format!(
                    "reference corpus {other} not in grid"
                )));
            }
            coords
                .iter()
                .enumerate()
                .filter(|(_, &p)| {
                    grid.cell_of(p)
                        .is_some_and(|(ix, iy)| grid.count(other, ix, iy) <= tau)
                })
                .map(|(i, _)| i)
                .collect()
        }
    };
    if indices.is_empty() {
        log::warn!("OOD selection is empty for criterion {criterion:?}");
    }
    Ok(OodSelection { indices, criterion })
}
