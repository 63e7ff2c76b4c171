//! Corpus ingestion: manifests, decoding, dynamic-range normalization and
//! resampling to the square analysis resolution.

use std::collections::HashSet;
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelerOutputs;

pub const DEFAULT_SIDE: usize = 256;

/// Raw decoded pixels, at most 16 bits per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image must be nonempty, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }
}

/// A real-valued raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// A square image at the analysis resolution with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    side: usize,
    pixels: Vec<f64>,
}

impl NormalizedImage {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                actual: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "normalized pixel {bad} outside [0, 255]"
            )));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

/// Non-fatal conditions raised during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestWarning {
    /// max == min; the image was mapped to all zeros.
    DegenerateRange,
    /// The target side exceeded the input in at least one dimension.
    Upsampled,
}

impl IngestWarning {
    pub fn code(self) -> &'static str {
        match self {
            IngestWarning::DegenerateRange => "W001",
            IngestWarning::Upsampled => "W002",
        }
    }
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::DegenerateRange => {
                write!(
                    f,
                    "{}: constant image, dynamic range is degenerate",
                    self.code()
                )
            }
            IngestWarning::Upsampled => {
                write!(
                    f,
                    "{}: input smaller than target side, upsampled bilinearly",
                    self.code()
                )
            }
        }
    }
}

/// Maps pixels to `trunc((v - min) / (max - min) * 255)`.
///
/// A constant image has no range to stretch; it becomes all zeros and the
/// [`IngestWarning::DegenerateRange`] warning is returned.
pub fn normalize_dynamic_range(img: &RawImage) -> (FloatImage, Option<IngestWarning>) {
    let lo = *img.pixels.iter().min().expect("nonempty by construction");
    let hi = *img.pixels.iter().max().expect("nonempty by construction");
    if hi == lo {
        return (
            FloatImage::filled(img.width, img.height, 0.0),
            Some(IngestWarning::DegenerateRange),
        );
    }
    let range = f64::from(hi - lo);
    let data = img
        .pixels
        .iter()
        .map(|&v| (f64::from(v - lo) / range * 255.0).trunc())
        .collect();
    (
        FloatImage {
            width: img.width,
            height: img.height,
            data,
        },
        None,
    )
}

/// Per-axis resampling weights: `weights[i]` lists `(source index, weight)`.
fn axis_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    if input == output {
        return (0..output).map(|i| vec![(i, 1.0)]).collect();
    }
    let scale = input as f64 / output as f64;
    if input > output {
        // area average: output cell i covers [i*scale, (i+1)*scale) in source units
        (0..output)
            .map(|i| {
                let start = i as f64 * scale;
                let end = start + scale;
                let first = start.floor() as usize;
                let last = (end.ceil() as usize).min(input);
                (first..last)
                    .filter_map(|s| {
                        let overlap = (end.min(s as f64 + 1.0) - start.max(s as f64)).max(0.0);
                        (overlap > 0.0).then_some((s, overlap / scale))
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..output)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                let t = src - lo as f64;
                if hi == lo || t == 0.0 {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - t), (hi, t)]
                }
            })
            .collect()
    }
}

/// Resamples to `side × side`: area average along axes that shrink, bilinear
/// along axes that grow. Equal sizes are copied bit for bit.
pub fn resample_image(
    img: &FloatImage,
    side: usize,
) -> Result<(NormalizedImage, Option<IngestWarning>)> {
    if side < 2 {
        return Err(Error::InvalidConfig(format!(
            "side must be >= 2, got {side}"
        )));
    }
    let warning = (side > img.width || side > img.height).then_some(IngestWarning::Upsampled);
    if img.width == side && img.height == side {
        let pixels = img.data.iter().map(|v| v.clamp(0.0, 255.0)).collect();
        return Ok((NormalizedImage { side, pixels }, warning));
    }
    let wx = axis_weights(img.width, side);
    let wy = axis_weights(img.height, side);

    let mut horizontal = vec![0.0; img.height * side];
    for y in 0..img.height {
        let row = &img.data[y * img.width..(y + 1) * img.width];
        for (x, taps) in wx.iter().enumerate() {
            horizontal[y * side + x] = taps.iter().map(|&(s, w)| row[s] * w).sum();
        }
    }
    let mut pixels = vec![0.0; side * side];
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..side {
            let v: f64 = taps
                .iter()
                .map(|&(s, w)| horizontal[s * side + x] * w)
                .sum();
            pixels[y * side + x] = v.clamp(0.0, 255.0);
        }
    }
    Ok((NormalizedImage { side, pixels }, warning))
}

/// Decodes a raster file into raw samples. Color images are reduced to
/// Rec. 601 luminance.
pub fn decode_image(path: &Path) -> Result<RawImage> {
    let err = |message: String| Error::Image {
        path: path.to_owned(),
        message,
    };
    let img = ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    Ok(raw_from_dynamic(img))
}

fn raw_from_dynamic(img: DynamicImage) -> RawImage {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| u16::from(p.0[0])).collect(),
        DynamicImage::ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| rec601(f64::from(p.0[0]), f64::from(p.0[1]), f64::from(p.0[2])))
            .collect(),
        other => other
            .to_rgb16()
            .pixels()
            .map(|p| rec601(f64::from(p.0[0]), f64::from(p.0[1]), f64::from(p.0[2])))
            .collect(),
    };
    RawImage {
        width,
        height,
        pixels,
    }
}

fn rec601(r: f64, g: f64, b: f64) -> u16 {
    (0.299 * r + 0.587 * g + 0.114 * b).round() as u16
}

/// Options controlling how decoded rasters become analysis images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub side: usize,
    /// Round the resampled image to 8-bit integers.
    pub quantize8: bool,
    /// Round-trip the 8-bit image through JPEG at quality 95.
    pub jpeg95: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            side: DEFAULT_SIDE,
            quantize8: false,
            jpeg95: false,
        }
    }
}

/// Normalizes and resamples one decoded image.
pub fn ingest_raw(
    raw: &RawImage,
    opts: &IngestOptions,
) -> Result<(NormalizedImage, Vec<IngestWarning>)> {
    let (normalized, w1) = normalize_dynamic_range(raw);
    let (mut image, w2) = resample_image(&normalized, opts.side)?;
    if opts.quantize8 || opts.jpeg95 {
        for v in &mut image.pixels {
            *v = v.round();
        }
    }
    if opts.jpeg95 {
        image = jpeg_round_trip(&image, 95)?;
    }
    Ok((image, w1.into_iter().chain(w2).collect()))
}

fn jpeg_round_trip(img: &NormalizedImage, quality: u8) -> Result<NormalizedImage> {
    let side = img.side as u32;
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| v as u8).collect();
    let gray = image::GrayImage::from_raw(side, side, bytes).expect("buffer sized by side");
    let mut encoded = Vec::new();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut encoded, quality);
    gray.write_with_encoder(encoder)
        .map_err(|e| Error::InvalidConfig(format!("jpeg encode failed: {e}")))?;
    let decoded = image::load(Cursor::new(encoded), image::ImageFormat::Jpeg)
        .map_err(|e| Error::InvalidConfig(format!("jpeg decode failed: {e}")))?
        .to_luma8();
    let pixels = decoded.into_raw().into_iter().map(f64::from).collect();
    Ok(NormalizedImage {
        side: img.side,
        pixels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<u8>,
    pub labeler_a: Option<LabelerOutputs>,
    pub labeler_b: Option<LabelerOutputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    labeler_a: Option<String>,
    #[serde(default)]
    labeler_b: Option<String>,
}

impl CorpusManifest {
    /// Reads a `path,label,labeler_a,labeler_b` CSV. Relative image paths are
    /// resolved against the manifest's directory. Labeler fields hold
    /// `;`-separated condition names, or `No Finding`.
    pub fn read(path: &Path) -> Result<Self> {
        let corpus_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(path, e.to_string()))?
            .clone();
        if !headers.iter().any(|h| h == "path") {
            return Err(Error::parse(path, "manifest header lacks a `path` column"));
        }
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for row in reader.deserialize::<ManifestRow>() {
            let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
            let line = entries.len() + 2;
            let label = match row.label.as_deref().filter(|s| !s.is_empty()) {
                None => None,
                Some("0") => Some(0),
                Some("1") => Some(1),
                Some(other) => {
                    return Err(Error::parse(
                        path,
                        format!("line {line}: label must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            let image_path = {
                let p = PathBuf::from(&row.path);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            if !seen.insert(image_path.clone()) {
                return Err(Error::parse(
                    path,
                    format!("line {line}: duplicate path {}", row.path),
                ));
            }
            entries.push(ManifestEntry {
                path: image_path,
                label,
                labeler_a: row
                    .labeler_a
                    .as_deref()
                    .and_then(LabelerOutputs::parse_field),
                labeler_b: row
                    .labeler_b
                    .as_deref()
                    .and_then(LabelerOutputs::parse_field),
            });
        }
        Ok(Self { corpus_id, entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub path: PathBuf,
    pub label: Option<u8>,
    pub image: NormalizedImage,
    pub warnings: Vec<IngestWarning>,
}

pub fn load_entry(entry: &ManifestEntry, opts: &IngestOptions) -> Result<LoadedImage> {
    let raw = decode_image(&entry.path)?;
    let (image, warnings) = ingest_raw(&raw, opts)?;
    Ok(LoadedImage {
        path: entry.path.clone(),
        label: entry.label,
        image,
        warnings,
    })
}

/// Loads every manifest entry in order, failing on the first unreadable image.
pub fn load_corpus(manifest: &CorpusManifest, opts: &IngestOptions) -> Result<Vec<LoadedImage>> {
    manifest
        .entries
        .iter()
        .map(|entry| load_entry(entry, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(w: usize, h: usize, px: &[u16]) -> RawImage {
        RawImage::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_levels() {
        let (out, warn) = normalize_dynamic_range(&raw(3, 1, &[10, 15, 20]));
        assert_eq!(out.data, vec![0.0, 127.0, 255.0]);
        assert!(warn.is_none());
    }

    #[test]
    fn normalize_full_range_is_identity() {
        let px: Vec<u16> = (0..=255).collect();
        let (out, _) = normalize_dynamic_range(&raw(16, 16, &px));
        let expected: Vec<f64> = px.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(out.data, expected);
    }

    #[test]
    fn normalize_constant_is_zero_with_warning() {
        let (out, warn) = normalize_dynamic_range(&raw(3, 1, &[7, 7, 7]));
        assert_eq!(out.data, vec![0.0; 3]);
        assert_eq!(warn, Some(IngestWarning::DegenerateRange));
    }

    #[test]
    fn raw_image_rejects_empty() {
        assert!(RawImage::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn resample_constant_downsample() {
        let img = FloatImage::filled(512, 512, 100.0);
        let (out, warn) = resample_image(&img, 256).unwrap();
        assert_eq!(out.side(), 256);
        assert!(warn.is_none());
        assert!(out.pixels().iter().all(|&v| (v - 100.0).abs() <= 1e-9));
    }

    #[test]
    fn resample_checkerboard_box_average() {
        let data = (0..16)
            .map(|i| if (i % 4 + i / 4) % 2 == 0 { 0.0 } else { 255.0 })
            .collect();
        let img = FloatImage::new(4, 4, data).unwrap();
        let (out, _) = resample_image(&img, 2).unwrap();
        assert_eq!(out.pixels(), &[127.5; 4]);
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let data: Vec<f64> = (0..256 * 256)
            .map(|i| ((i * 37) % 256) as f64 + 0.25)
            .collect();
        let data: Vec<f64> = data.into_iter().map(|v: f64| v.min(255.0)).collect();
        let img = FloatImage::new(256, 256, data.clone()).unwrap();
        let (out, _) = resample_image(&img, 256).unwrap();
        assert_eq!(out.pixels(), data.as_slice());
    }

    #[test]
    fn resample_upsample_warns() {
        let img = FloatImage::filled(8, 40, 33.0);
        let (out, warn) = resample_image(&img, 16).unwrap();
        assert_eq!(warn, Some(IngestWarning::Upsampled));
        assert!(out.pixels().iter().all(|&v| (v - 33.0).abs() <= 1e-9));
    }

    #[test]
    fn resample_rejects_tiny_side() {
        assert!(resample_image(&FloatImage::filled(4, 4, 1.0), 1).is_err());
    }

    #[test]
    fn rec601_weights() {
        assert_eq!(rec601(255.0, 255.0, 255.0), 255);
        assert_eq!(rec601(100.0, 0.0, 0.0), 30);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(px in proptest::collection::vec(0u16..=65535, 2..64)) {
            prop_assume!(px.iter().min() != px.iter().max());
            let n = px.len();
            let (once, _) = normalize_dynamic_range(&raw(n, 1, &px));
            let as_raw: Vec<u16> = once.data.iter().map(|&v| v as u16).collect();
            let (twice, _) = normalize_dynamic_range(&raw(n, 1, &as_raw));
            prop_assert_eq!(once.data, twice.data);
        }

        #[test]
        fn pipeline_output_is_square_and_bounded(
            w in 1usize..40, h in 1usize..40, side in 2usize..24, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<u16> = (0..w * h).map(|_| rng.random()).collect();
            let opts = IngestOptions { side, ..Default::default() };
            let (img, _) = ingest_raw(&raw(w, h, &px), &opts).unwrap();
            prop_assert_eq!(img.pixels().len(), side * side);
            prop_assert!(img.pixels().iter().all(|v| (0.0..=255.0).contains(v)));
        }

        #[test]
        fn resample_preserves_constants(
            w in 1usize..50, h in 1usize..50, side in 2usize..40, c in 0.0f64..=255.0
        ) {
            let (img, _) = resample_image(&FloatImage::filled(w, h, c), side).unwrap();
            prop_assert!(img.pixels().iter().all(|&v| (v - c).abs() <= 1e-9));
        }
    }
}
