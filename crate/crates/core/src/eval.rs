//! Classifier evaluation under shift.
//!
//! Label merging from two automatic labelers, threshold metrics and AUC,
//! confidence-ranked abstention, prediction-shift histograms, and the
//! before/after adaptation comparison built on the embedding and B-test.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::embedding::{
    estimate_density, fit_embedding_pooled, overlap_report, project, Rect, ScoreScaling,
    DEFAULT_BINS,
};
use crate::error::{Error, Result};
use crate::matrix::{format_f64, FeatureMatrix};
use crate::mmd::{btest, BTestResult, KernelConfig};

pub const DEFAULT_CONDITIONS: [&str; 6] = [
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Pleural Effusion",
    "Pneumonia",
    "Pneumothorax",
];

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn default_conditions() -> BTreeSet<String> {
    DEFAULT_CONDITIONS.iter().map(|s| s.to_string()).collect()
}

/// Findings reported by one labeler for one image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelerOutputs {
    pub conditions: BTreeSet<String>,
    pub no_finding: bool,
}

impl LabelerOutputs {
    pub fn no_finding() -> Self {
        Self {
            conditions: BTreeSet::new(),
            no_finding: true,
        }
    }

    pub fn with_conditions<I, S>(conditions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            conditions: conditions.into_iter().map(Into::into).collect(),
            no_finding: false,
        }
    }

    /// Parses a `;`-separated list of condition names. `No Finding` (or
    /// `no_finding`) sets the no-finding flag. An empty field means the
    /// labeler produced no output.
    pub fn parse_field(s: &str) -> Option<Self> {
        let mut out = Self::default();
        let mut any = false;
        for token in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            any = true;
            if is_no_finding(token) {
                out.no_finding = true;
            } else {
                out.conditions.insert(token.to_string());
            }
        }
        any.then_some(out)
    }
}

fn is_no_finding(s: &str) -> bool {
    s.eq_ignore_ascii_case("no finding") || s.eq_ignore_ascii_case("no_finding")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergedLabel {
    Positive,
    Negative,
    Excluded,
}

impl MergedLabel {
    pub fn as_label(self) -> Option<u8> {
        match self {
            MergedLabel::Positive => Some(1),
            MergedLabel::Negative => Some(0),
            MergedLabel::Excluded => None,
        }
    }
}

/// Positive when both labelers flag a common condition from `conditions`,
/// negative when both report no finding, excluded otherwise.
pub fn merge_labels(
    a: &LabelerOutputs,
    b: &LabelerOutputs,
    conditions: &BTreeSet<String>,
) -> MergedLabel {
    let agreed = a
        .conditions
        .intersection(&b.conditions)
        .any(|c| conditions.contains(c));
    if agreed {
        MergedLabel::Positive
    } else if a.no_finding && b.no_finding {
        MergedLabel::Negative
    } else {
        MergedLabel::Excluded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Predicted probability of the positive class.
    pub score: f64,
    pub label: u8,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, score: f64, label: u8) -> Result<Self> {
        let id = id.into();
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidConfig(format!(
                "{id}: score {score} outside [0, 1]"
            )));
        }
        if label > 1 {
            return Err(Error::InvalidConfig(format!(
                "{id}: label must be 0 or 1, got {label}"
            )));
        }
        Ok(Self { id, score, label })
    }

    pub fn confidence(&self) -> f64 {
        (self.score - 0.5).abs()
    }
}

/// A rate that may be undefined because its denominator is zero.
///
/// Serializes as a number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate(pub Option<f64>);

impl Rate {
    fn ratio(num: u64, den: u64) -> Self {
        Rate((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => f.write_str(&format_f64(v)),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rate(Some(v))),
            Raw::Text(t) if t == "undefined" => Ok(Rate(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad rate {t:?}"))),
        }
    }
}

/// Confusion counts; a record is called positive when `score >= threshold`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_records(preds: &[PredictionRecord], threshold: f64) -> Self {
        preds.iter().fold(Self::default(), |mut c, p| {
            match (p.score >= threshold, p.label == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
            c
        })
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Rate,
    pub accuracy: Rate,
    pub precision: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub ppv: Rate,
    pub npv: Rate,
    /// Records evaluated (after abstention).
    pub n: usize,
    /// Records before abstention.
    pub n_total: usize,
    pub threshold: f64,
    /// Nominal fraction of predictions withheld, `1 - keep_fraction`.
    pub abstention_fraction: f64,
    pub keep_fraction: f64,
    pub confusion: Confusion,
}

impl MetricsReport {
    /// `(name, value)` pairs in table order.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("auc", self.auc.to_string()),
            ("accuracy", self.accuracy.to_string()),
            ("precision", self.precision.to_string()),
            ("sensitivity", self.sensitivity.to_string()),
            ("specificity", self.specificity.to_string()),
            ("ppv", self.ppv.to_string()),
            ("npv", self.npv.to_string()),
            ("n", self.n.to_string()),
            ("threshold", format_f64(self.threshold)),
            ("abstention_fraction", format_f64(self.abstention_fraction)),
        ]
    }
}

/// Area under the ROC curve from the Mann–Whitney rank statistic, ties
/// counted as one half. `None` unless both classes are present.
pub fn auc(preds: &[PredictionRecord]) -> Option<f64> {
    let n_pos = preds.iter().filter(|p| p.label == 1).count();
    let n_neg = preds.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].score.total_cmp(&preds[b].score));
    // twice the rank sum of positives, so midranks stay integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && preds[order[j]].score == preds[order[i]].score {
            j += 1;
        }
        // ranks i+1..=j share the midrank (i+1+j)/2
        let pos_in_tie = order[i..j].iter().filter(|&&k| preds[k].label == 1).count() as u64;
        rank_sum2 += pos_in_tie * (i + 1 + j) as u64;
        i = j;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - np * (np + 1);
    Some(u2 as f64 / (2 * np * nn) as f64)
}

fn validate_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    Ok(())
}

pub fn metrics_report(preds: &[PredictionRecord], threshold: f64) -> Result<MetricsReport> {
    validate_threshold(threshold)?;
    if preds.is_empty() {
        return Err(Error::InsufficientData(
            "metrics need at least one prediction".into(),
        ));
    }
    let c = Confusion::from_records(preds, threshold);
    let ppv = Rate::ratio(c.tp, c.tp + c.fp);
    Ok(MetricsReport {
        auc: Rate(auc(preds)),
        accuracy: Rate::ratio(c.tp + c.tn, c.total()),
        precision: ppv,
        sensitivity: Rate::ratio(c.tp, c.tp + c.fn_),
        specificity: Rate::ratio(c.tn, c.tn + c.fp),
        ppv,
        npv: Rate::ratio(c.tn, c.tn + c.fn_),
        n: preds.len(),
        n_total: preds.len(),
        threshold,
        abstention_fraction: 0.0,
        keep_fraction: 1.0,
        confusion: c,
    })
}

fn validate_keep(keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    Ok(())
}

fn by_confidence(a: &PredictionRecord, b: &PredictionRecord) -> Ordering {
    b.confidence()
        .total_cmp(&a.confidence())
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.score.total_cmp(&b.score))
        .then_with(|| a.label.cmp(&b.label))
}

/// Keeps the `ceil(keep_fraction · n)` most confident predictions, ranked by
/// `|p − 0.5|` descending with ties broken by ascending id. The result is in
/// rank order.
pub fn abstain_by_confidence(
    preds: &[PredictionRecord],
    keep_fraction: f64,
) -> Result<Vec<PredictionRecord>> {
    validate_keep(keep_fraction)?;
    let keep = (keep_fraction * preds.len() as f64).ceil() as usize;
    let mut ranked: Vec<&PredictionRecord> = preds.iter().collect();
    ranked.sort_by(|a, b| by_confidence(a, b));
    Ok(ranked.into_iter().take(keep).cloned().collect())
}

/// Metrics on the retained subset after confidence-ranked abstention.
pub fn metrics_with_abstention(
    preds: &[PredictionRecord],
    threshold: f64,
    keep_fraction: f64,
) -> Result<MetricsReport> {
    let retained = abstain_by_confidence(preds, keep_fraction)?;
    let mut report = metrics_report(&retained, threshold)?;
    report.n_total = preds.len();
    report.keep_fraction = keep_fraction;
    report.abstention_fraction = 1.0 - keep_fraction;
    Ok(report)
}

/// Writes reports side by side: one row per metric, one column per cohort.
pub fn write_metrics_table(
    path: &Path,
    cohorts: &[(&str, &MetricsReport)],
    comment: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("metric");
    for (name, _) in cohorts {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let columns: Vec<Vec<(&str, String)>> = cohorts.iter().map(|(_, r)| r.rows()).collect();
    if let Some(first) = columns.first() {
        for (i, (metric, _)) in first.iter().enumerate() {
            out.push_str(metric);
            for col in &columns {
                out.push(',');
                out.push_str(&col[i].1);
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftBin {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Histogram of per-id score differences `p_a − p_b`.
///
/// Bins are centered on multiples of the bin width: bin `k` holds
/// `[(k − ½)w, (k + ½)w)` and the bins together cover `[−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftHistogram {
    pub bin_width: f64,
    pub bins: Vec<ShiftBin>,
    pub n: usize,
}

impl ShiftHistogram {
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("center,lo,hi,count\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_f64(b.center),
                format_f64(b.lo),
                format_f64(b.hi),
                b.count
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Index of the histogram bin for difference `d`, relative to the center bin.
pub fn shift_bin_index(d: f64, bin_width: f64) -> i64 {
    (d / bin_width + 0.5).floor() as i64
}

fn score_map<'a>(scores: &'a [(String, f64)], which: &str) -> Result<HashMap<&'a str, f64>> {
    let mut map = HashMap::with_capacity(scores.len());
    for (id, s) in scores {
        if !(0.0..=1.0).contains(s) {
            return Err(Error::InvalidConfig(format!(
                "{which} set: {id}: score {s} outside [0, 1]"
            )));
        }
        if map.insert(id.as_str(), *s).is_some() {
            return Err(Error::InvalidConfig(format!(
                "{which} set: duplicate id {id}"
            )));
        }
    }
    Ok(map)
}

pub fn prediction_shift_histogram(
    a: &[(String, f64)],
    b: &[(String, f64)],
    bin_width: f64,
) -> Result<ShiftHistogram> {
    if !(bin_width > 0.0 && bin_width <= 2.0) {
        return Err(Error::InvalidConfig(format!(
            "bin width must lie in (0, 2], got {bin_width}"
        )));
    }
    let ma = score_map(a, "first")?;
    let mb = score_map(b, "second")?;
    let mut missing_in_b: Vec<String> = ma
        .keys()
        .filter(|k| !mb.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let mut missing_in_a: Vec<String> = mb
        .keys()
        .filter(|k| !ma.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing_in_a.is_empty() || !missing_in_b.is_empty() {
        missing_in_a.sort();
        missing_in_b.sort();
        return Err(Error::IdMismatch {
            missing_in_a,
            missing_in_b,
        });
    }
    let half = (1.0 / bin_width - 0.5).floor() as i64 + 1;
    let mut bins: Vec<ShiftBin> = (-half..=half)
        .map(|k| ShiftBin {
            center: k as f64 * bin_width,
            lo: (k as f64 - 0.5) * bin_width,
            hi: (k as f64 + 0.5) * bin_width,
            count: 0,
        })
        .collect();
    for (id, pa) in &ma {
        let k = shift_bin_index(pa - mb[id], bin_width).clamp(-half, half);
        bins[(k + half) as usize].count += 1;
    }
    Ok(ShiftHistogram {
        bin_width,
        bins,
        n: ma.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub range: Rect,
    pub bins: usize,
    #[serde(default)]
    pub scaling: ScoreScaling,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            range: Rect::default(),
            bins: DEFAULT_BINS,
            scaling: ScoreScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub pair: String,
    pub btest: BTestResult,
    pub bhattacharyya: f64,
    pub non_overlap_mass: [f64; 2],
    pub out_of_range: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDeltas {
    /// `adapted − source` for each quantity.
    pub statistic: f64,
    pub p_value: f64,
    pub bhattacharyya: f64,
    pub non_overlap_mass: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub source_vs_target: ComparisonRow,
    pub adapted_vs_target: ComparisonRow,
    pub delta: AdaptationDeltas,
    pub kernel: KernelConfig,
    pub embedding: EmbeddingConfig,
    pub alpha: f64,
    pub seed: u64,
}

/// Compares source and adapted corpora against the target.
///
/// One embedding is fitted on the union of all three corpora, and both
/// B-tests use the same seed, so swapping `src` and `adapted` swaps the two
/// rows exactly.
#[allow(clippy::too_many_arguments)]
pub fn adaptation_report(
    src: &FeatureMatrix,
    adapted: &FeatureMatrix,
    target: &FeatureMatrix,
    kernel: &KernelConfig,
    embedding: &EmbeddingConfig,
    alpha: f64,
    block_size: Option<usize>,
    seed: u64,
) -> Result<AdaptationReport> {
    for m in [adapted, target] {
        if m.cols() != src.cols() {
            return Err(Error::DimensionMismatch {
                expected: src.cols(),
                actual: m.cols(),
            });
        }
    }
    let ids = [
        "source".to_string(),
        "adapted".to_string(),
        "target".to_string(),
    ];
    let model =
        fit_embedding_pooled(&[src, adapted, target], &ids)?.with_score_scaling(embedding.scaling);
    let target_xy = project(&model, target)?;
    let row = |name: &str, m: &FeatureMatrix| -> Result<ComparisonRow> {
        let xy = project(&model, m)?;
        let grid = estimate_density(
            &[&xy, &target_xy],
            &[name.to_string(), "target".to_string()],
            embedding.range,
            embedding.bins,
        )?;
        let overlap = overlap_report(&grid)?;
        Ok(ComparisonRow {
            pair: format!("{name}_vs_target"),
            btest: btest(m, target, kernel, alpha, block_size, seed)?,
            bhattacharyya: overlap.bhattacharyya,
            non_overlap_mass: overlap.non_overlap_mass,
            out_of_range: overlap.out_of_range,
        })
    };
    let before = row("source", src)?;
    let after = row("adapted", adapted)?;
    let delta = AdaptationDeltas {
        statistic: after.btest.statistic - before.btest.statistic,
        p_value: after.btest.p_value - before.btest.p_value,
        bhattacharyya: after.bhattacharyya - before.bhattacharyya,
        non_overlap_mass: [
            after.non_overlap_mass[0] - before.non_overlap_mass[0],
            after.non_overlap_mass[1] - before.non_overlap_mass[1],
        ],
    };
    Ok(AdaptationReport {
        source_vs_target: before,
        adapted_vs_target: after,
        delta,
        kernel: *kernel,
        embedding: *embedding,
        alpha,
        seed,
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, format!("missing `{name}` column")))
}

fn parse_score(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: cannot parse score {field:?}")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::parse(
            path,
            format!("line {line}: score {v} outside [0, 1]"),
        ));
    }
    Ok(v)
}

/// Reads an `id,score` CSV; other columns are ignored.
pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let (ci, cs) = (
        column(path, &headers, "id")?,
        column(path, &headers, "score")?,
    );
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        out.push((
            record[ci].to_string(),
            parse_score(path, line, &record[cs])?,
        ));
    }
    Ok(out)
}

/// Reads an `id,score,label` CSV.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let ci = column(path, &headers, "id")?;
    let cs = column(path, &headers, "score")?;
    let cl = column(path, &headers, "label")?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let score = parse_score(path, line, &record[cs])?;
        let label = match &record[cl] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(
                    path,
                    format!("line {line}: label must be 0 or 1, got {other:?}"),
                ))
            }
        };
        out.push(PredictionRecord {
            id: record[ci].to_string(),
            score,
            label,
        });
    }
    Ok(out)
}

fn parse_flag(field: &str) -> Option<bool> {
    match field.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Reads a labeler CSV: an `id` column, a `no_finding` column, and one
/// boolean column per condition.
pub fn read_labeler_flags(path: &Path) -> Result<BTreeMap<String, LabelerOutputs>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let ci = column(path, &headers, "id")?;
    let cn = headers
        .iter()
        .position(is_no_finding)
        .ok_or_else(|| Error::parse(path, "missing `no_finding` column"))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut flags = LabelerOutputs::default();
        for (j, field) in record.iter().enumerate() {
            if j == ci {
                continue;
            }
            let on = parse_flag(field).ok_or_else(|| {
                Error::parse(
                    path,
                    format!("line {line}, column {}: not a boolean: {field:?}", j + 1),
                )
            })?;
            if j == cn {
                flags.no_finding = on;
            } else if on {
                flags.conditions.insert(headers[j].to_string());
            }
        }
        let id = record[ci].to_string();
        if out.insert(id.clone(), flags).is_some() {
            return Err(Error::parse(
                path,
                format!("line {line}: duplicate id {id}"),
            ));
        }
    }
    Ok(out)
}

/// Counts from relabeling predictions with merged labeler output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelSummary {
    pub positive: usize,
    pub negative: usize,
    pub excluded: usize,
    pub unlabeled: usize,
}

/// Replaces each score's label with the merged labeler verdict. Excluded ids
/// and ids missing from either labeler are dropped and counted.
pub fn relabel(
    scores: &[(String, f64)],
    a: &BTreeMap<String, LabelerOutputs>,
    b: &BTreeMap<String, LabelerOutputs>,
    conditions: &BTreeSet<String>,
) -> (Vec<PredictionRecord>, RelabelSummary) {
    let mut summary = RelabelSummary::default();
    let mut out = Vec::new();
    for (id, score) in scores {
        let (Some(fa), Some(fb)) = (a.get(id), b.get(id)) else {
            summary.unlabeled += 1;
            continue;
        };
        match merge_labels(fa, fb, conditions) {
            MergedLabel::Excluded => summary.excluded += 1,
            m => {
                let label = m.as_label().unwrap();
                if label == 1 {
                    summary.positive += 1;
                } else {
                    summary.negative += 1;
                }
                out.push(PredictionRecord {
                    id: id.clone(),
                    score: *score,
                    label,
                });
            }
        }
    }
    (out, summary)
}
