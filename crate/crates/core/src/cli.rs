//! Command-line front end.
//!
//! Every artifact carries the resolved run configuration: JSON files hold it
//! under `"run"`, CSV files start with a `# {json}` comment line, and the
//! feature matrix gets a `<out>.json` sidecar. The worker count is never
//! recorded, so outputs are byte-identical across `--threads` settings.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{load_entry, CorpusManifest, IngestOptions, DEFAULT_SIDE};
use crate::embedding::{
    estimate_density, fit_embedding_pooled, overlap_report, project, select_ood, EmbeddingModel,
    OodCriterion, OodSelection, Point, Rect, ScoreScaling, DEFAULT_BINS,
};
use crate::error::{Error, Result};
use crate::eval::{
    adaptation_report, metrics_report, metrics_with_abstention, prediction_shift_histogram,
    read_labeler_flags, read_predictions, read_scores, relabel, write_metrics_table,
    EmbeddingConfig, MetricsReport, PredictionRecord, DEFAULT_CONDITIONS, DEFAULT_THRESHOLD,
};
use crate::matrix::{format_f64, FeatureMatrix};
use crate::mmd::{btest, statistic_distributions, Gamma, KernelConfig};
use crate::scattering::{Boundary, FilterBank, Scatterer, ScatteringConfig};

/// Exit status when the two-sample test retains H0, or a command succeeds.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
/// Exit status when the two-sample test rejects H0.
pub const EXIT_REJECT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "shiftscan",
    version,
    about = "Detect and characterize distribution shift between image corpora"
)]
pub struct Cli {
    /// Master seed; every random stage derives a named substream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores). Does not affect outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Emit log records as JSON lines on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute scattering features for every image in a manifest.
    Features(FeaturesArgs),
    /// Block-MMD two-sample test between two feature files.
    ShiftTest(ShiftTestArgs),
    /// Fit the 2D embedding, bin both corpora and report their overlap.
    Embed(EmbedArgs),
    /// Select out-of-distribution samples of the first corpus.
    Ood(OodArgs),
    /// Classification metrics, abstention and prediction-shift histograms.
    Eval(EvalArgs),
    /// Compare source and adapted corpora against a target.
    AdaptReport(AdaptArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Features(_) => "features",
            Command::ShiftTest(_) => "shift-test",
            Command::Embed(_) => "embed",
            Command::Ood(_) => "ood",
            Command::Eval(_) => "eval",
            Command::AdaptReport(_) => "adapt-report",
        }
    }

    fn args_json(&self) -> Result<Value> {
        Ok(match self {
            Command::Features(a) => serde_json::to_value(a)?,
            Command::ShiftTest(a) => serde_json::to_value(a)?,
            Command::Embed(a) => serde_json::to_value(a)?,
            Command::Ood(a) => serde_json::to_value(a)?,
            Command::Eval(a) => serde_json::to_value(a)?,
            Command::AdaptReport(a) => serde_json::to_value(a)?,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeaturesArgs {
    /// CSV manifest with a `path` column.
    pub manifest: PathBuf,
    /// Output matrix; `.bin` selects the binary format, anything else CSV.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Number of scales J.
    #[arg(short = 'J', long = "scales", default_value_t = 4)]
    pub scales: usize,
    /// Number of orientations L.
    #[arg(short = 'L', long = "orientations", default_value_t = 8)]
    pub orientations: usize,
    #[arg(long, default_value_t = 2)]
    pub max_order: usize,
    /// Side length images are resampled to.
    #[arg(long, default_value_t = DEFAULT_SIDE)]
    pub side: usize,
    /// Mirror-pad instead of treating images as periodic.
    #[arg(long)]
    pub reflect: bool,
    /// Round resampled images to 8-bit levels.
    #[arg(long)]
    pub quantize8: bool,
    /// Round-trip resampled images through JPEG at quality 95.
    #[arg(long)]
    pub jpeg95: bool,
    /// Drop unreadable images with a warning instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelArgs {
    /// RBF scale, or `auto` for the median heuristic.
    #[arg(long, default_value = "1")]
    #[serde(serialize_with = "serialize_gamma")]
    pub gamma: Gamma,
    /// Use raw features instead of pooled z-scores.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Block size B (default round(sqrt(n))).
    #[arg(long)]
    pub block_size: Option<usize>,
}

fn serialize_gamma<S: serde::Serializer>(g: &Gamma, s: S) -> std::result::Result<S::Ok, S::Error> {
    g.serialize(s)
}

impl KernelArgs {
    fn config(&self) -> Result<KernelConfig> {
        let cfg = KernelConfig {
            gamma: self.gamma,
            standardize: !self.no_standardize,
        };
        cfg.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(b) = self.block_size {
            if b < 2 {
                return Err(Error::InvalidConfig(format!(
                    "block size must be >= 2, got {b}"
                )));
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShiftTestArgs {
    pub features_a: PathBuf,
    pub features_b: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    /// Draws per hypothesis for the statistic distributions.
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Density range `x0 x1 y0 y1`.
    #[arg(long, num_args = 4, allow_negative_numbers = true, value_names = ["X0", "X1", "Y0", "Y1"], default_values_t = [-4.0, 4.0, -4.0, 4.0])]
    pub range: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Keep raw PCA scores instead of scaling each axis to unit variance.
    #[arg(long)]
    pub raw_scores: bool,
}

impl GridArgs {
    fn config(&self) -> Result<EmbeddingConfig> {
        let range = Rect::new(self.range[0], self.range[1], self.range[2], self.range[3]);
        if !(range.x0 < range.x1 && range.y0 < range.y1) {
            return Err(Error::InvalidConfig(format!(
                "degenerate range {:?}",
                self.range
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidConfig("bins must be >= 1".into()));
        }
        Ok(EmbeddingConfig {
            range,
            bins: self.bins,
            scaling: if self.raw_scores {
                ScoreScaling::Raw
            } else {
                ScoreScaling::Unit
            },
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OodFlags {
    /// Select first-corpus samples inside the closed rectangle `x0 x1 y0 y1`.
    #[arg(long, num_args = 4, allow_negative_numbers = true, value_names = ["X0", "X1", "Y0", "Y1"], conflicts_with = "ood_nonoverlap")]
    pub ood_rect: Option<Vec<f64>>,
    /// Select first-corpus samples in cells where the second corpus has at most `--tau` samples.
    #[arg(long)]
    pub ood_nonoverlap: bool,
    #[arg(long, default_value_t = 0, requires = "ood_nonoverlap")]
    pub tau: u64,
}

impl OodFlags {
    fn criterion(&self) -> Result<Option<OodCriterion>> {
        if let Some(r) = &self.ood_rect {
            let rect = Rect::new(r[0], r[1], r[2], r[3]);
            if !(rect.x0 <= rect.x1 && rect.y0 <= rect.y1) {
                return Err(Error::InvalidConfig(format!("malformed rectangle {r:?}")));
            }
            return Ok(Some(OodCriterion::Rectangle(rect)));
        }
        Ok(self
            .ood_nonoverlap
            .then_some(OodCriterion::NonOverlap { tau: self.tau }))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    pub features_a: PathBuf,
    pub features_b: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub ood: OodFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OodArgs {
    pub features_a: PathBuf,
    pub features_b: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Reuse a model written by `embed` instead of fitting a new one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub ood: OodFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction CSVs (`id,score,label`), one cohort each.
    #[arg(required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also report each cohort restricted to its most confident fraction.
    #[arg(long)]
    pub keep: Option<f64>,
    /// Labeler A flags; with `--labeler-b`, replaces the label column by the merged verdict.
    #[arg(long, requires = "labeler_b")]
    pub labeler_a: Option<PathBuf>,
    #[arg(long, requires = "labeler_a")]
    pub labeler_b: Option<PathBuf>,
    /// Conditions counted as positive findings.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CONDITIONS.map(String::from))]
    pub conditions: Vec<String>,
    /// Histogram the first cohort's scores minus these scores, matched by id.
    #[arg(long)]
    pub shift_vs: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub bin_width: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdaptArgs {
    pub source: PathBuf,
    pub adapted: PathBuf,
    pub target: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
}

/// The resolved configuration recorded in every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub args: Value,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        Ok(Self {
            tool: "shiftscan",
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name(),
            seed: cli.seed,
            args: cli.command.args_json()?,
        })
    }

    fn comment(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}

fn write_json(path: &Path, run: &RunConfig, key: &str, body: impl Serialize) -> Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("run".into(), serde_json::to_value(run)?);
    doc.insert(key.into(), serde_json::to_value(body)?);
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn corpus_names(a: &Path, b: &Path) -> (String, String) {
    let stem = |p: &Path| {
        p.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    };
    let (sa, sb) = (stem(a), stem(b));
    if sa.is_empty() || sb.is_empty() || sa == sb {
        ("a".into(), "b".into())
    } else {
        (sa, sb)
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    init_logging(cli.json_logs);
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            EXIT_ERROR
        }
    }
}

fn init_logging(json: bool) {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        builder.format(|buf, record| {
            let line = json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    // a second init (in-process tests) keeps the first logger
    let _ = builder.try_init();
}

/// Runs a parsed command on a pool sized by `--threads`.
pub fn run(cli: &Cli) -> Result<i32> {
    let run = RunConfig::from_cli(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidConfig("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Features(a) => cmd_features(a, &run),
        Command::ShiftTest(a) => cmd_shift_test(a, cli.seed, &run),
        Command::Embed(a) => cmd_embed(a, &run),
        Command::Ood(a) => cmd_ood(a, &run),
        Command::Eval(a) => cmd_eval(a, &run),
        Command::AdaptReport(a) => cmd_adapt_report(a, cli.seed, &run),
    })
}

#[derive(Serialize)]
struct RowMeta {
    path: String,
    label: Option<u8>,
    warnings: Vec<&'static str>,
}

#[derive(Serialize)]
struct Skipped {
    path: String,
    error: String,
}

pub fn cmd_features(a: &FeaturesArgs, run: &RunConfig) -> Result<i32> {
    let manifest = CorpusManifest::read(&a.manifest)?;
    let boundary = if a.reflect {
        Boundary::Reflect
    } else {
        Boundary::Periodic
    };
    let config = ScatteringConfig::new(a.scales, a.orientations, a.max_order, a.side)?
        .with_boundary(boundary);
    let bank = FilterBank::new(config)?;
    let opts = IngestOptions {
        side: a.side,
        quantize8: a.quantize8,
        jpeg95: a.jpeg95,
    };
    log::info!(
        "computing {} features for {} images",
        config.feature_count(),
        manifest.entries.len()
    );
    let results: Vec<Result<(RowMeta, Vec<f64>)>> = manifest
        .entries
        .par_iter()
        .map_init(
            || Scatterer::new(&bank),
            |s, entry| {
                let img = load_entry(entry, &opts)?;
                let features = s.transform(&img.image)?;
                let meta = RowMeta {
                    path: entry.path.display().to_string(),
                    label: entry.label,
                    warnings: img.warnings.iter().map(|w| w.code()).collect(),
                };
                Ok((meta, features.values))
            },
        )
        .collect();

    let mut rows = Vec::new();
    let mut meta = Vec::new();
    let mut skipped = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok((m, v)) => {
                for w in &m.warnings {
                    log::warn!("{}: {w}", m.path);
                }
                meta.push(m);
                rows.push(v);
            }
            Err(e) => {
                let path = entry.path.display().to_string();
                let message = match &e {
                    Error::Image { .. } | Error::Io { .. } | Error::Parse { .. } => e.to_string(),
                    _ => format!("{path}: {e}"),
                };
                if a.skip_bad {
                    log::warn!("skipping {message}");
                } else {
                    log::error!("{message}");
                }
                skipped.push(Skipped {
                    path,
                    error: e.to_string(),
                });
            }
        }
    }
    if !skipped.is_empty() && !a.skip_bad {
        return Err(Error::ImagesFailed {
            failed: skipped.len(),
            total: manifest.entries.len(),
        });
    }
    let matrix = if rows.is_empty() {
        FeatureMatrix::zeros(0, config.feature_count())
    } else {
        FeatureMatrix::from_rows(&rows)?
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    if a.out.extension().is_some_and(|e| e == "bin") {
        matrix.write_bin(&a.out)?;
    } else {
        let header: Vec<String> = bank.paths().iter().map(|p| p.to_string()).collect();
        matrix.write_csv(&a.out, &header)?;
    }
    let sidecar = PathBuf::from(format!("{}.json", a.out.display()));
    write_json(
        &sidecar,
        run,
        "features",
        json!({
            "corpus_id": manifest.corpus_id,
            "scattering": config,
            "filters": bank.params(),
            "ingest": opts,
            "feature_count": config.feature_count(),
            "rows": matrix.rows(),
            "entries": meta,
            "skipped": skipped,
        }),
    )?;
    log::info!(
        "wrote {} x {} matrix to {}",
        matrix.rows(),
        matrix.cols(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn read_pair(a: &Path, b: &Path) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let x = FeatureMatrix::read(a)?;
    let y = FeatureMatrix::read(b)?;
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            actual: y.cols(),
        });
    }
    Ok((x, y))
}

pub fn cmd_shift_test(a: &ShiftTestArgs, seed: u64, run: &RunConfig) -> Result<i32> {
    let cfg = a.kernel.config()?;
    let (x, y) = read_pair(&a.features_a, &a.features_b)?;
    let result = btest(&x, &y, &cfg, a.kernel.alpha, a.kernel.block_size, seed)?;
    let dists = statistic_distributions(&x, &y, &cfg, Some(result.block_size), a.draws, seed)?;
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("btest.json"), run, "btest", &result)?;
    dists.write_csv(&a.out_dir.join("distributions.csv"), Some(&run.comment()))?;
    log::info!(
        "statistic {} z {} p {} ({})",
        result.statistic,
        result.z,
        result.p_value,
        if result.reject { "reject" } else { "retain" }
    );
    Ok(if result.reject { EXIT_REJECT } else { EXIT_OK })
}

fn write_coords(path: &Path, names: [&str; 2], coords: [&[Point]; 2], comment: &str) -> Result<()> {
    let mut out = format!("# {comment}\ncorpus,index,x,y\n");
    for (name, pts) in names.iter().zip(coords) {
        for (i, p) in pts.iter().enumerate() {
            out.push_str(&format!(
                "{name},{i},{},{}\n",
                format_f64(p[0]),
                format_f64(p[1])
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_ood(dir: &Path, run: &RunConfig, sel: &OodSelection, source: &str) -> Result<()> {
    if sel.indices.is_empty() {
        log::warn!("no samples of {source} selected as out-of-distribution");
    }
    write_json(
        &dir.join("ood.json"),
        run,
        "ood",
        json!({ "source": source, "count": sel.indices.len(), "selection": sel }),
    )?;
    let mut out = format!("# {}\nindex\n", run.comment());
    for i in &sel.indices {
        out.push_str(&format!("{i}\n"));
    }
    let path = dir.join("ood_indices.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let body = doc.get_mut("model").map(Value::take).unwrap_or(doc);
    serde_json::from_value(body).map_err(|e| Error::parse(path, e.to_string()))
}

struct Embedded {
    names: (String, String),
    model: EmbeddingModel,
    coords: (Vec<Point>, Vec<Point>),
    grid: crate::embedding::DensityGrid,
}

fn embed_pair(a: &Path, b: &Path, grid: &GridArgs, model: Option<&Path>) -> Result<Embedded> {
    let ecfg = grid.config()?;
    let (x, y) = read_pair(a, b)?;
    let names = corpus_names(a, b);
    let model = match model {
        Some(p) => load_model(p)?,
        None => fit_embedding_pooled(&[&x, &y], &[names.0.clone(), names.1.clone()])?
            .with_score_scaling(ecfg.scaling),
    };
    let cx = project(&model, &x)?;
    let cy = project(&model, &y)?;
    let grid = estimate_density(
        &[&cx, &cy],
        &[names.0.clone(), names.1.clone()],
        ecfg.range,
        ecfg.bins,
    )?;
    Ok(Embedded {
        names,
        model,
        coords: (cx, cy),
        grid,
    })
}

pub fn cmd_embed(a: &EmbedArgs, run: &RunConfig) -> Result<i32> {
    let criterion = a.ood.criterion()?;
    let e = embed_pair(&a.features_a, &a.features_b, &a.grid, None)?;
    let overlap = overlap_report(&e.grid)?;
    ensure_dir(&a.out_dir)?;
    let comment = run.comment();
    write_json(&a.out_dir.join("model.json"), run, "model", &e.model)?;
    e.grid
        .write_csv(&a.out_dir.join("density.csv"), Some(&comment))?;
    write_json(
        &a.out_dir.join("overlap.json"),
        run,
        "overlap",
        json!({ "corpora": [e.names.0, e.names.1], "report": overlap }),
    )?;
    write_coords(
        &a.out_dir.join("coords.csv"),
        [&e.names.0, &e.names.1],
        [&e.coords.0, &e.coords.1],
        &comment,
    )?;
    if let Some(c) = criterion {
        let sel = select_ood(&e.coords.0, c, Some((&e.grid, 1)))?;
        write_ood(&a.out_dir, run, &sel, &e.names.0)?;
    }
    log::info!(
        "bhattacharyya {} non-overlap {:?}",
        overlap.bhattacharyya,
        overlap.non_overlap_mass
    );
    Ok(EXIT_OK)
}

pub fn cmd_ood(a: &OodArgs, run: &RunConfig) -> Result<i32> {
    let criterion = a
        .ood
        .criterion()?
        .ok_or_else(|| Error::InvalidConfig("ood needs --ood-rect or --ood-nonoverlap".into()))?;
    let e = embed_pair(&a.features_a, &a.features_b, &a.grid, a.model.as_deref())?;
    let sel = select_ood(&e.coords.0, criterion, Some((&e.grid, 1)))?;
    ensure_dir(&a.out_dir)?;
    write_ood(&a.out_dir, run, &sel, &e.names.0)?;
    log::info!(
        "selected {} of {} samples",
        sel.indices.len(),
        e.coords.0.len()
    );
    Ok(EXIT_OK)
}

fn cohort_name(path: &Path, taken: &mut BTreeSet<String>) -> String {
    let base = path.file_stem().map_or_else(
        || "cohort".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let mut name = base.clone();
    let mut k = 2;
    while !taken.insert(name.clone()) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

pub fn cmd_eval(a: &EvalArgs, run: &RunConfig) -> Result<i32> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::InvalidConfig(format!(
            "threshold must lie in [0, 1], got {}",
            a.threshold
        )));
    }
    if let Some(k) = a.keep {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "--keep must lie in (0, 1], got {k}"
            )));
        }
    }
    let labelers = match (&a.labeler_a, &a.labeler_b) {
        (Some(pa), Some(pb)) => Some((read_labeler_flags(pa)?, read_labeler_flags(pb)?)),
        _ => None,
    };
    let conditions: BTreeSet<String> = a.conditions.iter().map(|c| c.trim().to_string()).collect();
    if conditions.is_empty() {
        return Err(Error::InvalidConfig(
            "condition set must be nonempty".into(),
        ));
    }

    let mut taken = BTreeSet::new();
    let mut cohorts: Vec<(String, MetricsReport)> = Vec::new();
    let mut relabeled = serde_json::Map::new();
    let mut first: Option<Vec<PredictionRecord>> = None;
    for path in &a.predictions {
        let name = cohort_name(path, &mut taken);
        let preds = match &labelers {
            Some((la, lb)) => {
                let (recs, summary) = relabel(&read_scores(path)?, la, lb, &conditions);
                relabeled.insert(name.clone(), serde_json::to_value(summary)?);
                recs
            }
            None => read_predictions(path)?,
        };
        cohorts.push((name.clone(), metrics_report(&preds, a.threshold)?));
        if let Some(k) = a.keep {
            cohorts.push((
                format!("{name}_keep{}", format_f64(k)),
                metrics_with_abstention(&preds, a.threshold, k)?,
            ));
        }
        first.get_or_insert(preds);
    }

    ensure_dir(&a.out_dir)?;
    let body: serde_json::Map<String, Value> = cohorts
        .iter()
        .map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    let mut doc = json!({ "cohorts": body });
    if labelers.is_some() {
        doc["relabeling"] = Value::Object(relabeled);
    }
    write_json(&a.out_dir.join("metrics.json"), run, "metrics", doc)?;
    let table: Vec<(&str, &MetricsReport)> = cohorts.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_metrics_table(&a.out_dir.join("metrics.csv"), &table, Some(&run.comment()))?;

    if let Some(other) = &a.shift_vs {
        let mine: Vec<(String, f64)> = first
            .unwrap_or_default()
            .into_iter()
            .map(|p| (p.id, p.score))
            .collect();
        let hist = prediction_shift_histogram(&mine, &read_scores(other)?, a.bin_width)?;
        hist.write_csv(&a.out_dir.join("shift_histogram.csv"), Some(&run.comment()))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_adapt_report(a: &AdaptArgs, seed: u64, run: &RunConfig) -> Result<i32> {
    let kcfg = a.kernel.config()?;
    let ecfg = a.grid.config()?;
    let src = FeatureMatrix::read(&a.source)?;
    let adapted = FeatureMatrix::read(&a.adapted)?;
    let target = FeatureMatrix::read(&a.target)?;
    let report = adaptation_report(
        &src,
        &adapted,
        &target,
        &kcfg,
        &ecfg,
        a.kernel.alpha,
        a.kernel.block_size,
        seed,
    )?;
    ensure_dir(&a.out_dir)?;
    write_json(
        &a.out_dir.join("adaptation.json"),
        run,
        "adaptation",
        &report,
    )?;

    let mut out = format!(
        "# {}\nrow,statistic,p_value,bhattacharyya,non_overlap_first,non_overlap_target\n",
        run.comment()
    );
    for r in [&report.source_vs_target, &report.adapted_vs_target] {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.pair,
            format_f64(r.btest.statistic),
            format_f64(r.btest.p_value),
            format_f64(r.bhattacharyya),
            format_f64(r.non_overlap_mass[0]),
            format_f64(r.non_overlap_mass[1])
        ));
    }
    let d = &report.delta;
    out.push_str(&format!(
        "delta,{},{},{},{},{}\n",
        format_f64(d.statistic),
        format_f64(d.p_value),
        format_f64(d.bhattacharyya),
        format_f64(d.non_overlap_mass[0]),
        format_f64(d.non_overlap_mass[1])
    ));
    let path = a.out_dir.join("adaptation.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(EXIT_OK)
}
