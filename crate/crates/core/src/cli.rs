//! Experiment harness behind the `qubithd` binary.
//!
//! Each command writes line-delimited JSON records to a sink. Every record
//! carries the digest of the run manifest, so two runs with equal manifests
//! can be compared line by line. Timing fields (`wall_ms`, `created_unix`,
//! latencies) are the only non-reproducible values and can be switched off.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, load_csv_with_labels, load_feature_label_files, load_idx, split_validation,
    synthetic_clusters, CsvSchema, Dataset, Delimiter, LabelColumn, LabelMap, Provenance,
    SyntheticSpec,
};
use crate::encoder::{Codebook, CodebookParams, EncodedSet, FeatureScaler};
use crate::error::HdError;
use crate::hv::hamming_words;
use crate::model::{
    train_encoded, BinarizerMode, ConfigWarning, Feedback, Model, TrainConfig, TrainReport,
};
use crate::persist::{load_model, store_model, ModelFile};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "QUBITHD_DATA_DIR";

/// Keys dropped from every record when timing is off.
const TIMING_KEYS: &[&str] = &["wall_ms", "created_unix", "latency"];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad flags, missing inputs: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Any failure inside the library: exit code 1.
    #[error(transparent)]
    Component(#[from] HdError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Component(_) => 1,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Component(e.into())
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

/// Invalid configuration values are the caller's fault, so they map to usage errors.
fn config_error(e: HdError) -> HarnessError {
    match e {
        HdError::Config(m) => HarnessError::Usage(m),
        other => HarnessError::Component(other),
    }
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Isolet,
    Ucihar,
    Mnist,
    Csv,
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "isolet" => Ok(Self::Isolet),
            "ucihar" | "hapt" => Ok(Self::Ucihar),
            "mnist" => Ok(Self::Mnist),
            "csv" => Ok(Self::Csv),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(format!(
                "unknown dataset '{s}' (expected isolet, ucihar, mnist, csv or synthetic)"
            )),
        }
    }
}

/// Where to find a dataset and how to read it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSource {
    pub kind: DatasetKind,
    pub data_dir: PathBuf,
    /// Training file for `csv`.
    pub train_file: Option<PathBuf>,
    /// Test file for `csv`.
    pub test_file: Option<PathBuf>,
    pub label_first: bool,
    pub synthetic: SyntheticSpec,
    /// Fraction of the synthetic set held out as its test split.
    pub synthetic_test_fraction: f64,
}

impl DatasetSource {
    pub fn new(kind: DatasetKind) -> Self {
        Self {
            kind,
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data")),
            train_file: None,
            test_file: None,
            label_first: false,
            synthetic: SyntheticSpec {
                classes: 4,
                features: 16,
                per_class: 50,
                noise: 0.1,
                seed: 0,
            },
            synthetic_test_fraction: 0.3,
        }
    }

    fn schema(&self) -> CsvSchema {
        CsvSchema {
            label: if self.label_first {
                LabelColumn::First
            } else {
                LabelColumn::Last
            },
            ..CsvSchema::default()
        }
    }
}

/// A loaded benchmark: the training file and its test file.
#[derive(Debug, Clone)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

impl TrainTest {
    pub fn provenance(&self) -> Vec<Provenance> {
        let mut p = self.train.provenance().to_vec();
        for q in self.test.provenance() {
            if !p.contains(q) {
                p.push(q.clone());
            }
        }
        p
    }
}

/// First existing path among `<dir>/<sub>/<name>[.gz]`.
fn find_file(dir: &Path, subdirs: &[&str], names: &[&str]) -> Result<PathBuf> {
    for sub in subdirs {
        for name in names {
            for suffix in ["", ".gz"] {
                let p = dir.join(sub).join(format!("{name}{suffix}"));
                if p.is_file() {
                    return Ok(p);
                }
            }
        }
    }
    Err(HarnessError::Usage(format!(
        "dataset file {} not found under {} (set --data-dir or {DATA_DIR_ENV})",
        names[0],
        dir.display()
    )))
}

fn require_file(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| HarnessError::Usage(format!("--dataset csv needs {flag}")))?;
    if !p.is_file() {
        return Err(HarnessError::Usage(format!(
            "{}: no such file",
            p.display()
        )));
    }
    Ok(p)
}

/// Loads the train and test files of a dataset.
///
/// With `labels` given, both files are read against that vocabulary (used
/// when evaluating a stored model); otherwise the training file defines it.
pub fn load_source(source: &DatasetSource, labels: Option<&LabelMap>) -> Result<TrainTest> {
    let dir = &source.data_dir;
    match source.kind {
        DatasetKind::Isolet => {
            let sub = ["", "isolet"];
            let tr = find_file(dir, &sub, &["isolet1+2+3+4.data"])?;
            let te = find_file(dir, &sub, &["isolet5.data"])?;
            csv_pair(&tr, &te, &CsvSchema::default(), labels)
        }
        DatasetKind::Ucihar => {
            let sub = [
                "",
                "ucihar",
                "Train",
                "train",
                "ucihar/Train",
                "ucihar/train",
            ];
            let xtr = find_file(dir, &sub, &["X_train.txt"])?;
            let ytr = find_file(dir, &sub, &["y_train.txt"])?;
            let sub = ["", "ucihar", "Test", "test", "ucihar/Test", "ucihar/test"];
            let xte = find_file(dir, &sub, &["X_test.txt"])?;
            let yte = find_file(dir, &sub, &["y_test.txt"])?;
            let train = load_feature_label_files(&xtr, &ytr, Delimiter::Whitespace, labels)?;
            let map = train.label_map().clone();
            let test = load_feature_label_files(&xte, &yte, Delimiter::Whitespace, Some(&map))?;
            Ok(TrainTest { train, test })
        }
        DatasetKind::Mnist => {
            let sub = ["", "mnist"];
            // both the canonical dash form and the common dotted rename
            let find = |prefix: &str, kind: &str| {
                find_file(
                    dir,
                    &sub,
                    &[
                        &format!("{prefix}-{kind}-ubyte"),
                        &format!("{prefix}.{kind}-ubyte"),
                    ],
                )
            };
            let train = load_idx(find("train-images", "idx3")?, find("train-labels", "idx1")?)?;
            let test = load_idx(find("t10k-images", "idx3")?, find("t10k-labels", "idx1")?)?;
            Ok(TrainTest { train, test })
        }
        DatasetKind::Csv => {
            let tr = require_file(&source.train_file, "--train-file")?;
            let te = require_file(&source.test_file, "--test-file")?;
            csv_pair(&tr, &te, &source.schema(), labels)
        }
        DatasetKind::Synthetic => {
            let all = synthetic_clusters(&source.synthetic)?;
            let split =
                split_validation(&all, source.synthetic_test_fraction, source.synthetic.seed)?;
            Ok(TrainTest {
                train: split.train,
                test: split.validation,
            })
        }
    }
}

fn csv_pair(
    train: &Path,
    test: &Path,
    schema: &CsvSchema,
    labels: Option<&LabelMap>,
) -> Result<TrainTest> {
    let train = match labels {
        Some(map) => load_csv_with_labels(train, schema, map)?,
        None => load_csv(train, schema)?,
    };
    let map = train.label_map().clone();
    let test = load_csv_with_labels(test, schema, &map)?;
    Ok(TrainTest { train, test })
}

// ---------------------------------------------------------------------------
// Manifest and metrics

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: TrainConfig,
    pub dataset: DatasetKind,
    pub datasets: Vec<Provenance>,
    /// Codebook, split, shuffle and flip-noise streams all derive from these.
    pub seeds: Vec<u64>,
    /// Command-specific parameters (grids, variant lists).
    pub extra: Value,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &TrainConfig,
        dataset: DatasetKind,
        data: &TrainTest,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            config: config.clone(),
            dataset,
            datasets: data.provenance(),
            seeds: vec![config.seed],
            extra: Value::Null,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    /// SHA-256 of the manifest with its timestamp removed.
    pub fn digest(&self) -> [u8; 32] {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Value::Object(m) = &mut v {
            m.remove("created_unix");
        }
        Sha256::digest(serde_json::to_vec(&v).expect("value serializes")).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Ordered single-writer stream of JSON-lines records.
pub struct MetricsSink<'w> {
    out: &'w mut dyn Write,
    digest: String,
    timing: bool,
}

impl<'w> MetricsSink<'w> {
    pub fn new(out: &'w mut dyn Write, manifest: &RunManifest, timing: bool) -> Self {
        Self {
            out,
            digest: hex(&manifest.digest()),
            timing,
        }
    }

    /// Writes `body` as one line tagged with `record` and the manifest digest.
    pub fn emit<T: Serialize>(&mut self, record: &str, body: &T) -> Result<()> {
        let mut v = serde_json::to_value(body).map_err(HdError::from)?;
        if !self.timing {
            strip_timing(&mut v);
        }
        let mut line = Map::new();
        line.insert("record".into(), record.into());
        line.insert("manifest_digest".into(), self.digest.clone().into());
        match v {
            Value::Object(m) => line.extend(m),
            other => {
                line.insert("value".into(), other);
            }
        }
        serde_json::to_writer(&mut *self.out, &line).map_err(HdError::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for k in TIMING_KEYS {
                m.remove(*k);
            }
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Shared training routine

/// A dataset split, scaled and encoded under one codebook.
pub struct Prepared {
    pub codebook: Codebook,
    pub train: EncodedSet,
    pub validation: EncodedSet,
    pub test: EncodedSet,
    pub classes: usize,
    pub split_warnings: usize,
}

/// Splits off validation with `config.seed`, fits the scaler on the training
/// partition only, and encodes all three partitions.
pub fn prepare(config: &TrainConfig, data: &TrainTest) -> Result<Prepared> {
    let split = split_validation(&data.train, config.validation_fraction, config.seed)
        .map_err(config_error)?;
    let scaler = FeatureScaler::fit(split.train.points())?;
    let codebook = Codebook::new(
        CodebookParams {
            dim: config.dim,
            levels: config.levels,
            seed: config.seed,
        },
        scaler,
    )?;
    if data.test.features() != data.train.features() {
        return Err(HdError::FeatureCount {
            expected: data.train.features(),
            got: data.test.features(),
        }
        .into());
    }
    let train = codebook.encode_batch(split.train.points(), split.train.labels())?;
    let validation = codebook.encode_batch(split.validation.points(), split.validation.labels())?;
    let test = codebook.encode_batch(data.test.points(), data.test.labels())?;
    Ok(Prepared {
        codebook,
        train,
        validation,
        test,
        classes: data.train.classes(),
        split_warnings: split.warnings.len(),
    })
}

/// Final record of a training run; also the body of each sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub dim: usize,
    pub levels: usize,
    pub alpha: f64,
    pub update_weight: i32,
    pub beta: f64,
    pub mode: BinarizerMode,
    pub feedback: Feedback,
    pub classes: usize,
    pub train_points: usize,
    pub validation_points: usize,
    pub test_points: usize,
    pub epochs_run: usize,
    pub initial_validation_accuracy: f64,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub best_test_accuracy_binary: f64,
    pub best_test_accuracy_cosine: Option<f64>,
    pub last_validation_accuracy: f64,
    pub last_test_accuracy_binary: f64,
    pub last_test_accuracy_cosine: Option<f64>,
    pub warnings: Vec<ConfigWarning>,
    pub sign_fallback_rows: Vec<usize>,
    pub clamped_test_values: usize,
    pub wall_ms: f64,
}

fn cosine_or_none(model: &Model, set: &EncodedSet) -> Option<f64> {
    model.accuracy_cosine(set).ok()
}

/// Trains on a prepared dataset and scores best and last models on the test split.
pub fn run_training(config: &TrainConfig, prep: &Prepared) -> Result<(TrainReport, TrainSummary)> {
    let start = Instant::now();
    let report =
        train_encoded(config, &prep.train, &prep.validation, prep.classes).map_err(config_error)?;
    let summary = TrainSummary {
        dim: config.dim,
        levels: config.levels,
        alpha: config.alpha,
        update_weight: config.update_weight(),
        beta: config.beta,
        mode: config.mode,
        feedback: config.feedback,
        classes: prep.classes,
        train_points: prep.train.len(),
        validation_points: prep.validation.len(),
        test_points: prep.test.len(),
        epochs_run: report.history.len(),
        initial_validation_accuracy: report.initial_validation_accuracy,
        best_epoch: report.best_epoch,
        best_validation_accuracy: report.best_validation_accuracy,
        best_test_accuracy_binary: report.best.accuracy_binary(&prep.test),
        best_test_accuracy_cosine: cosine_or_none(&report.best, &prep.test),
        last_validation_accuracy: report.last_validation_accuracy,
        last_test_accuracy_binary: report.last.accuracy_binary(&prep.test),
        last_test_accuracy_cosine: cosine_or_none(&report.last, &prep.test),
        warnings: report.warnings.clone(),
        sign_fallback_rows: report.sign_fallback_rows.clone(),
        clamped_test_values: prep.test.clamped_values(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, summary))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub source: DatasetSource,
    pub config: TrainConfig,
    /// Where the model is stored; `None` skips persistence.
    pub model_path: Option<PathBuf>,
    pub timing: bool,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainSummary> {
    args.config.validate().map_err(config_error)?;
    let data = load_source(&args.source, None)?;
    let manifest = RunManifest::new("train", &args.config, args.source.kind, &data);
    let mut sink = MetricsSink::new(out, &manifest, args.timing);
    sink.emit("manifest", &manifest)?;
    let prep = prepare(&args.config, &data)?;
    let (report, summary) = run_training(&args.config, &prep)?;
    for stats in &report.history {
        sink.emit("epoch", stats)?;
    }
    if let Some(path) = &args.model_path {
        let file = ModelFile {
            codebook: prep.codebook.params().clone(),
            scaler: prep.codebook.scaler().clone(),
            labels: data.train.label_map().clone(),
            train_seed: args.config.seed,
            alpha: args.config.alpha,
            model: report.best.clone(),
            manifest_digest: manifest.digest(),
        };
        store_model(path, &file)?;
    }
    sink.emit("train-summary", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub model_path: PathBuf,
    pub source: DatasetSource,
    pub split: EvalSplit,
    /// Queries timed per path, cycling through the set when it is smaller.
    pub latency_queries: usize,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            min: v[0],
            p10: at(0.1),
            p25: at(0.25),
            median: at(0.5),
            p75: at(0.75),
            p90: at(0.9),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Latency {
    pub queries: usize,
    pub binary_median_ns: f64,
    pub cosine_median_ns: Option<f64>,
    /// Cosine median over binary median.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: EvalSplit,
    pub points: usize,
    pub classes: usize,
    pub accuracy_binary: f64,
    pub accuracy_cosine: Option<f64>,
    /// `confusion[true][predicted]` for the binary path.
    pub confusion_binary: Vec<Vec<usize>>,
    /// Top-1 minus top-2 similarity, `1 - 2 * hamming / D` scale.
    pub margin_binary: Option<Quantiles>,
    /// Top-1 minus top-2 cosine similarity.
    pub margin_cosine: Option<Quantiles>,
    pub latency: Latency,
}

/// Top-1 minus top-2 of `scores`; zero with fewer than two classes.
fn margin(scores: &[f64]) -> f64 {
    let mut top = [f64::NEG_INFINITY; 2];
    for &s in scores {
        if s > top[0] {
            top = [s, top[0]];
        } else if s > top[1] {
            top[1] = s;
        }
    }
    if top[1].is_finite() {
        top[0] - top[1]
    } else {
        0.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

const WARMUP_QUERIES: usize = 100;

/// Median per-query time of `f` over `queries` calls after a warmup.
pub fn median_latency_ns<F: FnMut(usize) -> usize>(n: usize, queries: usize, mut f: F) -> f64 {
    let mut sink = 0usize;
    for i in 0..WARMUP_QUERIES {
        sink = sink.wrapping_add(f(i % n));
    }
    let mut times = Vec::with_capacity(queries);
    for i in 0..queries {
        let t = Instant::now();
        sink = sink.wrapping_add(f(i % n));
        times.push(t.elapsed().as_nanos() as f64);
    }
    std::hint::black_box(sink);
    median(&mut times)
}

/// Evaluates a model on an encoded set: accuracy, confusion, margins, latency.
pub fn evaluate(
    model: &Model,
    set: &EncodedSet,
    split: EvalSplit,
    latency_queries: usize,
) -> Result<EvalSummary> {
    use rayon::prelude::*;
    if set.is_empty() {
        return Err(HdError::Empty("evaluation set").into());
    }
    let dim = model.dim() as f64;
    let classes = model.classes();
    let binary: Vec<(usize, f64)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let q = set.query_words(i);
            let scores: Vec<f64> = model
                .snapshot()
                .iter()
                .map(|row| 1.0 - 2.0 * hamming_words(q, row.words()) as f64 / dim)
                .collect();
            (model.classify_packed(q).0, margin(&scores))
        })
        .collect();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (i, (pred, _)) in binary.iter().enumerate() {
        let truth = set.label(i);
        confusion[truth][*pred] += 1;
        correct += (truth == *pred) as usize;
    }
    let margins: Vec<f64> = binary.iter().map(|b| b.1).collect();

    let norms = model.row_norms().ok();
    let cosine: Option<Vec<(usize, f64)>> = norms.as_ref().map(|norms| {
        (0..set.len())
            .into_par_iter()
            .map(|i| {
                let p = set.get(i);
                let pn = p.norm().max(f64::MIN_POSITIVE);
                let scores: Vec<f64> = model
                    .rows()
                    .iter()
                    .zip(norms)
                    .map(|(row, n)| p.dot(row.values()) as f64 / (n * pn))
                    .collect();
                (model.classify_cosine(p, norms), margin(&scores))
            })
            .collect()
    });
    let accuracy_cosine = cosine.as_ref().map(|c| {
        c.iter()
            .enumerate()
            .filter(|(i, (pred, _))| *pred == set.label(*i))
            .count() as f64
            / set.len() as f64
    });
    let margin_cosine = cosine
        .as_ref()
        .and_then(|c| Quantiles::of(&c.iter().map(|x| x.1).collect::<Vec<_>>()));

    let queries = latency_queries.max(1);
    let binary_ns = median_latency_ns(set.len(), queries, |i| {
        model.classify_packed(set.query_words(i)).0
    });
    let cosine_ns = norms.as_ref().map(|norms| {
        median_latency_ns(set.len(), queries, |i| {
            model.classify_cosine(set.get(i), norms)
        })
    });
    Ok(EvalSummary {
        split,
        points: set.len(),
        classes,
        accuracy_binary: correct as f64 / set.len() as f64,
        accuracy_cosine,
        confusion_binary: confusion,
        margin_binary: Quantiles::of(&margins),
        margin_cosine,
        latency: Latency {
            queries,
            binary_median_ns: binary_ns,
            cosine_median_ns: cosine_ns,
            speedup: cosine_ns.map(|c| c / binary_ns.max(1.0)),
        },
    })
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalSummary> {
    if !args.model_path.is_file() {
        return Err(HarnessError::Usage(format!(
            "{}: no such model file",
            args.model_path.display()
        )));
    }
    let file = load_model(&args.model_path)?;
    let mut source = args.source.clone();
    // synthetic data is regenerated from the seed the model was trained with
    source.synthetic.seed = file.train_seed;
    let data = load_source(&source, Some(&file.labels))?;
    let codebook = file.codebook()?;
    let ds = match args.split {
        EvalSplit::Train => &data.train,
        EvalSplit::Test => &data.test,
    };
    if ds.features() != codebook.features() {
        return Err(HdError::FeatureCount {
            expected: codebook.features(),
            got: ds.features(),
        }
        .into());
    }
    let set = codebook.encode_batch(ds.points(), ds.labels())?;
    let config = TrainConfig {
        dim: file.codebook.dim,
        levels: file.codebook.levels,
        alpha: file.alpha,
        beta: file.model.beta(),
        mode: file.model.mode(),
        seed: file.train_seed,
        ..TrainConfig::default()
    };
    let mut manifest = RunManifest::new("eval", &config, args.source.kind, &data);
    manifest.extra = json!({
        "model_path": args.model_path,
        "model_manifest_digest": hex(&file.manifest_digest),
        "split": args.split,
    });
    let mut sink = MetricsSink::new(out, &manifest, args.timing);
    sink.emit("manifest", &manifest)?;
    let summary = evaluate(&file.model, &set, args.split, args.latency_queries)?;
    sink.emit("eval-summary", &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Non-binarized model with cosine feedback.
    Baseline,
    /// Binarized feedback through the sign binarizer.
    Deterministic,
    /// Binarized feedback through the stochastic binarizer.
    Stochastic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::Baseline,
        Variant::Deterministic,
        Variant::Stochastic,
    ];

    fn configure(self, base: &TrainConfig) -> TrainConfig {
        let (mode, feedback) = match self {
            Variant::Baseline => (BinarizerMode::Deterministic, Feedback::NonBinarized),
            Variant::Deterministic => (BinarizerMode::Deterministic, Feedback::Binarized),
            Variant::Stochastic => (BinarizerMode::Stochastic, Feedback::Binarized),
        };
        TrainConfig {
            mode,
            feedback,
            // early stopping would truncate the convergence curves
            patience: base.max_epochs.max(1),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub source: DatasetSource,
    pub config: TrainConfig,
    /// Seeds run: `config.seed`, `config.seed + 1`, ...
    pub seeds: usize,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEpoch {
    pub variant: Variant,
    pub seed: u64,
    pub epoch: usize,
    pub validation_accuracy: f64,
    pub train_errors: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSeed {
    pub seed: u64,
    /// Highest validation accuracy over epochs 0..=E (epoch 0 is one-shot).
    pub peak_validation_accuracy: f64,
    /// First epoch whose accuracy is within 0.01 (absolute) of the peak.
    pub epochs_to_within_1pct: usize,
    pub best_epoch: usize,
    /// Test accuracy of the best model on the path the variant trains for.
    pub best_test_accuracy: f64,
    pub best_test_accuracy_binary: f64,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub per_seed: Vec<VariantSeed>,
    pub median_peak_validation_accuracy: f64,
    pub median_epochs_to_within_1pct: f64,
    pub median_best_test_accuracy: f64,
    pub median_best_test_accuracy_binary: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub variants: Vec<VariantSummary>,
    /// `100 * (det - stoch) / det` of the median epochs-to-within-1%.
    pub convergence_reduction_pct: Option<f64>,
    /// Test accuracy of the deterministic binarization of the one-shot model.
    pub one_shot_binary_test_accuracy: Vec<f64>,
    pub median_one_shot_binary_test_accuracy: f64,
}

impl CompareSummary {
    pub fn variant(&self, v: Variant) -> &VariantSummary {
        self.variants
            .iter()
            .find(|s| s.variant == v)
            .expect("all variants are run")
    }
}

/// First index whose value is within `tol` of the maximum.
pub fn epochs_to_within(curve: &[f64], tol: f64) -> usize {
    let peak = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    curve.iter().position(|&a| a >= peak - tol).unwrap_or(0)
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<CompareSummary> {
    if args.seeds == 0 {
        return Err(HarnessError::Usage("--seeds must be at least 1".into()));
    }
    for v in Variant::ALL {
        v.configure(&args.config).validate().map_err(config_error)?;
    }
    let data = load_source(&args.source, None)?;
    let seeds: Vec<u64> = (0..args.seeds as u64)
        .map(|i| args.config.seed + i)
        .collect();
    let mut manifest = RunManifest::new("compare", &args.config, args.source.kind, &data);
    manifest.seeds = seeds.clone();
    manifest.extra = json!({ "variants": Variant::ALL });
    let mut sink = MetricsSink::new(out, &manifest, args.timing);
    sink.emit("manifest", &manifest)?;

    let mut per_variant: Vec<Vec<VariantSeed>> = vec![Vec::new(); Variant::ALL.len()];
    let mut one_shot = Vec::new();
    for &seed in &seeds {
        let base = TrainConfig {
            seed,
            ..args.config.clone()
        };
        // one encoding per seed, shared by the three variants
        let prep = prepare(&base, &data)?;
        for (vi, v) in Variant::ALL.into_iter().enumerate() {
            let config = v.configure(&base);
            let (report, _) = run_training(&config, &prep)?;
            for s in &report.history {
                sink.emit(
                    "compare-epoch",
                    &CompareEpoch {
                        variant: v,
                        seed,
                        epoch: s.epoch,
                        validation_accuracy: s.validation_accuracy.unwrap_or(0.0),
                        train_errors: s.train_errors,
                        wall_ms: s.wall_ms,
                    },
                )?;
            }
            let mut curve = vec![report.initial_validation_accuracy];
            curve.extend(report.history.iter().filter_map(|s| s.validation_accuracy));
            let binary = report.best.accuracy_binary(&prep.test);
            let on_path = match config.feedback {
                Feedback::Binarized => binary,
                Feedback::NonBinarized => report.best.accuracy_cosine(&prep.test)?,
            };
            per_variant[vi].push(VariantSeed {
                seed,
                peak_validation_accuracy: curve.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                epochs_to_within_1pct: epochs_to_within(&curve, 0.01),
                best_epoch: report.best_epoch,
                best_test_accuracy: on_path,
                best_test_accuracy_binary: binary,
                curve,
            });
        }
        one_shot.push(one_shot_binary_accuracy(&prep, &base)?);
    }
    let variants: Vec<VariantSummary> = Variant::ALL
        .into_iter()
        .zip(per_variant)
        .map(|(variant, per_seed)| {
            let med = |f: fn(&VariantSeed) -> f64| {
                median(&mut per_seed.iter().map(f).collect::<Vec<_>>())
            };
            VariantSummary {
                variant,
                median_peak_validation_accuracy: med(|s| s.peak_validation_accuracy),
                median_epochs_to_within_1pct: med(|s| s.epochs_to_within_1pct as f64),
                median_best_test_accuracy: med(|s| s.best_test_accuracy),
                median_best_test_accuracy_binary: med(|s| s.best_test_accuracy_binary),
                per_seed,
            }
        })
        .collect();
    let det = variants[1].median_epochs_to_within_1pct;
    let sto = variants[2].median_epochs_to_within_1pct;
    let summary = CompareSummary {
        seeds,
        epochs: args.config.max_epochs,
        convergence_reduction_pct: (det > 0.0).then(|| 100.0 * (det - sto) / det),
        median_one_shot_binary_test_accuracy: median(&mut one_shot.clone()),
        one_shot_binary_test_accuracy: one_shot,
        variants,
    };
    sink.emit("compare-summary", &summary)?;
    Ok(summary)
}

/// One-shot model, sign-binarized, scored on the test split.
fn one_shot_binary_accuracy(prep: &Prepared, config: &TrainConfig) -> Result<f64> {
    let mut rng = crate::rng::RngStream::new(config.seed, crate::rng::StreamLabel::FlipNoise);
    let (model, _) = Model::initial_train(
        &prep.train,
        prep.classes,
        BinarizerMode::Deterministic,
        config.beta,
        &mut rng,
    )?;
    Ok(model.accuracy_binary(&prep.test))
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub source: DatasetSource,
    /// Everything not swept; its seed is used at every grid point.
    pub config: TrainConfig,
    pub betas: Vec<f64>,
    pub levels: Vec<usize>,
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub levels: usize,
    pub dim: usize,
    pub alpha: f64,
    /// Set when `beta >= 1`, where the stochastic band covers most of each row.
    pub cutoff_not_below_sigma: bool,
    pub summary: TrainSummary,
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<Vec<SweepPoint>> {
    let grids = [
        ("--beta", args.betas.is_empty()),
        ("--levels", args.levels.is_empty()),
        ("--dim", args.dims.is_empty()),
        ("--alpha", args.alphas.is_empty()),
    ];
    if let Some((flag, _)) = grids.iter().find(|g| g.1) {
        return Err(HarnessError::Usage(format!("empty grid for {flag}")));
    }
    let mut configs = Vec::new();
    for &dim in &args.dims {
        for &levels in &args.levels {
            for &beta in &args.betas {
                for &alpha in &args.alphas {
                    let c = TrainConfig {
                        dim,
                        levels,
                        beta,
                        alpha,
                        ..args.config.clone()
                    };
                    c.validate().map_err(config_error)?;
                    configs.push(c);
                }
            }
        }
    }
    let data = load_source(&args.source, None)?;
    let mut manifest = RunManifest::new("sweep", &args.config, args.source.kind, &data);
    manifest.extra = json!({
        "beta": args.betas,
        "levels": args.levels,
        "dim": args.dims,
        "alpha": args.alphas,
    });
    let mut sink = MetricsSink::new(out, &manifest, args.timing);
    sink.emit("manifest", &manifest)?;
    let mut points = Vec::with_capacity(configs.len());
    let mut prep: Option<Prepared> = None;
    for c in configs {
        let stale = prep
            .as_ref()
            .is_none_or(|p| p.codebook.dim() != c.dim || p.codebook.params().levels != c.levels);
        if stale {
            // free the old encodings before building the next ones
            drop(prep.take());
            prep = Some(prepare(&c, &data)?);
        }
        let p = prep.as_ref().expect("prepared above");
        let (_, summary) = run_training(&c, p)?;
        let point = SweepPoint {
            beta: c.beta,
            levels: c.levels,
            dim: c.dim,
            alpha: c.alpha,
            cutoff_not_below_sigma: summary
                .warnings
                .contains(&ConfigWarning::CutoffNotBelowSigma),
            summary,
        };
        sink.emit("sweep-point", &point)?;
        points.push(point);
    }
    Ok(points)
}
