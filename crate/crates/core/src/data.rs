//! Dataset ingestion (delimited text and IDX), label vocabularies, and
//! deterministic stratified splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HdError, Result};
use crate::rng::{RngStream, StreamLabel};

/// Where a file came from and what it contained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

impl Provenance {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Dense label vocabulary: class `k` is `names[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    /// Sorts numerically when every label parses as a number, else lexically.
    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort();
        names.dedup();
        let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut paired: Vec<(f64, String)> = nums.into_iter().zip(names).collect();
            paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            names = paired.into_iter().map(|(_, n)| n).collect();
        }
        Self { names }
    }

    /// Keeps the given order; `None` if a name repeats.
    pub fn from_ordered(names: Vec<String>) -> Option<Self> {
        let mut seen = std::collections::HashSet::new();
        names
            .iter()
            .all(|n| seen.insert(n.as_str()))
            .then_some(Self { names })
    }

    pub fn digits(count: usize) -> Self {
        Self {
            names: (0..count).map(|d| d.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: usize,
    values: Vec<f32>,
    labels: Vec<usize>,
    label_map: LabelMap,
    provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn from_parts(
        name: impl Into<String>,
        features: usize,
        values: Vec<f32>,
        labels: Vec<usize>,
        label_map: LabelMap,
    ) -> Result<Self> {
        if features == 0 {
            return Err(HdError::Config("dataset needs at least one feature".into()));
        }
        if values.len() != features * labels.len() {
            return Err(HdError::Config(format!(
                "{} values do not form {} points of {} features",
                values.len(),
                labels.len(),
                features
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= label_map.len()) {
            return Err(HdError::LabelOutOfRange {
                label,
                classes: label_map.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            features,
            values,
            labels,
            label_map,
            provenance: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.values[i * self.features..(i + 1) * self.features]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.features)
    }

    /// Points at `indices`, in that order, sharing this dataset's vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.features);
        for &i in indices {
            values.extend_from_slice(self.point(i));
        }
        Self {
            name: self.name.clone(),
            features: self.features,
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_map: self.label_map.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Points per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Char(u8),
    /// Runs of spaces or tabs.
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: LabelColumn,
    pub delimiter: Delimiter,
    pub has_header: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label: LabelColumn::Last,
            delimiter: Delimiter::Char(b','),
            has_header: false,
        }
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| HdError::Format {
                path: path.to_path_buf(),
                message: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parsed rows as (line number, fields).
fn split_records(
    path: &Path,
    text: &str,
    delimiter: Delimiter,
    has_header: bool,
) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    match delimiter {
        Delimiter::Whitespace => {
            for (i, line) in text.lines().enumerate().skip(has_header as usize) {
                if line.trim().is_empty() {
                    continue;
                }
                rows.push((i + 1, line.split_whitespace().map(str::to_owned).collect()));
            }
        }
        Delimiter::Char(d) => {
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(d)
                .has_headers(has_header)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for rec in reader.records() {
                let rec = rec.map_err(|e| HdError::Parse {
                    path: path.to_path_buf(),
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                rows.push((line, rec.iter().map(str::to_owned).collect()));
            }
        }
    }
    Ok(rows)
}

fn parse_feature(path: &Path, line: usize, field: &str) -> Result<f32> {
    field.parse::<f32>().map_err(|_| HdError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric feature '{field}'"),
    })
}

/// Feature count, flattened values, and (line, label) pairs.
type Columns = (usize, Vec<f32>, Vec<(usize, String)>);

/// Splits each record into (features, label) and checks width consistency.
fn features_and_labels(
    path: &Path,
    rows: Vec<(usize, Vec<String>)>,
    label: LabelColumn,
) -> Result<Columns> {
    let width = rows
        .first()
        .map(|r| r.1.len())
        .ok_or_else(|| HdError::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        })?;
    if width < 2 {
        return Err(HdError::Parse {
            path: path.to_path_buf(),
            line: rows[0].0,
            message: "need a label column and at least one feature".into(),
        });
    }
    let features = width - 1;
    let mut values = Vec::with_capacity(rows.len() * features);
    let mut labels = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        if fields.len() != width {
            return Err(HdError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "ragged row: expected {width} fields, found {}",
                    fields.len()
                ),
            });
        }
        let (label_field, feats) = match label {
            LabelColumn::First => (&fields[0], &fields[1..]),
            LabelColumn::Last => (&fields[width - 1], &fields[..width - 1]),
        };
        for f in feats {
            values.push(parse_feature(path, line, f)?);
        }
        labels.push((line, label_field.clone()));
    }
    Ok((features, values, labels))
}

fn map_labels(path: &Path, raw: Vec<(usize, String)>, map: &LabelMap) -> Result<Vec<usize>> {
    raw.into_iter()
        .map(|(line, name)| {
            map.index_of(&name).ok_or_else(|| HdError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unknown label '{name}'"),
            })
        })
        .collect()
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a delimited file, building the label vocabulary from its contents.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let rows = split_records(path, &text, schema.delimiter, schema.has_header)?;
    let (features, values, raw) = features_and_labels(path, rows, schema.label)?;
    let map = LabelMap::from_names(raw.iter().map(|(_, n)| n.clone()));
    let labels = map_labels(path, raw, &map)?;
    let mut ds = Dataset::from_parts(dataset_name(path), features, values, labels, map)?;
    ds.provenance.push(Provenance::of(path, &bytes));
    Ok(ds)
}

/// Loads a delimited file against an existing vocabulary; unseen labels are errors.
pub fn load_csv_with_labels(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    map: &LabelMap,
) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let rows = split_records(path, &text, schema.delimiter, schema.has_header)?;
    let (features, values, raw) = features_and_labels(path, rows, schema.label)?;
    let labels = map_labels(path, raw, map)?;
    let mut ds = Dataset::from_parts(dataset_name(path), features, values, labels, map.clone())?;
    ds.provenance.push(Provenance::of(path, &bytes));
    Ok(ds)
}

/// Loads a features-only file plus a one-label-per-line file.
///
/// With `map = None` the vocabulary is built from the labels file.
pub fn load_feature_label_files(
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    delimiter: Delimiter,
    map: Option<&LabelMap>,
) -> Result<Dataset> {
    let fpath = features_path.as_ref();
    let lpath = labels_path.as_ref();
    let fbytes = read_maybe_gz(fpath)?;
    let lbytes = read_maybe_gz(lpath)?;
    let rows = split_records(fpath, &String::from_utf8_lossy(&fbytes), delimiter, false)?;
    let width = rows
        .first()
        .map(|r| r.1.len())
        .ok_or_else(|| HdError::Format {
            path: fpath.to_path_buf(),
            message: "no data rows".into(),
        })?;
    let mut values = Vec::with_capacity(rows.len() * width);
    for (line, fields) in &rows {
        if fields.len() != width {
            return Err(HdError::Parse {
                path: fpath.to_path_buf(),
                line: *line,
                message: format!(
                    "ragged row: expected {width} fields, found {}",
                    fields.len()
                ),
            });
        }
        for f in fields {
            values.push(parse_feature(fpath, *line, f)?);
        }
    }
    let raw: Vec<(usize, String)> = String::from_utf8_lossy(&lbytes)
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_owned()))
        .collect();
    if raw.len() != rows.len() {
        return Err(HdError::Format {
            path: lpath.to_path_buf(),
            message: format!("{} labels for {} feature rows", raw.len(), rows.len()),
        });
    }
    let built;
    let map = match map {
        Some(m) => m,
        None => {
            built = LabelMap::from_names(raw.iter().map(|(_, n)| n.clone()));
            &built
        }
    };
    let labels = map_labels(lpath, raw, map)?;
    let mut ds = Dataset::from_parts(dataset_name(fpath), width, values, labels, map.clone())?;
    ds.provenance.push(Provenance::of(fpath, &fbytes));
    ds.provenance.push(Provenance::of(lpath, &lbytes));
    Ok(ds)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Loads an IDX image/label file pair (plain or gzip-compressed).
///
/// Pixels are flattened row-major and kept as raw `[0, 255]` values.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let ipath = images_path.as_ref();
    let lpath = labels_path.as_ref();
    let images = read_maybe_gz(ipath)?;
    let labels = read_maybe_gz(lpath)?;
    let fmt = |path: &Path, message: String| HdError::Format {
        path: path.to_path_buf(),
        message,
    };

    let magic = be_u32(&images, 0).ok_or_else(|| fmt(ipath, "truncated header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt(
            ipath,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let (count, rows, cols) = match (be_u32(&images, 4), be_u32(&images, 8), be_u32(&images, 12)) {
        (Some(c), Some(r), Some(k)) => (c as usize, r as usize, k as usize),
        _ => return Err(fmt(ipath, "truncated header".into())),
    };
    let features = rows * cols;
    let expected = 16 + count * features;
    if images.len() != expected {
        return Err(fmt(
            ipath,
            format!(
                "expected {expected} bytes for {count} images of {rows}x{cols}, found {}",
                images.len()
            ),
        ));
    }

    let magic = be_u32(&labels, 0).ok_or_else(|| fmt(lpath, "truncated header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt(
            lpath,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let lcount = be_u32(&labels, 4).ok_or_else(|| fmt(lpath, "truncated header".into()))? as usize;
    if labels.len() != 8 + lcount {
        return Err(fmt(
            lpath,
            format!(
                "expected {} bytes for {lcount} labels, found {}",
                8 + lcount,
                labels.len()
            ),
        ));
    }
    if lcount != count {
        return Err(fmt(lpath, format!("{lcount} labels for {count} images")));
    }
    let label_values: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    if let Some((i, &l)) = label_values
        .iter()
        .enumerate()
        .find(|(_, &l)| l >= IDX_CLASSES)
    {
        return Err(fmt(
            lpath,
            format!("label {l} at index {i} is outside 0..{IDX_CLASSES}"),
        ));
    }
    let values: Vec<f32> = images[16..].iter().map(|&b| b as f32).collect();
    let mut ds = Dataset::from_parts(
        dataset_name(ipath),
        features,
        values,
        label_values,
        LabelMap::digits(IDX_CLASSES),
    )?;
    ds.provenance.push(Provenance::of(ipath, &images));
    ds.provenance.push(Provenance::of(lpath, &labels));
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SplitWarning {
    /// The class has one point, which stays in the training partition.
    SingletonClass { class: usize },
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub warnings: Vec<SplitWarning>,
}

/// Stratified split: each class sends `round(fraction * count)` of its
/// points to validation, chosen by a seeded shuffle, keeping at least one
/// point per class in training. Both partitions keep input order.
pub fn split_validation(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HdError::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = RngStream::new(seed, StreamLabel::Shuffle);
    let mut in_validation = vec![false; dataset.len()];
    let mut warnings = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() == 1 {
            warnings.push(SplitWarning::SingletonClass { class });
            continue;
        }
        idx.shuffle(&mut rng);
        let take = ((fraction * idx.len() as f64).round() as usize).min(idx.len() - 1);
        for &i in &idx[..take] {
            in_validation[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| in_validation[i]);
    Ok(Split {
        train: dataset.subset(&train),
        validation: dataset.subset(&val),
        warnings,
    })
}

/// Parameters for [`synthetic_clusters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub per_class: usize,
    /// Standard deviation of the Gaussian noise around each class centre.
    pub noise: f64,
    pub seed: u64,
}

/// Gaussian blobs around uniform random centres in `[0, 1]^n`.
pub fn synthetic_clusters(spec: &SyntheticSpec) -> Result<Dataset> {
    let mut rng = RngStream::new(spec.seed, StreamLabel::Shuffle);
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.features).map(|_| rng.unit()).collect())
        .collect();
    let mut values = Vec::with_capacity(spec.classes * spec.per_class * spec.features);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for _ in 0..spec.per_class {
        for (k, c) in centres.iter().enumerate() {
            for &x in c {
                let u1 = 1.0 - rng.unit();
                let u2 = rng.unit();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                values.push((x + spec.noise * z) as f32);
            }
            labels.push(k);
        }
    }
    // content digest over the generated values and labels
    let mut bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    bytes.extend(labels.iter().flat_map(|&l| (l as u32).to_le_bytes()));
    let name = format!("synthetic-{}x{}", spec.classes, spec.features);
    let path = PathBuf::from(format!("{name}-n{}-seed{}", spec.per_class, spec.seed));
    let mut ds = Dataset::from_parts(
        name,
        spec.features,
        values,
        labels,
        LabelMap::digits(spec.classes),
    )?;
    ds.provenance.push(Provenance::of(&path, &bytes));
    Ok(ds)
}
