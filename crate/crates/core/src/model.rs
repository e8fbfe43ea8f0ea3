//! Class-matrix lifecycle: one-shot bundling, retraining against a binarized
//! snapshot, model binarization, and the two inference paths.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Codebook, EncodedRef, EncodedSet, DEFAULT_LEVELS};
use crate::error::{HdError, Result};
use crate::hv::{hamming_words, sign_binarize, stochastic_binarize, words_for, BinaryHV, IntHV};
use crate::rng::{RngStream, StreamLabel};
use crate::stats::row_sigma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinarizerMode {
    /// Sign function: `x >= 0` maps to `+1`.
    Deterministic,
    /// Sign outside `[-b, b]`, randomized flip inside.
    Stochastic,
}

impl BinarizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BinarizerMode::Deterministic => "deterministic",
            BinarizerMode::Stochastic => "stochastic",
        }
    }
}

impl std::str::FromStr for BinarizerMode {
    type Err = HdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" | "det" => Ok(Self::Deterministic),
            "stochastic" | "qbin" => Ok(Self::Stochastic),
            other => Err(HdError::Config(format!("unknown binarizer mode '{other}'"))),
        }
    }
}

/// Which model answers the "is this point misclassified?" question during retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    /// Hamming search against the binarized snapshot.
    Binarized,
    /// Cosine search against the integer rows.
    NonBinarized,
}

/// When the snapshot used for retraining predictions is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotRefresh {
    /// Frozen for the whole epoch, re-binarized after the pass.
    PerEpoch,
    /// The two touched rows are re-binarized right after each update.
    PerUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub levels: usize,
    pub alpha: f64,
    /// Cutoff fraction: each row uses `b = beta * sigma_row`.
    pub beta: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub mode: BinarizerMode,
    pub feedback: Feedback,
    pub refresh: SnapshotRefresh,
    pub seed: u64,
    pub shuffle: bool,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 10_000,
            levels: DEFAULT_LEVELS,
            alpha: 1.0,
            beta: 0.5,
            max_epochs: 30,
            patience: 5,
            mode: BinarizerMode::Stochastic,
            feedback: Feedback::Binarized,
            refresh: SnapshotRefresh::PerEpoch,
            seed: 0,
            shuffle: true,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfigWarning {
    /// `beta >= 1`: the stochastic band covers most of each row.
    CutoffNotBelowSigma,
    /// `alpha` was rounded to an integer update weight.
    AlphaRounded { weight: i32 },
}

impl TrainConfig {
    /// Checks hard constraints and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<ConfigWarning>> {
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return Err(HdError::Config(format!(
                "dimension must be a positive even number, got {}",
                self.dim
            )));
        }
        if self.levels < 2 {
            return Err(HdError::InvalidLevels(self.levels));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(HdError::Config(format!(
                "learning rate must be positive, got {}",
                self.alpha
            )));
        }
        if self.alpha.round() < 1.0 || self.alpha.round() > i32::MAX as f64 {
            return Err(HdError::Config(format!(
                "learning rate {} does not round to a usable integer weight",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(HdError::Config(format!(
                "cutoff fraction must be positive, got {}",
                self.beta
            )));
        }
        if self.max_epochs == 0 {
            return Err(HdError::Config("max epochs must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(HdError::Config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        let mut warnings = Vec::new();
        if self.beta >= 1.0 {
            warnings.push(ConfigWarning::CutoffNotBelowSigma);
        }
        if self.alpha.fract() != 0.0 {
            warnings.push(ConfigWarning::AlphaRounded {
                weight: self.update_weight(),
            });
        }
        Ok(warnings)
    }

    /// Integer weight applied to each retraining update (`alpha` rounded).
    pub fn update_weight(&self) -> i32 {
        self.alpha.round() as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_errors: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    /// Wall time of the pass; the only non-reproducible field.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// One similarity per class; higher is closer.
    pub scores: Vec<f64>,
}

/// Rows that could not be binarized stochastically because their sigma was zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinarizeReport {
    pub sign_fallback_rows: Vec<usize>,
}

/// The flip-noise and shuffle streams consumed by training.
#[derive(Debug, Clone)]
pub struct TrainStreams {
    pub flip_noise: RngStream,
    pub shuffle: RngStream,
}

impl TrainStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            flip_noise: RngStream::new(seed, StreamLabel::FlipNoise),
            shuffle: RngStream::new(seed, StreamLabel::Shuffle),
        }
    }
}

/// Class matrix plus its binarized snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dim: usize,
    rows: Vec<IntHV>,
    snapshot: Vec<BinaryHV>,
    sigma: Vec<f64>,
    counts: Vec<u64>,
    epoch: usize,
    mode: BinarizerMode,
    beta: f64,
}

/// Binarizes one row with cutoff `beta * sigma`; zero sigma falls back to sign.
fn binarize_row(
    row: &IntHV,
    sigma: f64,
    mode: BinarizerMode,
    beta: f64,
    rng: &mut RngStream,
) -> Result<(BinaryHV, bool)> {
    match mode {
        BinarizerMode::Deterministic => Ok((sign_binarize(row), false)),
        BinarizerMode::Stochastic => {
            let b = beta * sigma;
            if b > 0.0 {
                Ok((stochastic_binarize(row, b, rng)?, false))
            } else {
                Ok((sign_binarize(row), true))
            }
        }
    }
}

impl Model {
    /// Assembles a model from raw parts, validating shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        rows: Vec<IntHV>,
        snapshot: Vec<BinaryHV>,
        sigma: Vec<f64>,
        counts: Vec<u64>,
        epoch: usize,
        mode: BinarizerMode,
        beta: f64,
    ) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(HdError::Empty("model rows"));
        }
        let dim = rows[0].dim();
        if snapshot.len() != m || sigma.len() != m || counts.len() != m {
            return Err(HdError::Config(
                "rows, snapshot, sigma and counts must have one entry per class".into(),
            ));
        }
        for d in rows
            .iter()
            .map(IntHV::dim)
            .chain(snapshot.iter().map(BinaryHV::dim))
        {
            if d != dim {
                return Err(HdError::DimensionMismatch {
                    left: dim,
                    right: d,
                });
            }
        }
        Ok(Self {
            dim,
            rows,
            snapshot,
            sigma,
            counts,
            epoch,
            mode,
            beta,
        })
    }

    /// One-shot training: row `k` is the sum of all encoded points labelled `k`.
    pub fn initial_train(
        encoded: &EncodedSet,
        classes: usize,
        mode: BinarizerMode,
        beta: f64,
        rng: &mut RngStream,
    ) -> Result<(Self, BinarizeReport)> {
        if encoded.is_empty() {
            return Err(HdError::Empty("training set"));
        }
        if classes == 0 {
            return Err(HdError::Config("class count must be positive".into()));
        }
        let dim = encoded.dim();
        let mut rows = vec![IntHV::zeros(dim)?; classes];
        let mut counts = vec![0u64; classes];
        for i in 0..encoded.len() {
            let label = encoded.label(i);
            if label >= classes {
                return Err(HdError::LabelOutOfRange { label, classes });
            }
            add_encoded(&mut rows[label], encoded.get(i), 1)?;
            counts[label] += 1;
        }
        let mut model = Self {
            dim,
            snapshot: Vec::new(),
            sigma: vec![0.0; classes],
            rows,
            counts,
            epoch: 0,
            mode,
            beta,
        };
        model.refresh_sigma()?;
        let report = model.rebinarize(mode, beta, rng)?;
        Ok((model, report))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[IntHV] {
        &self.rows
    }

    pub fn snapshot(&self) -> &[BinaryHV] {
        &self.snapshot
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn mode(&self) -> BinarizerMode {
        self.mode
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Classes whose row is entirely zero (no training points reached them).
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.classes())
            .filter(|&k| self.rows[k].is_zero())
            .collect()
    }

    fn refresh_sigma(&mut self) -> Result<()> {
        for (s, row) in self.sigma.iter_mut().zip(&self.rows) {
            *s = if row.dim() >= 2 { row_sigma(row)? } else { 0.0 };
        }
        Ok(())
    }

    /// Re-binarizes every row, each with its own cutoff `beta * sigma_row`.
    pub fn rebinarize(
        &mut self,
        mode: BinarizerMode,
        beta: f64,
        rng: &mut RngStream,
    ) -> Result<BinarizeReport> {
        let (snapshot, report) = binarize_model(&self.rows, &self.sigma, mode, beta, rng)?;
        self.snapshot = snapshot;
        self.mode = mode;
        self.beta = beta;
        Ok(report)
    }

    /// Hamming inference: the query is sign-binarized, then compared to the snapshot.
    pub fn predict_binary(&self, query: &IntHV) -> Result<Prediction> {
        if query.dim() != self.dim {
            return Err(HdError::DimensionMismatch {
                left: self.dim,
                right: query.dim(),
            });
        }
        let q = sign_binarize(query);
        let d = self.dim as f64;
        let distances: Vec<u32> = self
            .snapshot
            .iter()
            .map(|row| hamming_words(q.words(), row.words()))
            .collect();
        let label = argmin(&distances);
        let scores = distances
            .iter()
            .map(|&dist| 1.0 - 2.0 * dist as f64 / d)
            .collect();
        Ok(Prediction { label, scores })
    }

    /// Label and distance for an already packed query; ties go to the lowest class.
    pub fn classify_packed(&self, query: &[u64]) -> (usize, u32) {
        debug_assert_eq!(query.len(), words_for(self.dim));
        let mut best = (0usize, u32::MAX);
        for (k, row) in self.snapshot.iter().enumerate() {
            let dist = hamming_words(query, row.words());
            if dist < best.1 {
                best = (k, dist);
            }
        }
        best
    }

    /// Cosine inference against the integer rows.
    pub fn predict_cosine(&self, query: &IntHV) -> Result<Prediction> {
        if query.dim() != self.dim {
            return Err(HdError::DimensionMismatch {
                left: self.dim,
                right: query.dim(),
            });
        }
        let norms = self.row_norms()?;
        let qn = query.norm();
        if qn == 0.0 {
            return Err(HdError::ZeroNorm);
        }
        let scores: Vec<f64> = self
            .rows
            .iter()
            .zip(&norms)
            .map(|(row, n)| (row.dot(query).unwrap() as f64 / (n * qn)).clamp(-1.0, 1.0))
            .collect();
        Ok(Prediction {
            label: argmax(&scores),
            scores,
        })
    }

    /// Euclidean norm of every row; errors on the first zero row.
    pub fn row_norms(&self) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(class, r)| {
                let n = r.norm();
                if n == 0.0 {
                    Err(HdError::ZeroNormRow { class })
                } else {
                    Ok(n)
                }
            })
            .collect()
    }

    /// Cosine label for an encoded point given precomputed row norms.
    ///
    /// The query norm is a common positive factor, so it does not change the argmax.
    pub fn classify_cosine(&self, point: EncodedRef<'_>, norms: &[f64]) -> usize {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, (row, n)) in self.rows.iter().zip(norms).enumerate() {
            let s = point.dot(row.values()) as f64 / n;
            if s > best.1 {
                best = (k, s);
            }
        }
        best.0
    }

    /// Fraction of `set` classified correctly by the binarized snapshot.
    pub fn accuracy_binary(&self, set: &EncodedSet) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let correct = (0..set.len())
            .into_par_iter()
            .filter(|&i| self.classify_packed(set.query_words(i)).0 == set.label(i))
            .count();
        correct as f64 / set.len() as f64
    }

    /// Fraction of `set` classified correctly by cosine against the integer rows.
    pub fn accuracy_cosine(&self, set: &EncodedSet) -> Result<f64> {
        if set.is_empty() {
            return Ok(0.0);
        }
        let norms = self.row_norms()?;
        let correct = (0..set.len())
            .into_par_iter()
            .filter(|&i| self.classify_cosine(set.get(i), &norms) == set.label(i))
            .count();
        Ok(correct as f64 / set.len() as f64)
    }

    /// One retraining pass.
    ///
    /// Each point is checked against the model chosen by `config.feedback`; a
    /// point of class `k` predicted as `l != k` adds `w * H` to row `k` and
    /// subtracts it from row `l`, with `w` the rounded learning rate. Updates
    /// are applied in dataset order. Afterwards sigma is recomputed and the
    /// snapshot is re-binarized with fresh noise.
    pub fn retrain_epoch(
        &mut self,
        data: &EncodedSet,
        config: &TrainConfig,
        streams: &mut TrainStreams,
    ) -> Result<EpochStats> {
        let start = Instant::now();
        if data.dim() != self.dim {
            return Err(HdError::DimensionMismatch {
                left: self.dim,
                right: data.dim(),
            });
        }
        if let Some(&label) = data.labels().iter().find(|&&l| l >= self.classes()) {
            return Err(HdError::LabelOutOfRange {
                label,
                classes: self.classes(),
            });
        }
        let weight = config.update_weight();
        let mut order: Vec<usize> = (0..data.len()).collect();
        if config.shuffle {
            order.shuffle(&mut streams.shuffle);
        }

        let errors = match config.refresh {
            SnapshotRefresh::PerEpoch => {
                let predicted: Vec<usize> = match config.feedback {
                    Feedback::Binarized => order
                        .par_iter()
                        .map(|&i| self.classify_packed(data.query_words(i)).0)
                        .collect(),
                    Feedback::NonBinarized => {
                        let norms = self.row_norms()?;
                        order
                            .par_iter()
                            .map(|&i| self.classify_cosine(data.get(i), &norms))
                            .collect()
                    }
                };
                let mut errors = 0;
                for (&i, &l) in order.iter().zip(&predicted) {
                    let k = data.label(i);
                    if l != k {
                        self.apply_update(data.get(i), k, l, weight)?;
                        errors += 1;
                    }
                }
                errors
            }
            SnapshotRefresh::PerUpdate => {
                let mut errors = 0;
                for &i in &order {
                    let k = data.label(i);
                    let l = match config.feedback {
                        Feedback::Binarized => self.classify_packed(data.query_words(i)).0,
                        Feedback::NonBinarized => {
                            let norms = self.row_norms()?;
                            self.classify_cosine(data.get(i), &norms)
                        }
                    };
                    if l != k {
                        self.apply_update(data.get(i), k, l, weight)?;
                        for row in [k, l] {
                            self.sigma[row] = row_sigma(&self.rows[row])?;
                            self.snapshot[row] = binarize_row(
                                &self.rows[row],
                                self.sigma[row],
                                config.mode,
                                config.beta,
                                &mut streams.flip_noise,
                            )?
                            .0;
                        }
                        errors += 1;
                    }
                }
                errors
            }
        };

        self.refresh_sigma()?;
        self.rebinarize(config.mode, config.beta, &mut streams.flip_noise)?;
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            train_errors: errors,
            train_accuracy: 1.0 - errors as f64 / data.len().max(1) as f64,
            validation_accuracy: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn apply_update(
        &mut self,
        point: EncodedRef<'_>,
        k: usize,
        l: usize,
        weight: i32,
    ) -> Result<()> {
        let mut plus = self.rows[k].clone();
        let mut minus = self.rows[l].clone();
        add_encoded(&mut plus, point, weight)?;
        add_encoded(&mut minus, point, -weight)?;
        self.rows[k] = plus;
        self.rows[l] = minus;
        self.counts[k] += 1;
        self.counts[l] += 1;
        Ok(())
    }
}

/// Binarizes every row with its own cutoff; rows are processed in class order
/// so the noise stream is consumed deterministically.
pub fn binarize_model(
    rows: &[IntHV],
    sigma: &[f64],
    mode: BinarizerMode,
    beta: f64,
    rng: &mut RngStream,
) -> Result<(Vec<BinaryHV>, BinarizeReport)> {
    let mut report = BinarizeReport::default();
    let mut out = Vec::with_capacity(rows.len());
    for (k, (row, &s)) in rows.iter().zip(sigma).enumerate() {
        let (hv, fallback) = binarize_row(row, s, mode, beta, rng)?;
        if fallback {
            report.sign_fallback_rows.push(k);
        }
        out.push(hv);
    }
    Ok((out, report))
}

/// `row += weight * point`, checked for overflow.
pub(crate) fn add_encoded(row: &mut IntHV, point: EncodedRef<'_>, weight: i32) -> Result<()> {
    match point {
        EncodedRef::I32(_) => row.add_scaled(&point.to_int(), weight),
        EncodedRef::I16(v) => {
            if v.len() != row.dim() {
                return Err(HdError::DimensionMismatch {
                    left: row.dim(),
                    right: v.len(),
                });
            }
            let w = weight as i64;
            let vals = row.values();
            if let Some(index) = vals
                .iter()
                .zip(v)
                .position(|(&a, &b)| i32::try_from(a as i64 + w * b as i64).is_err())
            {
                return Err(HdError::Overflow { index });
            }
            let updated: Vec<i32> = vals
                .iter()
                .zip(v)
                .map(|(&a, &b)| (a as i64 + w * b as i64) as i32)
                .collect();
            *row = IntHV::from_values(updated)?;
            Ok(())
        }
    }
}

fn argmin(xs: &[u32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Outcome of a full training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Model at the epoch with the best validation accuracy (epoch 0 is one-shot).
    pub best: Model,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    /// Model after the last epoch that ran.
    pub last: Model,
    pub last_validation_accuracy: f64,
    /// Validation accuracy of the one-shot model before any retraining.
    pub initial_validation_accuracy: f64,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<ConfigWarning>,
    pub sign_fallback_rows: Vec<usize>,
}

fn validation_accuracy(model: &Model, set: &EncodedSet, feedback: Feedback) -> Result<f64> {
    match feedback {
        Feedback::Binarized => Ok(model.accuracy_binary(set)),
        Feedback::NonBinarized => model.accuracy_cosine(set),
    }
}

/// Encodes both splits with `codebook` and runs [`train_encoded`].
pub fn train(
    config: &TrainConfig,
    train_set: &crate::data::Dataset,
    validation_set: &crate::data::Dataset,
    codebook: &Codebook,
) -> Result<TrainReport> {
    config.validate()?;
    let classes = train_set.classes().max(validation_set.classes());
    let tr = codebook.encode_batch(train_set.points(), train_set.labels())?;
    let va = codebook.encode_batch(validation_set.points(), validation_set.labels())?;
    train_encoded(config, &tr, &va, classes)
}

/// Initial training, then retraining with early stopping on validation accuracy.
///
/// Validation accuracy is that of the binarized snapshot, or of cosine
/// inference when the feedback is non-binarized. Training stops after
/// `patience` epochs without strict improvement, and the best model is kept.
pub fn train_encoded(
    config: &TrainConfig,
    train_set: &EncodedSet,
    validation_set: &EncodedSet,
    classes: usize,
) -> Result<TrainReport> {
    let warnings = config.validate()?;
    if train_set.dim() != config.dim {
        return Err(HdError::DimensionMismatch {
            left: config.dim,
            right: train_set.dim(),
        });
    }
    let mut streams = TrainStreams::new(config.seed);
    let (mut model, report) = Model::initial_train(
        train_set,
        classes,
        config.mode,
        config.beta,
        &mut streams.flip_noise,
    )?;
    let initial = validation_accuracy(&model, validation_set, config.feedback)?;
    let mut best = (model.clone(), 0usize, initial);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut stale = 0;
    let mut last_acc = initial;
    for _ in 0..config.max_epochs {
        let mut stats = model.retrain_epoch(train_set, config, &mut streams)?;
        let acc = validation_accuracy(&model, validation_set, config.feedback)?;
        stats.validation_accuracy = Some(acc);
        history.push(stats);
        last_acc = acc;
        if acc > best.2 {
            best = (model.clone(), model.epoch(), acc);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainReport {
        best: best.0,
        best_epoch: best.1,
        best_validation_accuracy: best.2,
        last: model,
        last_validation_accuracy: last_acc,
        initial_validation_accuracy: initial,
        history,
        warnings,
        sign_fallback_rows: report.sign_fallback_rows,
    })
}
