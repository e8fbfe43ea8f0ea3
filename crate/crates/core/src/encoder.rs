//! Position/value encoding of numeric feature vectors.
//!
//! Feature `i` with quantized level `q` contributes `bind(B_i, L_q)`; the
//! encoded point is the integer sum of those contributions over all features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};
use crate::hv::{tail_mask, words_for, BinaryHV, IntHV, WORD_BITS};
use crate::rng::{RngStream, StreamLabel};

pub const DEFAULT_LEVELS: usize = 64;

/// Per-feature min/max fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl FeatureScaler {
    /// Fits ranges over training points, given as row-major slices.
    pub fn fit<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let mut iter = points.into_iter();
        let first = iter.next().ok_or(HdError::Empty("training points"))?;
        let mut min: Vec<f64> = first.iter().map(|&v| v as f64).collect();
        let mut max = min.clone();
        for p in iter {
            if p.len() != min.len() {
                return Err(HdError::FeatureCount {
                    expected: min.len(),
                    got: p.len(),
                });
            }
            for (i, &v) in p.iter().enumerate() {
                let v = v as f64;
                if v < min[i] {
                    min[i] = v;
                }
                if v > max[i] {
                    max[i] = v;
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn from_ranges(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.is_empty() {
            return Err(HdError::Empty("scaler ranges"));
        }
        if min.len() != max.len() {
            return Err(HdError::FeatureCount {
                expected: min.len(),
                got: max.len(),
            });
        }
        if min
            .iter()
            .zip(&max)
            .any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi)
        {
            return Err(HdError::Config("scaler has min > max".into()));
        }
        Ok(Self { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn is_degenerate(&self, feature: usize) -> bool {
        self.min[feature] == self.max[feature]
    }

    pub fn degenerate_features(&self) -> Vec<usize> {
        (0..self.features())
            .filter(|&i| self.is_degenerate(i))
            .collect()
    }

    pub fn is_out_of_range(&self, feature: usize, value: f64) -> bool {
        value < self.min[feature] || value > self.max[feature]
    }
}

/// Maps a value to a level index in `[0, levels - 1]`, clamping to the
/// fitted range. Degenerate features and NaN always map to level 0.
pub fn quantize(value: f64, feature: usize, scaler: &FeatureScaler, levels: usize) -> usize {
    let lo = scaler.min[feature];
    let hi = scaler.max[feature];
    if hi <= lo || value.is_nan() {
        return 0;
    }
    let t = (value.clamp(lo, hi) - lo) / (hi - lo);
    ((t * (levels - 1) as f64).round() as usize).min(levels - 1)
}

/// Level hypervectors with linearly growing distance from `L_0`.
///
/// `L_q` flips the first `round(q * (D/2) / (Q-1))` positions of a fixed
/// random ordering of `D/2` positions, so `L_0` and `L_{Q-1}` are exactly
/// orthogonal and every intermediate level sits proportionally between.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelFamily {
    levels: Vec<BinaryHV>,
    flip_order: Vec<usize>,
}

impl LevelFamily {
    pub fn build(dim: usize, levels: usize, rng: &mut RngStream) -> Result<Self> {
        if levels < 2 {
            return Err(HdError::InvalidLevels(levels));
        }
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(HdError::InvalidDimension(dim));
        }
        use rand::seq::SliceRandom;
        let first = BinaryHV::random(dim, rng)?;
        let mut positions: Vec<usize> = (0..dim).collect();
        positions.shuffle(rng);
        positions.truncate(dim / 2);
        let flip_order = positions;

        let mut out = Vec::with_capacity(levels);
        let mut current = first;
        let mut flipped = 0usize;
        for q in 0..levels {
            let target = flips_for_level(q, levels, dim / 2);
            for &pos in &flip_order[flipped..target] {
                current.flip(pos);
            }
            flipped = target;
            out.push(current.clone());
        }
        Ok(Self {
            levels: out,
            flip_order,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, q: usize) -> &BinaryHV {
        &self.levels[q]
    }

    pub fn levels(&self) -> &[BinaryHV] {
        &self.levels
    }

    pub fn flip_order(&self) -> &[usize] {
        &self.flip_order
    }
}

/// `round(q * half / (levels - 1))` in exact integer arithmetic, halves rounding up.
pub fn flips_for_level(q: usize, levels: usize, half: usize) -> usize {
    let den = levels - 1;
    (2 * q * half + den) / (2 * den)
}

/// Parameters that regenerate a [`Codebook`] bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookParams {
    pub dim: usize,
    pub levels: usize,
    pub seed: u64,
}

/// Base vectors, level family, and feature scaler.
#[derive(Debug, Clone)]
pub struct Codebook {
    params: CodebookParams,
    base: Vec<BinaryHV>,
    levels: LevelFamily,
    scaler: FeatureScaler,
}

impl Codebook {
    pub fn new(params: CodebookParams, scaler: FeatureScaler) -> Result<Self> {
        let mut base_rng = RngStream::new(params.seed, StreamLabel::BaseVectors);
        let base = (0..scaler.features())
            .map(|_| BinaryHV::random(params.dim, &mut base_rng))
            .collect::<Result<Vec<_>>>()?;
        let mut level_rng = RngStream::new(params.seed, StreamLabel::LevelVectors);
        let levels = LevelFamily::build(params.dim, params.levels, &mut level_rng)?;
        Ok(Self {
            params,
            base,
            levels,
            scaler,
        })
    }

    pub fn params(&self) -> &CodebookParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn features(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self) -> &[BinaryHV] {
        &self.base
    }

    pub fn level_family(&self) -> &LevelFamily {
        &self.levels
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    pub fn quantize_point(&self, point: &[f32]) -> Result<Vec<usize>> {
        if point.len() != self.features() {
            return Err(HdError::FeatureCount {
                expected: self.features(),
                got: point.len(),
            });
        }
        Ok(point
            .iter()
            .enumerate()
            .map(|(i, &v)| quantize(v as f64, i, &self.scaler, self.params.levels))
            .collect())
    }

    /// Number of features of `point` outside the fitted ranges.
    pub fn clamped_features(&self, point: &[f32]) -> usize {
        point
            .iter()
            .enumerate()
            .filter(|&(i, &v)| self.scaler.is_out_of_range(i, v as f64))
            .count()
    }

    /// Encodes one point: `sum_i bind(B_i, L_{q_i})`.
    pub fn encode(&self, point: &[f32]) -> Result<IntHV> {
        let mut out = vec![0i32; self.dim()];
        self.encode_into(point, &mut out)?;
        IntHV::from_values(out)
    }

    /// Encodes into a caller buffer of length `D`.
    ///
    /// Works word by word: the XNOR of each base/level pair feeds a
    /// bit-sliced counter, so a point costs about `n * D / 64` word ops.
    pub fn encode_into(&self, point: &[f32], out: &mut [i32]) -> Result<()> {
        let q = self.quantize_point(point)?;
        let dim = self.dim();
        if out.len() != dim {
            return Err(HdError::DimensionMismatch {
                left: dim,
                right: out.len(),
            });
        }
        let n = self.features() as i32;
        let nwords = words_for(dim);
        let mask = tail_mask(dim);
        let nplanes = (u32::BITS - (self.features() as u32).leading_zeros()) as usize;
        let mut planes = [0u64; 32];
        for w in 0..nwords {
            planes[..nplanes].fill(0);
            for (b, &level) in self.base.iter().zip(&q) {
                let mut carry = !(b.words()[w] ^ self.levels.level(level).words()[w]);
                for plane in planes[..nplanes].iter_mut() {
                    let next = *plane & carry;
                    *plane ^= carry;
                    carry = next;
                    if carry == 0 {
                        break;
                    }
                }
            }
            let valid = if w + 1 == nwords { mask } else { u64::MAX };
            let bits = valid.count_ones() as usize;
            for j in 0..bits {
                let mut ones = 0i32;
                for (p, plane) in planes[..nplanes].iter().enumerate() {
                    ones |= (((plane >> j) & 1) as i32) << p;
                }
                out[w * WORD_BITS + j] = 2 * ones - n;
            }
        }
        Ok(())
    }

    /// Encodes a batch in parallel, keeping input order.
    pub fn encode_batch<'a, I>(&self, points: I, labels: &[usize]) -> Result<EncodedSet>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let points: Vec<&[f32]> = points.into_iter().collect();
        if points.len() != labels.len() {
            return Err(HdError::Config(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let dim = self.dim();
        let compact = self.features() <= i16::MAX as usize;
        let encoded: Vec<Result<(EncodedValues, Vec<u64>)>> = points
            .par_iter()
            .map(|p| {
                let mut buf = vec![0i32; dim];
                self.encode_into(p, &mut buf)?;
                let query = crate::hv::sign_binarize(&IntHV::from_values(buf.clone())?);
                let values = if compact {
                    EncodedValues::I16(buf.iter().map(|&v| v as i16).collect())
                } else {
                    EncodedValues::I32(buf)
                };
                Ok((values, query.words().to_vec()))
            })
            .collect();
        let mut set = EncodedSet::with_capacity(dim, points.len(), compact);
        let clamped = points.iter().map(|p| self.clamped_features(p)).sum();
        for (r, &label) in encoded.into_iter().zip(labels) {
            let (values, query) = r?;
            set.push_raw(values, query, label);
        }
        set.clamped_values = clamped;
        Ok(set)
    }
}

enum EncodedValues {
    I16(Vec<i16>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone)]
enum Storage {
    I16(Vec<i16>),
    I32(Vec<i32>),
}

/// Borrowed view of one encoded point.
#[derive(Debug, Clone, Copy)]
pub enum EncodedRef<'a> {
    I16(&'a [i16]),
    I32(&'a [i32]),
}

impl EncodedRef<'_> {
    pub fn to_int(self) -> IntHV {
        let values = match self {
            EncodedRef::I16(v) => v.iter().map(|&x| x as i32).collect(),
            EncodedRef::I32(v) => v.to_vec(),
        };
        IntHV::from_values(values).expect("encoded points are non-empty")
    }

    pub fn dot(self, row: &[i32]) -> i64 {
        match self {
            EncodedRef::I16(v) => v.iter().zip(row).map(|(&a, &b)| a as i64 * b as i64).sum(),
            EncodedRef::I32(v) => crate::hv::dot_i32(v, row),
        }
    }

    pub fn norm(self) -> f64 {
        let ss: i64 = match self {
            EncodedRef::I16(v) => v.iter().map(|&a| a as i64 * a as i64).sum(),
            EncodedRef::I32(v) => v.iter().map(|&a| a as i64 * a as i64).sum(),
        };
        (ss as f64).sqrt()
    }

    pub fn get(self, i: usize) -> i32 {
        match self {
            EncodedRef::I16(v) => v[i] as i32,
            EncodedRef::I32(v) => v[i],
        }
    }
}

/// Encoded, labelled points with their sign-binarized queries precomputed.
///
/// Values are stored as `i16` whenever the feature count guarantees they fit.
#[derive(Debug, Clone)]
pub struct EncodedSet {
    dim: usize,
    words: usize,
    storage: Storage,
    queries: Vec<u64>,
    labels: Vec<usize>,
    clamped_values: usize,
}

impl EncodedSet {
    fn with_capacity(dim: usize, len: usize, compact: bool) -> Self {
        let storage = if compact {
            Storage::I16(Vec::with_capacity(dim * len))
        } else {
            Storage::I32(Vec::with_capacity(dim * len))
        };
        Self {
            dim,
            words: words_for(dim),
            storage,
            queries: Vec::with_capacity(words_for(dim) * len),
            labels: Vec::with_capacity(len),
            clamped_values: 0,
        }
    }

    fn push_raw(&mut self, values: EncodedValues, query: Vec<u64>, label: usize) {
        match (&mut self.storage, values) {
            (Storage::I16(s), EncodedValues::I16(v)) => s.extend_from_slice(&v),
            (Storage::I32(s), EncodedValues::I32(v)) => s.extend_from_slice(&v),
            (Storage::I16(s), EncodedValues::I32(v)) => s.extend(v.iter().map(|&x| x as i16)),
            (Storage::I32(s), EncodedValues::I16(v)) => s.extend(v.iter().map(|&x| x as i32)),
        }
        self.queries.extend_from_slice(&query);
        self.labels.push(label);
    }

    /// Builds a set from explicit vectors, stored at full width.
    pub fn from_points(points: Vec<(IntHV, usize)>) -> Result<Self> {
        let first = points.first().ok_or(HdError::Empty("encoded dataset"))?;
        let dim = first.0.dim();
        let mut set = Self::with_capacity(dim, points.len(), false);
        for (hv, label) in points {
            if hv.dim() != dim {
                return Err(HdError::DimensionMismatch {
                    left: dim,
                    right: hv.dim(),
                });
            }
            let query = crate::hv::sign_binarize(&hv).words().to_vec();
            set.push_raw(EncodedValues::I32(hv.into_values()), query, label);
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Count of feature values that fell outside the scaler range and were clamped.
    pub fn clamped_values(&self) -> usize {
        self.clamped_values
    }

    pub fn get(&self, i: usize) -> EncodedRef<'_> {
        let r = i * self.dim..(i + 1) * self.dim;
        match &self.storage {
            Storage::I16(v) => EncodedRef::I16(&v[r]),
            Storage::I32(v) => EncodedRef::I32(&v[r]),
        }
    }

    /// Packed sign-binarized form of point `i`.
    pub fn query_words(&self, i: usize) -> &[u64] {
        &self.queries[i * self.words..(i + 1) * self.words]
    }

    pub fn query(&self, i: usize) -> BinaryHV {
        BinaryHV::from_words(self.dim, self.query_words(i).to_vec())
            .expect("queries are packed with zeroed tails")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hv::{bind, cosine, hamming};

    fn scaler(n: usize) -> FeatureScaler {
        FeatureScaler::from_ranges(vec![0.0; n], vec![1.0; n]).unwrap()
    }

    fn codebook(dim: usize, n: usize, levels: usize, seed: u64) -> Codebook {
        Codebook::new(CodebookParams { dim, levels, seed }, scaler(n)).unwrap()
    }

    fn reference_encode(cb: &Codebook, point: &[f32]) -> IntHV {
        let q = cb.quantize_point(point).unwrap();
        let mut acc = IntHV::zeros(cb.dim()).unwrap();
        for (b, &l) in cb.base().iter().zip(&q) {
            acc.accumulate(&bind(b, cb.level_family().level(l)).unwrap(), 1)
                .unwrap();
        }
        acc
    }

    #[test]
    fn fit_scaler_cases() {
        let pts: Vec<Vec<f32>> = vec![vec![0.0, 10.0], vec![4.0, 2.0]];
        let s = FeatureScaler::fit(pts.iter().map(|p| p.as_slice())).unwrap();
        assert_eq!(s.min(), &[0.0, 2.0]);
        assert_eq!(s.max(), &[4.0, 10.0]);
        assert!(s.degenerate_features().is_empty());

        let single = [vec![3.0f32, -1.0]];
        let s = FeatureScaler::fit(single.iter().map(|p| p.as_slice())).unwrap();
        assert_eq!(s.min(), s.max());
        assert_eq!(s.degenerate_features(), vec![0, 1]);

        let none: Vec<Vec<f32>> = vec![];
        assert!(FeatureScaler::fit(none.iter().map(|p| p.as_slice())).is_err());
    }

    #[test]
    fn quantize_cases() {
        let s = FeatureScaler::from_ranges(vec![0.0, 5.0], vec![10.0, 5.0]).unwrap();
        assert_eq!(quantize(0.0, 0, &s, 5), 0);
        assert_eq!(quantize(10.0, 0, &s, 5), 4);
        assert_eq!(quantize(5.0, 0, &s, 5), 2);
        assert_eq!(quantize(-3.0, 0, &s, 5), 0);
        assert_eq!(quantize(99.0, 0, &s, 5), 4);
        assert_eq!(quantize(7.0, 1, &s, 5), 0);
        assert_eq!(quantize(f64::NAN, 0, &s, 5), 0);
    }

    #[test]
    fn level_family_rejects_bad_parameters() {
        let mut r = RngStream::new(1, StreamLabel::LevelVectors);
        assert!(matches!(
            LevelFamily::build(100, 1, &mut r),
            Err(HdError::InvalidLevels(1))
        ));
        assert!(matches!(
            LevelFamily::build(101, 4, &mut r),
            Err(HdError::InvalidDimension(101))
        ));
    }

    #[test]
    fn level_distances_are_exact() {
        let mut r = RngStream::new(5, StreamLabel::LevelVectors);
        let fam = LevelFamily::build(10_000, 64, &mut r).unwrap();
        let l0 = fam.level(0);
        let mut last = 0;
        for q in 0..64 {
            let d = hamming(l0, fam.level(q)).unwrap();
            let expected = (q as f64 * 10_000.0 / (2.0 * 63.0)).round() as usize;
            assert_eq!(d, expected, "q={q}");
            assert!(d >= last);
            last = d;
        }
        assert_eq!(hamming(l0, fam.level(63)).unwrap(), 5000);
        let c = cosine(&l0.to_int(), &fam.level(63).to_int()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn three_level_midpoint_is_half_correlated() {
        let mut r = RngStream::new(6, StreamLabel::LevelVectors);
        let fam = LevelFamily::build(10_000, 3, &mut r).unwrap();
        assert_eq!(hamming(fam.level(0), fam.level(1)).unwrap(), 2500);
        assert_eq!(hamming(fam.level(1), fam.level(2)).unwrap(), 2500);
        let c = cosine(&fam.level(0).to_int(), &fam.level(1).to_int()).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn base_vectors_are_near_orthogonal() {
        let cb = codebook(10_000, 40, 16, 3);
        for i in 0..cb.features() {
            for j in i + 1..cb.features() {
                let c = cosine(&cb.base()[i].to_int(), &cb.base()[j].to_int()).unwrap();
                assert!(c.abs() < 0.1, "pair ({i},{j}) cos {c}");
            }
        }
    }

    #[test]
    fn fast_encode_matches_reference() {
        for (dim, n) in [(64, 1), (100, 2), (130, 33), (1000, 617)] {
            let cb = codebook(dim, n, 8, dim as u64);
            let point: Vec<f32> = (0..n).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
            assert_eq!(cb.encode(&point).unwrap(), reference_encode(&cb, &point));
        }
    }

    #[test]
    fn single_feature_encoding_is_the_bound_pair() {
        let cb = codebook(256, 1, 4, 9);
        let h = cb.encode(&[0.5]).unwrap();
        let q = quantize(0.5, 0, cb.scaler(), 4);
        let expected = bind(&cb.base()[0], cb.level_family().level(q)).unwrap();
        assert_eq!(h, expected.to_int());
    }

    #[test]
    fn two_feature_encoding_has_even_elements() {
        let cb = codebook(512, 2, 8, 10);
        let h = cb.encode(&[0.1, 0.9]).unwrap();
        assert!(h.values().iter().all(|v| [-2, 0, 2].contains(v)));
    }

    #[test]
    fn encoding_rejects_wrong_feature_count() {
        let cb = codebook(128, 3, 4, 1);
        assert!(matches!(
            cb.encode(&[0.0, 1.0]),
            Err(HdError::FeatureCount {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn changing_one_feature_level_is_local() {
        let cb = codebook(2048, 10, 16, 12);
        let mut p: Vec<f32> = vec![0.25; 10];
        let a = cb.encode(&p).unwrap();
        p[4] = 0.8;
        let b = cb.encode(&p).unwrap();
        let la = cb.level_family().level(quantize(0.25, 4, cb.scaler(), 16));
        let lb = cb.level_family().level(quantize(0.8, 4, cb.scaler(), 16));
        for j in 0..2048 {
            let diff = (a.values()[j] - b.values()[j]).abs();
            if la.get(j) == lb.get(j) {
                assert_eq!(diff, 0);
            } else {
                assert_eq!(diff, 2);
            }
        }
    }

    #[test]
    fn isolet_sized_encoding_has_sqrt_n_spread() {
        let cb = codebook(10_000, 617, 64, 21);
        let point: Vec<f32> = (0..617)
            .map(|i| ((i * 7919) % 1000) as f32 / 1000.0)
            .collect();
        let h = cb.encode(&point).unwrap();
        let sd = crate::stats::row_sigma(&h).unwrap();
        let target = 617f64.sqrt();
        assert!((sd - target).abs() <= 0.15 * target, "sd {sd}");
    }

    #[test]
    fn codebook_regenerates_from_params() {
        let a = codebook(1000, 5, 8, 77);
        let b = codebook(1000, 5, 8, 77);
        assert_eq!(a.base(), b.base());
        assert_eq!(a.level_family(), b.level_family());
    }

    #[test]
    fn encoded_set_keeps_order_and_queries() {
        let cb = codebook(300, 4, 8, 2);
        let pts: Vec<Vec<f32>> = vec![
            vec![0.0, 0.5, 1.0, 0.2],
            vec![1.0, 1.0, 0.0, 0.7],
            vec![2.0, -1.0, 0.0, 0.0],
        ];
        let set = cb
            .encode_batch(pts.iter().map(|p| p.as_slice()), &[1, 0, 1])
            .unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.labels(), &[1, 0, 1]);
        assert_eq!(set.clamped_values(), 2);
        for (i, p) in pts.iter().enumerate() {
            let h = cb.encode(p).unwrap();
            assert_eq!(set.get(i).to_int(), h);
            assert_eq!(set.query(i), crate::hv::sign_binarize(&h));
        }
    }
}
