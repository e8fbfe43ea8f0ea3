//! Bit-packed bipolar hypervectors and integer accumulators.
//!
//! A [`BinaryHV`] stores one bit per element, bit `1` meaning `+1` and bit `0`
//! meaning `-1`. Under that convention element-wise multiplication of two
//! bipolar vectors is bitwise XNOR, and the number of disagreeing elements is
//! the popcount of XOR. Bits past `dim` in the last word are always zero.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{HdError, Result};
use crate::rng::RngStream;

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

/// Mask of valid bits in the last word of a `dim`-bit vector.
#[inline]
pub fn tail_mask(dim: usize) -> u64 {
    match dim % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(HdError::DimensionMismatch { left, right });
    }
    Ok(())
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryHV {
    dim: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryHV {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryHV(dim={}, ones={})", self.dim, self.count_ones())
    }
}

impl BinaryHV {
    /// All elements `+1`.
    pub fn ones(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        let mut words = vec![u64::MAX; words_for(dim)];
        *words.last_mut().unwrap() &= tail_mask(dim);
        Ok(Self { dim, words })
    }

    /// All elements `-1`.
    pub fn minus_ones(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            words: vec![0; words_for(dim)],
        })
    }

    /// Each element independently `+1` or `-1` with probability one half.
    pub fn random(dim: usize, rng: &mut RngStream) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        let mut words: Vec<u64> = (0..words_for(dim)).map(|_| rng.next_u64()).collect();
        *words.last_mut().unwrap() &= tail_mask(dim);
        Ok(Self { dim, words })
    }

    /// Builds from a sequence of signs; any non-negative value counts as `+1`.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.is_empty() {
            return Err(HdError::InvalidDimension(0));
        }
        let mut words = vec![0u64; words_for(signs.len())];
        for (i, &s) in signs.iter().enumerate() {
            if s >= 0 {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(Self {
            dim: signs.len(),
            words,
        })
    }

    /// Wraps packed words. Fails if the word count is wrong or tail bits are set.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        if words.len() != words_for(dim) {
            return Err(HdError::DimensionMismatch {
                left: words_for(dim),
                right: words.len(),
            });
        }
        if words.last().unwrap() & !tail_mask(dim) != 0 {
            return Err(HdError::Config(
                "packed vector has bits set beyond its dimension".into(),
            ));
        }
        Ok(Self { dim, words })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Element `i` as `+1` or `-1`.
    pub fn get(&self, i: usize) -> i8 {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        if self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        let bit = 1u64 << (i % WORD_BITS);
        if positive {
            self.words[i / WORD_BITS] |= bit;
        } else {
            self.words[i / WORD_BITS] &= !bit;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        self.words[i / WORD_BITS] ^= 1 << (i % WORD_BITS);
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    /// Number of `+1` elements.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Element-wise negation.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        *words.last_mut().unwrap() &= tail_mask(self.dim);
        Self {
            dim: self.dim,
            words,
        }
    }

    /// The `±1` elements as an integer vector.
    pub fn to_int(&self) -> IntHV {
        IntHV {
            values: (0..self.dim).map(|i| self.get(i) as i32).collect(),
        }
    }
}

/// Element-wise product in `±1` semantics (XNOR on packed bits).
pub fn bind(a: &BinaryHV, b: &BinaryHV) -> Result<BinaryHV> {
    check_dims(a.dim, b.dim)?;
    let mut words: Vec<u64> = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| !(x ^ y))
        .collect();
    *words.last_mut().unwrap() &= tail_mask(a.dim);
    Ok(BinaryHV { dim: a.dim, words })
}

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &BinaryHV, b: &BinaryHV) -> Result<usize> {
    check_dims(a.dim, b.dim)?;
    Ok(hamming_words(&a.words, &b.words) as usize)
}

/// Popcount of XOR over equal-length word slices. Callers guarantee zeroed tails.
#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// A D-dimensional vector of signed 32-bit integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntHV {
    values: Vec<i32>,
}

impl IntHV {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        Ok(Self {
            values: vec![0; dim],
        })
    }

    pub fn from_values(values: Vec<i32>) -> Result<Self> {
        if values.is_empty() {
            return Err(HdError::InvalidDimension(0));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<i32> {
        self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// `self_j += weight * hv_j` with `hv_j` in `{-1, +1}`.
    ///
    /// On overflow the vector is left unchanged and an error is returned.
    pub fn accumulate(&mut self, hv: &BinaryHV, weight: i32) -> Result<()> {
        check_dims(self.dim(), hv.dim)?;
        let w = weight as i64;
        let mut out = self.values.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let bit = hv.words[i / WORD_BITS] >> (i % WORD_BITS) & 1;
            let delta = if bit == 1 { w } else { -w };
            *v = i32::try_from(*v as i64 + delta).map_err(|_| HdError::Overflow { index: i })?;
        }
        self.values = out;
        Ok(())
    }

    /// `self += weight * other`, failing without modification on overflow.
    pub fn add_scaled(&mut self, other: &IntHV, weight: i32) -> Result<()> {
        check_dims(self.dim(), other.dim())?;
        let w = weight as i64;
        // Fast path: check bounds once, then add in place.
        if let Some(index) = self
            .values
            .iter()
            .zip(&other.values)
            .position(|(&a, &b)| i32::try_from(a as i64 + w * b as i64).is_err())
        {
            return Err(HdError::Overflow { index });
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = (*a as i64 + w * b as i64) as i32;
        }
        Ok(())
    }

    pub fn negate(&self) -> IntHV {
        IntHV {
            values: self.values.iter().map(|v| v.wrapping_neg()).collect(),
        }
    }

    pub fn dot(&self, other: &IntHV) -> Result<i64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot_i32(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        (dot_i32(&self.values, &self.values) as f64).sqrt()
    }
}

#[inline]
pub(crate) fn dot_i32(a: &[i32], b: &[i32]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine(a: &IntHV, b: &IntHV) -> Result<f64> {
    let dot = a.dot(b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(HdError::ZeroNorm);
    }
    Ok((dot as f64 / (na * nb)).clamp(-1.0, 1.0))
}

/// Deterministic binarization: `+1` for `x >= 0`, `-1` otherwise.
pub fn sign_binarize(v: &IntHV) -> BinaryHV {
    let dim = v.dim();
    let words = v
        .values
        .chunks(WORD_BITS)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u64, |w, (j, &x)| w | (((x >= 0) as u64) << j))
        })
        .collect();
    BinaryHV { dim, words }
}

/// Stochastic binarization with cutoff `b`.
///
/// Outside `[-b, b]` this is the sign. Inside, the element becomes `+1` with
/// probability `1/2 + x/(2b)`, so its expectation is `x/b`. One uniform draw
/// is consumed per in-band element, in element order.
pub fn stochastic_binarize(v: &IntHV, b: f64, rng: &mut RngStream) -> Result<BinaryHV> {
    if !b.is_finite() || b <= 0.0 {
        return Err(HdError::InvalidCutoff(b));
    }
    let dim = v.dim();
    let mut words = vec![0u64; words_for(dim)];
    for (i, &x) in v.values.iter().enumerate() {
        let x = x as f64;
        let positive = if x > b {
            true
        } else if x < -b {
            false
        } else {
            rng.unit() < 0.5 + x / (2.0 * b)
        };
        if positive {
            words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
        }
    }
    Ok(BinaryHV { dim, words })
}

/// Bit-sliced population counter for bundling many binary hypervectors.
///
/// Plane `p` holds bit `p` of the per-element count of `+1`s seen so far, so
/// adding a vector costs a short ripple-carry over words rather than one
/// integer add per element.
#[derive(Debug, Clone)]
pub struct BundleCounter {
    dim: usize,
    added: usize,
    planes: Vec<Vec<u64>>,
}

impl BundleCounter {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HdError::InvalidDimension(dim));
        }
        Ok(Self {
            dim,
            added: 0,
            planes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.added
    }

    pub fn is_empty(&self) -> bool {
        self.added == 0
    }

    pub fn add(&mut self, hv: &BinaryHV) -> Result<()> {
        check_dims(self.dim, hv.dim)?;
        if self
            .added
            .checked_add(1)
            .is_none_or(|n| n > i32::MAX as usize)
        {
            return Err(HdError::Overflow { index: 0 });
        }
        self.added += 1;
        let needed = (usize::BITS - self.added.leading_zeros()) as usize;
        let nwords = words_for(self.dim);
        while self.planes.len() < needed {
            self.planes.push(vec![0; nwords]);
        }
        for (w, &word) in hv.words.iter().enumerate() {
            let mut carry = word;
            for plane in self.planes.iter_mut() {
                if carry == 0 {
                    break;
                }
                let next = plane[w] & carry;
                plane[w] ^= carry;
                carry = next;
            }
        }
        Ok(())
    }

    /// Sum of all added vectors in `±1` semantics: `2 * ones - added`.
    pub fn to_int(&self) -> IntHV {
        let n = self.added as i32;
        let values = (0..self.dim)
            .map(|i| {
                let (w, b) = (i / WORD_BITS, i % WORD_BITS);
                let ones = self
                    .planes
                    .iter()
                    .enumerate()
                    .fold(0i32, |acc, (p, plane)| {
                        acc | (((plane[w] >> b) & 1) as i32) << p
                    });
                2 * ones - n
            })
            .collect();
        IntHV { values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamLabel;
    use proptest::prelude::*;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamLabel::BaseVectors)
    }

    fn naive_hamming(a: &BinaryHV, b: &BinaryHV) -> usize {
        a.to_signs()
            .iter()
            .zip(b.to_signs())
            .filter(|(x, y)| **x != *y)
            .count()
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            BinaryHV::random(0, &mut rng(1)),
            Err(HdError::InvalidDimension(0))
        ));
        assert!(IntHV::zeros(0).is_err());
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let a = BinaryHV::random(64, &mut rng(3)).unwrap();
        let b = BinaryHV::random(64, &mut rng(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_pairs_are_near_orthogonal() {
        let mut r = rng(11);
        let a = BinaryHV::random(10_000, &mut r).unwrap();
        let b = BinaryHV::random(10_000, &mut r).unwrap();
        let d = hamming(&a, &b).unwrap() as i64;
        assert!((d - 5000).abs() <= 150, "hamming {d}");
        let c = cosine(&a.to_int(), &b.to_int()).unwrap();
        assert!(c.abs() <= 0.03, "cosine {c}");
    }

    #[test]
    fn tail_bits_stay_zero() {
        for dim in [1, 7, 63, 65, 130] {
            let a = BinaryHV::random(dim, &mut rng(dim as u64)).unwrap();
            let ones = BinaryHV::ones(dim).unwrap();
            for v in [&a, &ones, &a.complement(), &bind(&a, &ones).unwrap()] {
                assert_eq!(v.words().last().unwrap() & !tail_mask(dim), 0);
                assert!(v.count_ones() <= dim);
            }
        }
    }

    #[test]
    fn bind_identities() {
        let a = BinaryHV::random(100, &mut rng(5)).unwrap();
        let ones = BinaryHV::ones(100).unwrap();
        assert_eq!(bind(&a, &a).unwrap(), ones);
        assert_eq!(bind(&a, &ones).unwrap(), a);
    }

    #[test]
    fn bind_rejects_dimension_mismatch() {
        let a = BinaryHV::ones(10).unwrap();
        let b = BinaryHV::ones(11).unwrap();
        assert!(matches!(
            bind(&a, &b),
            Err(HdError::DimensionMismatch {
                left: 10,
                right: 11
            })
        ));
        assert!(hamming(&a, &b).is_err());
    }

    #[test]
    fn hamming_extremes() {
        let a = BinaryHV::random(777, &mut rng(9)).unwrap();
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 777);
    }

    #[test]
    fn hamming_matches_naive_on_random_pairs() {
        let mut r = rng(21);
        for _ in 0..1000 {
            let a = BinaryHV::random(512, &mut r).unwrap();
            let b = BinaryHV::random(512, &mut r).unwrap();
            assert_eq!(hamming(&a, &b).unwrap(), naive_hamming(&a, &b));
        }
    }

    #[test]
    fn accumulate_and_undo() {
        let h = BinaryHV::random(200, &mut rng(2)).unwrap();
        let mut acc = IntHV::zeros(200).unwrap();
        acc.accumulate(&h, 1).unwrap();
        assert_eq!(acc, h.to_int());
        acc.accumulate(&h, -1).unwrap();
        assert!(acc.is_zero());
    }

    #[test]
    fn accumulate_detects_overflow() {
        let h = BinaryHV::ones(4).unwrap();
        let mut acc = IntHV::from_values(vec![i32::MAX - 1; 4]).unwrap();
        let before = acc.clone();
        assert!(matches!(
            acc.accumulate(&h, 2),
            Err(HdError::Overflow { index: 0 })
        ));
        assert_eq!(acc, before);
        let mut acc = IntHV::from_values(vec![i32::MIN + 1, 0]).unwrap();
        let other = IntHV::from_values(vec![1, 1]).unwrap();
        assert!(acc.add_scaled(&other, -2).is_err());
    }

    #[test]
    fn accumulated_std_tracks_sqrt_n() {
        let mut r = rng(4);
        let mut acc = IntHV::zeros(10_000).unwrap();
        for _ in 0..10_000 {
            acc.accumulate(&BinaryHV::random(10_000, &mut r).unwrap(), 1)
                .unwrap();
        }
        let vals = acc.values();
        assert!(vals
            .iter()
            .all(|v| v.abs() <= 10_000 && v.rem_euclid(2) == 0));
        let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 100.0).abs() <= 10.0, "sd {sd}");
    }

    #[test]
    fn cosine_extremes_and_zero_norm() {
        let a = IntHV::from_values(vec![3, -1, 4, 1, -5]).unwrap();
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&a, &a.negate()).unwrap() + 1.0).abs() < 1e-12);
        let z = IntHV::zeros(5).unwrap();
        assert!(matches!(cosine(&a, &z), Err(HdError::ZeroNorm)));
    }

    #[test]
    fn sign_binarize_examples() {
        let v = IntHV::from_values(vec![5, -3, 0, -1]).unwrap();
        assert_eq!(sign_binarize(&v).to_signs(), vec![1, -1, 1, -1]);
        let once = sign_binarize(&v);
        assert_eq!(sign_binarize(&once.to_int()), once);
    }

    #[test]
    fn stochastic_binarize_rejects_bad_cutoff() {
        let v = IntHV::zeros(4).unwrap();
        let mut r = RngStream::new(0, StreamLabel::FlipNoise);
        for b in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                stochastic_binarize(&v, b, &mut r),
                Err(HdError::InvalidCutoff(_))
            ));
        }
    }

    #[test]
    fn stochastic_binarize_saturates_outside_band() {
        let v = IntHV::from_values(vec![20, -20, 11, -11]).unwrap();
        let mut r = RngStream::new(0, StreamLabel::FlipNoise);
        for _ in 0..100 {
            let out = stochastic_binarize(&v, 10.0, &mut r).unwrap();
            assert_eq!(out.to_signs(), vec![1, -1, 1, -1]);
        }
    }

    #[test]
    fn stochastic_binarize_mean_matches_x_over_b() {
        let b = 8.0;
        let draws = 100_000;
        let mut r = RngStream::new(99, StreamLabel::FlipNoise);
        for x in [-8, -4, 0, 4, 8] {
            let v = IntHV::from_values(vec![x; draws]).unwrap();
            let out = stochastic_binarize(&v, b, &mut r).unwrap();
            let mean = (2.0 * out.count_ones() as f64 - draws as f64) / draws as f64;
            assert!((mean - x as f64 / b).abs() <= 0.01, "x={x} mean={mean}");
        }
    }

    #[test]
    fn stochastic_binarize_tiny_cutoff_is_sign() {
        let mut r = RngStream::new(3, StreamLabel::FlipNoise);
        let v = IntHV::from_values((-50..50).filter(|&x| x != 0).collect()).unwrap();
        let out = stochastic_binarize(&v, 1e-9, &mut r).unwrap();
        assert_eq!(out, sign_binarize(&v));
    }

    #[test]
    fn bundle_counter_matches_accumulate() {
        let mut r = rng(8);
        let mut counter = BundleCounter::new(300).unwrap();
        let mut acc = IntHV::zeros(300).unwrap();
        for _ in 0..77 {
            let h = BinaryHV::random(300, &mut r).unwrap();
            counter.add(&h).unwrap();
            acc.accumulate(&h, 1).unwrap();
        }
        assert_eq!(counter.to_int(), acc);
    }

    fn arb_dim() -> impl Strategy<Value = usize> {
        prop_oneof![
            Just(1usize),
            Just(7),
            Just(63),
            Just(64),
            Just(65),
            Just(10_000)
        ]
    }

    proptest! {
        #[test]
        fn packed_hamming_equals_naive(dim in arb_dim(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = BinaryHV::random(dim, &mut rng(s1)).unwrap();
            let b = BinaryHV::random(dim, &mut RngStream::new(s2, StreamLabel::LevelVectors)).unwrap();
            let d = hamming(&a, &b).unwrap();
            prop_assert_eq!(d, naive_hamming(&a, &b));
            prop_assert_eq!(d, hamming(&b, &a).unwrap());
            // cos = 1 - 2d/D on bipolar vectors
            let c = cosine(&a.to_int(), &b.to_int()).unwrap();
            prop_assert!((c - (1.0 - 2.0 * d as f64 / dim as f64)).abs() < 1e-12);
        }

        #[test]
        fn bind_algebra(dim in 1usize..300, s in any::<u64>()) {
            let mut r = rng(s);
            let a = BinaryHV::random(dim, &mut r).unwrap();
            let b = BinaryHV::random(dim, &mut r).unwrap();
            let c = BinaryHV::random(dim, &mut r).unwrap();
            let ab = bind(&a, &b).unwrap();
            prop_assert_eq!(&ab, &bind(&b, &a).unwrap());
            prop_assert_eq!(&bind(&ab, &b).unwrap(), &a);
            prop_assert_eq!(bind(&ab, &c).unwrap(), bind(&a, &bind(&b, &c).unwrap()).unwrap());
            prop_assert_eq!(
                hamming(&bind(&a, &c).unwrap(), &bind(&b, &c).unwrap()).unwrap(),
                hamming(&a, &b).unwrap()
            );
            // bind is element-wise multiplication
            let prod: Vec<i8> = a.to_signs().iter().zip(b.to_signs()).map(|(x, y)| x * y).collect();
            prop_assert_eq!(ab.to_signs(), prod);
        }

        #[test]
        fn signs_round_trip(signs in proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], 1..200)) {
            let hv = BinaryHV::from_signs(&signs).unwrap();
            prop_assert_eq!(hv.to_signs(), signs.clone());
            prop_assert_eq!(BinaryHV::from_words(hv.dim(), hv.words().to_vec()).unwrap(), hv);
        }

        #[test]
        fn accumulation_parity(n in 1usize..40, s in any::<u64>()) {
            let mut r = rng(s);
            let mut acc = IntHV::zeros(97).unwrap();
            for _ in 0..n {
                acc.accumulate(&BinaryHV::random(97, &mut r).unwrap(), 1).unwrap();
            }
            for &v in acc.values() {
                prop_assert!(v.unsigned_abs() as usize <= n);
                prop_assert_eq!(v.rem_euclid(2) as usize, n % 2);
            }
        }
    }
}
