//! Binary model file.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! magic "HDQB" | version u32 | dim u32 | classes u32 | levels u32 | features u32
//! codebook seed u64 | train seed u64 | mode u8 | beta f64 | alpha f64 | epoch u32
//! scaler min f64 x features | scaler max f64 x features
//! per class: name length u32, UTF-8 name
//! counts u64 x classes | sigma f64 x classes
//! rows i32 x classes x dim | snapshot u64 x classes x ceil(dim / 64)
//! manifest digest [32] | SHA-256 of all preceding bytes [32]
//! ```
//!
//! Base and level vectors are not stored; they are regenerated from the
//! codebook seed on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::LabelMap;
use crate::encoder::{Codebook, CodebookParams, FeatureScaler};
use crate::error::{HdError, Result};
use crate::hv::{words_for, BinaryHV, IntHV};
use crate::model::{BinarizerMode, Model};

pub const MAGIC: &[u8; 4] = b"HDQB";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub codebook: CodebookParams,
    pub scaler: FeatureScaler,
    pub labels: LabelMap,
    pub train_seed: u64,
    pub alpha: f64,
    pub model: Model,
    pub manifest_digest: [u8; DIGEST_LEN],
}

impl ModelFile {
    /// Regenerates the codebook the model was trained with.
    pub fn codebook(&self) -> Result<Codebook> {
        Codebook::new(self.codebook.clone(), self.scaler.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| HdError::ModelFile(format!("{what} {v} exceeds u32")))
        };
        if self.labels.len() != m.classes() {
            return Err(HdError::ModelFile(format!(
                "{} label names for {} classes",
                self.labels.len(),
                m.classes()
            )));
        }
        if self.codebook.dim != m.dim() {
            return Err(HdError::DimensionMismatch {
                left: self.codebook.dim,
                right: m.dim(),
            });
        }
        let mut out = Vec::with_capacity(64 + m.classes() * m.dim() * 5);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&to_u32(m.dim(), "dimension")?.to_le_bytes());
        out.extend_from_slice(&to_u32(m.classes(), "class count")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.codebook.levels, "level count")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.scaler.features(), "feature count")?.to_le_bytes());
        out.extend_from_slice(&self.codebook.seed.to_le_bytes());
        out.extend_from_slice(&self.train_seed.to_le_bytes());
        out.push(match m.mode() {
            BinarizerMode::Deterministic => 0,
            BinarizerMode::Stochastic => 1,
        });
        out.extend_from_slice(&m.beta().to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&to_u32(m.epoch(), "epoch")?.to_le_bytes());
        for v in self.scaler.min().iter().chain(self.scaler.max()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for name in self.labels.names() {
            out.extend_from_slice(&to_u32(name.len(), "label length")?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for c in m.counts() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for s in m.sigma() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for row in m.rows() {
            for v in row.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for hv in m.snapshot() {
            for w in hv.words() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.manifest_digest);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(HdError::ModelFile("bad magic; not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(HdError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < 8 + 2 * DIGEST_LEN {
            return Err(HdError::ModelFile("truncated file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(HdError::Digest);
        }

        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let levels = r.u32()? as usize;
        let features = r.u32()? as usize;
        let codebook_seed = r.u64()?;
        let train_seed = r.u64()?;
        let mode = match r.u8()? {
            0 => BinarizerMode::Deterministic,
            1 => BinarizerMode::Stochastic,
            other => {
                return Err(HdError::ModelFile(format!(
                    "unknown binarizer mode {other}"
                )))
            }
        };
        let beta = r.f64()?;
        let alpha = r.f64()?;
        let epoch = r.u32()? as usize;
        let min = (0..features).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let max = (0..features).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let names = (0..classes)
            .map(|_| {
                let len = r.u32()? as usize;
                let raw = r.take(len)?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| HdError::ModelFile("label name is not UTF-8".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let counts = (0..classes).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let sigma = (0..classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let rows = (0..classes)
            .map(|_| {
                let vals = (0..dim).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
                IntHV::from_values(vals)
            })
            .collect::<Result<Vec<_>>>()?;
        let snapshot = (0..classes)
            .map(|_| {
                let words = (0..words_for(dim))
                    .map(|_| r.u64())
                    .collect::<Result<Vec<_>>>()?;
                BinaryHV::from_words(dim, words)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest_digest: [u8; DIGEST_LEN] = r.take(DIGEST_LEN)?.try_into().unwrap();
        if r.pos != body.len() {
            return Err(HdError::ModelFile(format!(
                "{} trailing bytes after payload",
                body.len() - r.pos
            )));
        }
        let labels = LabelMap::from_ordered(names)
            .ok_or_else(|| HdError::ModelFile("duplicate label names".into()))?;
        Ok(Self {
            codebook: CodebookParams {
                dim,
                levels,
                seed: codebook_seed,
            },
            scaler: FeatureScaler::from_ranges(min, max)?,
            labels,
            train_seed,
            alpha,
            model: Model::from_parts(rows, snapshot, sigma, counts, epoch, mode, beta)?,
            manifest_digest,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| HdError::ModelFile("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes atomically: a temporary sibling is renamed over `path` only after
/// the full payload is on disk.
pub fn store_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let bytes = file.to_bytes()?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    ModelFile::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamLabel};

    fn sample(seed: u64, dim: usize, classes: usize) -> ModelFile {
        let mut r = RngStream::new(seed, StreamLabel::BaseVectors);
        let rows: Vec<IntHV> = (0..classes)
            .map(|_| {
                let mut acc = IntHV::zeros(dim).unwrap();
                for _ in 0..5 {
                    acc.accumulate(&BinaryHV::random(dim, &mut r).unwrap(), 3)
                        .unwrap();
                }
                acc
            })
            .collect();
        let snapshot = rows.iter().map(crate::hv::sign_binarize).collect();
        let sigma = rows
            .iter()
            .map(|r| crate::stats::row_sigma(r).unwrap())
            .collect();
        ModelFile {
            codebook: CodebookParams {
                dim,
                levels: 8,
                seed,
            },
            scaler: FeatureScaler::from_ranges(vec![0.0, -1.5], vec![1.0, 2.0]).unwrap(),
            labels: LabelMap::digits(classes),
            train_seed: seed ^ 0xff,
            alpha: 1.0,
            model: Model::from_parts(
                rows,
                snapshot,
                sigma,
                vec![5; classes],
                3,
                BinarizerMode::Stochastic,
                0.5,
            )
            .unwrap(),
            manifest_digest: [7; 32],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let f = sample(1, 130, 3);
        let bytes = f.to_bytes().unwrap();
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..4], b"HDQB");
    }

    #[test]
    fn corrupted_payload_fails_digest() {
        let mut bytes = sample(2, 64, 2).to_bytes().unwrap();
        bytes[40] ^= 0x01;
        assert!(matches!(
            ModelFile::from_bytes(&bytes),
            Err(HdError::Digest)
        ));
    }

    #[test]
    fn bad_magic_truncation_and_version() {
        let bytes = sample(3, 64, 2).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            ModelFile::from_bytes(&bad),
            Err(HdError::ModelFile(_))
        ));
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 10]).is_err());
        assert!(ModelFile::from_bytes(&bytes[..6]).is_err());
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        match ModelFile::from_bytes(&future) {
            Err(e @ HdError::Version { found: 2, .. }) => {
                assert!(e.to_string().contains("version 2"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn store_and_load_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.hdqb");
        let f = sample(4, 200, 4);
        store_model(&p, &f).unwrap();
        assert_eq!(load_model(&p).unwrap(), f);
        assert!(!p.with_extension("partial").exists());
    }
}
