//! Binary checkpoint archive.
//!
//! Layout: the 8-byte magic, a little-endian `u32` format version, a `u64`
//! header length, the JSON header (configuration, counters and the name and
//! shape of every tensor), the tensors as little-endian `f64` in header
//! order, and finally the SHA-256 of everything before it.

use std::path::Path;

use riskid_tape::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{AdamW, SgdMomentum};
use super::{AttentionHead, Checkpoint, TrainConfig};
use crate::attention::AttentionClassifier;
use crate::error::{Error, Result};
use crate::intervene::RiskModel;
use crate::params::Parameterized;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RISKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct AttentionInfo {
    iteration: usize,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    iteration: usize,
    adam_step: u64,
    tensors: Vec<TensorInfo>,
    attention: Option<AttentionInfo>,
}

fn infos<P: Parameterized>(p: &P) -> Vec<TensorInfo> {
    p.named_tensors()
        .into_iter()
        .map(|(name, m)| TensorInfo { name, shape: [m.nrows(), m.ncols()] })
        .collect()
}

fn push_all<'a>(out: &mut Vec<u8>, mats: impl IntoIterator<Item = &'a Mat>) {
    for m in mats {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn corrupt(m: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(m.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            iteration: self.iteration,
            adam_step: self.optimizer.step,
            tensors: infos(&self.model),
            attention: self.attention.as_ref().map(|a| AttentionInfo {
                iteration: a.iteration,
                tensors: infos(&a.classifier),
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_all(&mut out, self.model.named_tensors().into_iter().map(|(_, m)| m));
        push_all(&mut out, &self.optimizer.m);
        push_all(&mut out, &self.optimizer.v);
        if let Some(a) = &self.attention {
            push_all(&mut out, a.classifier.named_tensors().into_iter().map(|(_, m)| m));
            push_all(&mut out, &a.optimizer.velocity);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fixed = CHECKPOINT_MAGIC.len() + 4 + 8;
        if bytes.len() < fixed + DIGEST_LEN {
            return Err(corrupt(format!("archive is {} bytes, too short to hold a header", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion { expected: CHECKPOINT_VERSION, found: version });
        }
        let body = &bytes[..bytes.len() - DIGEST_LEN];
        if Sha256::digest(body).as_slice() != &bytes[bytes.len() - DIGEST_LEN..] {
            return Err(corrupt("checksum mismatch (truncated or modified archive)"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(fixed..fixed.saturating_add(header_len)).ok_or_else(|| corrupt("header overruns archive"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
        header.config.validate()?;

        let mut reader = Reader { data: &body[fixed + header_len..] };
        let mut model = RiskModel::zeros(&header.config.model)?;
        reader.fill(&mut model, &header.tensors)?;
        let mut optimizer = AdamW::new(&model, header.config.learning_rate, header.config.weight_decay);
        optimizer.step = header.adam_step;
        reader.fill_mats(&mut optimizer.m)?;
        reader.fill_mats(&mut optimizer.v)?;

        let attention = match header.attention {
            Some(info) => {
                let first = info.tensors.first().ok_or_else(|| corrupt("attention head without tensors"))?;
                let mut classifier = AttentionClassifier::zeros(first.shape[0]);
                reader.fill(&mut classifier, &info.tensors)?;
                let a = &header.config.attention;
                let mut optimizer = SgdMomentum::new(&classifier, a.learning_rate, a.momentum, a.weight_decay);
                reader.fill_mats(&mut optimizer.velocity)?;
                Some(AttentionHead { classifier, optimizer, iteration: info.iteration })
            }
            None => None,
        };
        if !reader.data.is_empty() {
            return Err(corrupt(format!("{} trailing payload bytes", reader.data.len())));
        }
        Ok(Self { config: header.config, iteration: header.iteration, model, optimizer, attention })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, m: &mut Mat) -> Result<()> {
        let need = m.len() * 8;
        if self.data.len() < need {
            return Err(corrupt("payload ends early"));
        }
        let (head, rest) = self.data.split_at(need);
        for (v, chunk) in m.iter_mut().zip(head.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        self.data = rest;
        Ok(())
    }

    fn fill_mats(&mut self, mats: &mut [Mat]) -> Result<()> {
        mats.iter_mut().try_for_each(|m| self.take(m))
    }

    /// Checks the stored layout against `params` and reads its tensors.
    fn fill<P: Parameterized>(&mut self, params: &mut P, stored: &[TensorInfo]) -> Result<()> {
        let expected = infos(params);
        if expected.len() != stored.len() {
            return Err(corrupt(format!(
                "archive lists {} tensors, the configuration needs {}",
                stored.len(),
                expected.len()
            )));
        }
        for (e, s) in expected.iter().zip(stored) {
            if e.name != s.name || e.shape != s.shape {
                return Err(Error::Shape {
                    name: s.name.clone(),
                    expected: (e.shape[0], e.shape[1]),
                    found: (s.shape[0], s.shape[1]),
                });
            }
        }
        let mut result = Ok(());
        params.visit_mut(&mut |_, m| {
            if result.is_ok() {
                result = self.take(m);
            }
        });
        result
    }
}
