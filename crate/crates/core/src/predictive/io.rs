//! Versioned model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, JSON header,
//! `u64` payload length, JSON payload. All integers little-endian. The header
//! carries what a reader needs before touching the payload (record type, kind,
//! seed, normalizers); the payload is the kind-specific fitted state.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{PredictiveCdfModel, PredictiveKind, PredictiveState, ScoreNormalizer};
use crate::data::FeatureScaler;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EPICSCR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    /// `"predictive"` or `"pipeline"`.
    pub record: String,
    pub kind: Option<PredictiveKind>,
    pub seed: u64,
    pub normalizer: Option<ScoreNormalizer>,
    pub scaler: Option<FeatureScaler>,
}

pub fn write_record<W: Write, P: Serialize>(mut w: W, header: &ModelHeader, payload: &P) -> Result<()> {
    let h = serde_json::to_vec(header)?;
    let p = serde_json::to_vec(payload)?;
    let len = u32::try_from(h.len()).map_err(|_| Error::ModelFormat("header too large".into()))?;
    let io = |e| Error::io("<model stream>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&len.to_le_bytes()).map_err(io)?;
    w.write_all(&h).map_err(io)?;
    w.write_all(&(p.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&p).map_err(io)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| Error::ModelFormat(format!("truncated {what}")))?;
    Ok(buf)
}

pub fn read_record<R: Read, P: DeserializeOwned>(mut r: R) -> Result<(ModelHeader, P)> {
    if read_exact(&mut r, 8, "magic")? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(read_exact(&mut r, 4, "header length")?.try_into().expect("4 bytes"));
    let header: ModelHeader = serde_json::from_slice(&read_exact(&mut r, hlen as usize, "header")?)?;
    let plen = u64::from_le_bytes(read_exact(&mut r, 8, "payload length")?.try_into().expect("8 bytes"));
    let plen = usize::try_from(plen).map_err(|_| Error::ModelFormat("payload too large".into()))?;
    let payload = serde_json::from_slice(&read_exact(&mut r, plen, "payload")?)?;
    Ok((header, payload))
}

pub(crate) fn save_to<P: Serialize>(path: &Path, header: &ModelHeader, payload: &P) -> Result<()> {
    let mut buf = Vec::new();
    write_record(&mut buf, header, payload)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_from<P: DeserializeOwned>(path: &Path) -> Result<(ModelHeader, P)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_record(bytes.as_slice())
}

impl PredictiveCdfModel {
    pub(crate) fn header(&self, record: &str) -> ModelHeader {
        ModelHeader {
            record: record.into(),
            kind: Some(self.kind),
            seed: self.seed,
            normalizer: Some(self.normalizer),
            scaler: Some(self.scaler.clone()),
        }
    }

    pub(crate) fn from_parts(header: ModelHeader, state: PredictiveState) -> Result<Self> {
        let missing = |f: &str| Error::ModelFormat(format!("header lacks {f}"));
        Ok(Self {
            kind: header.kind.ok_or_else(|| missing("kind"))?,
            normalizer: header.normalizer.ok_or_else(|| missing("normalizer"))?,
            scaler: header.scaler.ok_or_else(|| missing("scaler"))?,
            seed: header.seed,
            state,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_record(&mut buf, &self.header("predictive"), &self.state)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, state): (ModelHeader, PredictiveState) = read_record(bytes)?;
        if header.record != "predictive" {
            return Err(Error::ModelFormat(format!("expected a predictive record, found {:?}", header.record)));
        }
        Self::from_parts(header, state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_to(path, &self.header("predictive"), &self.state)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
