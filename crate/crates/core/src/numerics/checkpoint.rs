//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then the flat parameter array as little-endian
//! `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::params::{ParamVector, Segment};
use crate::error::{KoapError, Result};

const MAGIC: &[u8; 8] = b"KOAPCKPT";

#[derive(Debug, Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    segments: Vec<Segment>,
    len: usize,
    model: M,
}

/// Encode `params` plus a model description `model` (layer specs, config,
/// normalisation statistics).
pub fn encode<M: Serialize>(kind: &str, params: &ParamVector, model: &M) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        segments: params.layout().to_vec(),
        len: params.len(),
        model,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<M: DeserializeOwned>(expected_kind: &str, bytes: &[u8]) -> Result<(ParamVector, M)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(KoapError::Checkpoint("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| KoapError::Checkpoint("truncated header".into()))?;
    let header: Header<M> = serde_json::from_slice(body)?;
    if header.kind != expected_kind {
        return Err(KoapError::Checkpoint(format!(
            "expected a `{expected_kind}` checkpoint, found `{}`",
            header.kind
        )));
    }
    let data = &bytes[16 + hlen..];
    if data.len() != 8 * header.len {
        return Err(KoapError::Checkpoint(format!(
            "expected {} parameters, found {} bytes",
            header.len,
            data.len()
        )));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParamVector::from_parts(header.segments, values)?;
    Ok((params, header.model))
}

pub fn save<M: Serialize>(path: &Path, kind: &str, params: &ParamVector, model: &M) -> Result<()> {
    let bytes = encode(kind, params, model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(ParamVector, M)> {
    decode(kind, &fs::read(path)?)
}

/// Read only the `kind` field of a checkpoint header.
pub fn peek_kind(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(KoapError::Checkpoint("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| KoapError::Checkpoint("truncated header".into()))?;
    let v: serde_json::Value = serde_json::from_slice(body)?;
    v.get("kind")
        .and_then(|k| k.as_str())
        .map(str::to_string)
        .ok_or_else(|| KoapError::Checkpoint("header has no kind".into()))
}
