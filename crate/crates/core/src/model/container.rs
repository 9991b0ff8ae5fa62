//! Versioned binary model files.
//!
//! Layout (little-endian): magic, `u32` version, `u32` length + config JSON,
//! `u32` length + digest, `u32` tensor count, then per tensor `u32` rows,
//! `u32` cols and `rows·cols` `f64` values in row-major order.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Fusion, ModelParams, TrainConfig};
use crate::dataio::hex_string;
use crate::diffcore::DenseMatrix;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"GTMANCER";
pub const CONTAINER_VERSION: u32 = 1;

/// Digest of everything that fixes the parameter shapes: input widths,
/// latent width, class count, layer count and fusion mode.
pub fn config_digest(dims: &[usize], d: usize, classes: usize, k: usize, fusion: Fusion) -> String {
    let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
    let text = format!("dims={};d={d};c={classes};k={k};fusion={fusion}", dims.join(","));
    hex_string(&Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub config: TrainConfig,
    pub digest: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v = u32::try_from(n).map_err(|_| Error::Container(format!("length {n} exceeds u32")))?;
    put_u32(out, v);
    Ok(())
}

pub fn encode_model(params: &ModelParams, config: &TrainConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CONTAINER_VERSION);
    let cfg = serde_json::to_vec(config)?;
    put_len(&mut out, cfg.len())?;
    out.extend_from_slice(&cfg);
    let digest = config_digest(
        &params.input_dims(),
        params.latent_dim(),
        params.classes(),
        params.layers(),
        config.fusion,
    );
    put_len(&mut out, digest.len())?;
    out.extend_from_slice(digest.as_bytes());
    let tensors = params.tensors();
    put_len(&mut out, tensors.len())?;
    for t in &tensors {
        put_len(&mut out, t.rows())?;
        put_len(&mut out, t.cols())?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Container(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelHeader, ModelParams)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let config: TrainConfig = serde_json::from_slice(r.take(n)?)?;
    let n = r.u32()?;
    let digest = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Container("digest is not UTF-8".into()))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let len = rows
            .checked_mul(cols)
            .and_then(|l| l.checked_mul(8))
            .ok_or_else(|| Error::Container("tensor size overflows".into()))?;
        let raw = r.take(len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(DenseMatrix::new(rows, cols, data)?);
    }
    if r.at != bytes.len() {
        return Err(Error::Container(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    let k = config.k;
    // count = 2M + K(2M + 2) + 1
    let modalities = count
        .checked_sub(2 * k + 1)
        .filter(|v| v % (2 + 2 * k) == 0)
        .map(|v| v / (2 + 2 * k))
        .ok_or_else(|| Error::Container(format!("{count} tensors do not fit K={k}")))?;
    let params = ModelParams::from_tensors(tensors, modalities, k).map_err(|e| Error::Container(e.to_string()))?;
    let expect = config_digest(
        &params.input_dims(),
        params.latent_dim(),
        params.classes(),
        params.layers(),
        config.fusion,
    );
    if expect != digest {
        return Err(Error::Container("stored digest does not match tensor shapes".into()));
    }
    Ok((
        ModelHeader {
            version,
            config,
            digest,
        },
        params,
    ))
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams, config: &TrainConfig) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(params, config)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelHeader, ModelParams)> {
    decode_model(&std::fs::read(path)?)
}
