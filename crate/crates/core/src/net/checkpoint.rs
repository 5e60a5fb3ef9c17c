//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "ALTDETCK" | version | header_len | header (JSON: arch, train config, epochs)
//! n_params  { name_len name rank dims.. f32 values.. }
//! n_stats   { name_len name channels mean.. var.. }
//! sha256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::arch::ArchConfig;
use crate::net::model::{DetectorModel, ParamMap};
use crate::net::train::TrainConfig;
use crate::nn::RunningStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ALTDETCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    train_config: TrainConfig,
    epochs_trained: u32,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits in u32").to_le_bytes());
}

fn put_name(buf: &mut Vec<u8>, name: &str) {
    put_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model to bytes.
pub fn write_checkpoint(model: &DetectorModel<f32>) -> Result<Vec<u8>> {
    model.check_consistency()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    let header = serde_json::to_vec(&Header {
        arch: model.arch.clone(),
        train_config: model.train_config.clone(),
        epochs_trained: model.epochs_trained,
    })?;
    put_u32(&mut buf, header.len());
    buf.extend_from_slice(&header);

    put_u32(&mut buf, model.params.len());
    for (name, t) in &model.params {
        put_name(&mut buf, name);
        put_u32(&mut buf, t.rank());
        for &d in t.shape() {
            put_u32(&mut buf, d);
        }
        put_f32s(&mut buf, t.data());
    }
    put_u32(&mut buf, model.running_stats.len());
    for (name, s) in &model.running_stats {
        put_name(&mut buf, name);
        put_u32(&mut buf, s.channels());
        put_f32s(&mut buf, &s.mean);
        put_f32s(&mut buf, &s.var);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32("name length")?;
        let raw = self.take(len, "name")?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses and validates checkpoint bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<DetectorModel<f32>> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic; not a detector checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch; file is truncated or damaged".into()));
    }

    let mut r = Reader { buf: body, pos: 12 };
    let header_len = r.u32("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;

    let mut params = ParamMap::new();
    for _ in 0..r.u32("parameter count")? {
        let name = r.name()?;
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: shape overflows")))?;
        let data = r.f32s(n, &name)?;
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::CorruptCheckpoint(format!("{name}: {e}")))?;
        params.insert(name, t);
    }
    let mut running_stats = BTreeMap::new();
    for _ in 0..r.u32("statistics count")? {
        let name = r.name()?;
        let c = r.u32("channels")?;
        let mean = r.f32s(c, &name)?;
        let var = r.f32s(c, &name)?;
        running_stats.insert(name, RunningStats { mean, var });
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let model = DetectorModel {
        arch: header.arch,
        params,
        running_stats,
        train_config: header.train_config,
        epochs_trained: header.epochs_trained,
    };
    model.check_consistency()?;
    Ok(model)
}

pub fn save_checkpoint(model: &DetectorModel<f32>, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DetectorModel<f32>> {
    read_checkpoint(&fs::read(path)?)
}
