//! Binary model checkpoints and parameter hashing.
//!
//! One container format serves all three trainable components. Layout, all
//! little-endian:
//!
//! ```text
//! magic     8 bytes  "CDDMCKPT"
//! version   u32      currently 1
//! kind      u32      1 = noise predictor, 2 = encoder, 3 = decoder
//! header    kind-specific dimensions (u64s; encoder adds a stochastic u8)
//! params    u64 count, then count f64 values
//! opt_m     u64 count, then count f64 values
//! opt_v     u64 count, then count f64 values
//! steps     u64 optimizer step counter
//! ```
//!
//! Values are written bit-for-bit, so a save/load round trip is exact and
//! reruns with equal seeds produce byte-identical files.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::denoiser::DenoiserModel;
use crate::jscc::{JsccDecoder, JsccEncoder};

const MAGIC: &[u8; 8] = b"CDDMCKPT";
const VERSION: u32 = 1;

const KIND_DENOISER: u32 = 1;
const KIND_ENCODER: u32 = 2;
const KIND_DECODER: u32 = 3;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("unknown checkpoint kind {0}")]
    BadKind(u32),
    #[error("checkpoint holds a {got}, expected a {expected}")]
    WrongKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint contents rejected by the model: {0}")]
    Model(String),
}

fn kind_name(kind: u32) -> &'static str {
    match kind {
        KIND_DENOISER => "noise predictor",
        KIND_ENCODER => "encoder",
        KIND_DECODER => "decoder",
        _ => "unknown",
    }
}

/// Hex SHA-256 of raw bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hex SHA-256 of a float vector's exact bit patterns.
pub fn hash_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hash_bytes(&bytes)
}

pub fn hash_file(path: &Path) -> Result<String, CheckpointError> {
    Ok(hash_bytes(&fs::read(path)?))
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&kind.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usizes(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.u64(*v as u64);
        }
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], expected_kind: u32) -> Result<Self, CheckpointError> {
        let mut r = Self { buf, pos: 0 };
        if r.bytes(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let kind = r.u32()?;
        if ![KIND_DENOISER, KIND_ENCODER, KIND_DECODER].contains(&kind) {
            return Err(CheckpointError::BadKind(kind));
        }
        if kind != expected_kind {
            return Err(CheckpointError::WrongKind {
                expected: kind_name(expected_kind),
                got: kind_name(kind),
            });
        }
        Ok(r)
    }

    fn bytes(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + len > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let slice = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn usizes(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let len = self.u64()? as usize;
        (0..len).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let len = self.u64()? as usize;
        if self.pos + len.saturating_mul(8) > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()));
        }
        Ok(out)
    }

    fn done(&self) -> Result<(), CheckpointError> {
        if self.pos != self.buf.len() {
            // trailing garbage means the file is not what we wrote
            return Err(CheckpointError::Truncated);
        }
        Ok(())
    }
}

/// Serialize the noise predictor, optimizer state included.
pub fn denoiser_bytes(model: &DenoiserModel) -> Vec<u8> {
    let mut w = Writer::new(KIND_DENOISER);
    w.u64(model.k() as u64);
    w.u64(model.t_steps() as u64);
    w.u64(model.time_dim() as u64);
    w.usizes(model.hidden_widths());
    w.f64s(model.params());
    w.f64s(model.opt_m());
    w.f64s(model.opt_v());
    w.u64(model.step_count());
    w.buf
}

pub fn save_denoiser(path: &Path, model: &DenoiserModel) -> Result<(), CheckpointError> {
    Ok(fs::write(path, denoiser_bytes(model))?)
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserModel, CheckpointError> {
    let buf = fs::read(path)?;
    let mut r = Reader::open(&buf, KIND_DENOISER)?;
    let k = r.u64()? as usize;
    let t_steps = r.u64()? as usize;
    let time_dim = r.u64()? as usize;
    let hidden = r.usizes()?;
    let params = r.f64s()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    let steps = r.u64()?;
    r.done()?;
    DenoiserModel::from_parts(k, t_steps, time_dim, &hidden, params, m, v, steps)
        .map_err(|e| CheckpointError::Model(e.to_string()))
}

pub fn encoder_bytes(enc: &JsccEncoder) -> Vec<u8> {
    let mut w = Writer::new(KIND_ENCODER);
    w.u64(enc.n() as u64);
    w.u64(enc.k() as u64);
    w.u8(enc.stochastic() as u8);
    w.usizes(enc.hidden_widths());
    w.f64s(enc.params());
    w.f64s(enc.opt_m());
    w.f64s(enc.opt_v());
    w.u64(enc.step_count());
    w.buf
}

pub fn save_encoder(path: &Path, enc: &JsccEncoder) -> Result<(), CheckpointError> {
    Ok(fs::write(path, encoder_bytes(enc))?)
}

pub fn load_encoder(path: &Path) -> Result<JsccEncoder, CheckpointError> {
    let buf = fs::read(path)?;
    let mut r = Reader::open(&buf, KIND_ENCODER)?;
    let n = r.u64()? as usize;
    let k = r.u64()? as usize;
    let stochastic = r.u8()? != 0;
    let hidden = r.usizes()?;
    let params = r.f64s()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    let steps = r.u64()?;
    r.done()?;
    JsccEncoder::from_parts(n, k, &hidden, stochastic, params, m, v, steps)
        .map_err(|e| CheckpointError::Model(e.to_string()))
}

pub fn decoder_bytes(dec: &JsccDecoder) -> Vec<u8> {
    let mut w = Writer::new(KIND_DECODER);
    w.u64(dec.n() as u64);
    w.u64(dec.k() as u64);
    w.usizes(dec.hidden_widths());
    w.f64s(dec.params());
    w.f64s(dec.opt_m());
    w.f64s(dec.opt_v());
    w.u64(dec.step_count());
    w.buf
}

pub fn save_decoder(path: &Path, dec: &JsccDecoder) -> Result<(), CheckpointError> {
    Ok(fs::write(path, decoder_bytes(dec))?)
}

pub fn load_decoder(path: &Path) -> Result<JsccDecoder, CheckpointError> {
    let buf = fs::read(path)?;
    let mut r = Reader::open(&buf, KIND_DECODER)?;
    let n = r.u64()? as usize;
    let k = r.u64()? as usize;
    let hidden = r.usizes()?;
    let params = r.f64s()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    let steps = r.u64()?;
    r.done()?;
    JsccDecoder::from_parts(n, k, &hidden, params, m, v, steps)
        .map_err(|e| CheckpointError::Model(e.to_string()))
}
