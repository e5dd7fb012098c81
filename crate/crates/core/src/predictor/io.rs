//! `GLBW` weight files and loss-history CSV.
//!
//! Layout (little-endian): magic `GLBW`, u16 version, u32 depth,
//! u32 base_filters, u32 kernel_size, u32 in_channels, u64 seed, then every
//! parameter as f32 in layer order (kernel then bias per layer).

use std::fs;
use std::path::Path;

use super::network::{ModelConfig, Weights};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GLBW";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 8;

pub fn encode_weights(w: &Weights<f32>) -> Vec<u8> {
    let c = &w.config;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * w.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.depth, c.base_filters, c.kernel_size, c.in_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    for p in w.to_flat() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Weights<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated weights header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected GLBW"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported weights version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let config = ModelConfig {
        depth: u32_at(6),
        base_filters: u32_at(10),
        kernel_size: u32_at(14),
        in_channels: u32_at(18),
        seed: u64::from_le_bytes(bytes[22..30].try_into().unwrap()),
    };
    config
        .validate()
        .map_err(|e| Error::format(6, format!("invalid model config: {e}")))?;
    let count = config.param_count();
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {count} parameters, file has {}", bytes.len()),
        ));
    }
    let mut flat = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format((HEADER_LEN + 4 * i) as u64, "non-finite parameter"));
        }
        flat.push(v);
    }
    Weights::from_flat(config, &flat)
}

pub fn write_weights(path: impl AsRef<Path>, w: &Weights<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(w)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Weights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// `epoch,mean_loss` with 1-based epochs.
pub fn write_loss_history(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
