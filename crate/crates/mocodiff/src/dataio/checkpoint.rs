//! MRCK: model checkpoints. Layout: magic "MRCK", version u8, u32 length-
//! prefixed UTF-8 JSON config block, f32 little-endian parameter payload
//! (plus Adam moments when an optimizer state is saved), trailing CRC32 of
//! the payload. Training runs in f64; checkpoints store f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{build_unet, AdamState, UNet, UNetConfig};

const MAGIC: &[u8; 4] = b"MRCK";
const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    arch: UNetConfig,
    param_count: usize,
    optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerConfig {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &UNet,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let path = path.as_ref();
    let config = CheckpointConfig {
        arch: *model.config(),
        param_count: model.param_count(),
        optimizer: optimizer.map(|o| OptimizerConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step_count: o.step_count,
        }),
    };
    let json = serde_json::to_vec(&config)?;

    let mut payload: Vec<u8> = Vec::with_capacity(4 * model.param_count());
    let push_f32 = |values: &[f64], payload: &mut Vec<u8>| {
        for &v in values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    push_f32(model.params(), &mut payload);
    if let Some(o) = optimizer {
        push_f32(&o.m, &mut payload);
        push_f32(&o.v, &mut payload);
    }
    let crc = crc32fast::hash(&payload);

    let mut out = Vec::with_capacity(9 + json.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNet, Option<AdamState>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 {
        return Err(Error::CorruptCheckpoint("file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::CorruptCheckpoint(format!("bad magic {:?}", &bytes[0..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {}", bytes[4])));
    }
    let json_len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let json_end = 9 + json_len;
    if bytes.len() < json_end + 4 {
        return Err(Error::CorruptCheckpoint("truncated config block".into()));
    }
    let config: CheckpointConfig = serde_json::from_slice(&bytes[9..json_end])?;

    let payload = &bytes[json_end..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes([
        bytes[bytes.len() - 4],
        bytes[bytes.len() - 3],
        bytes[bytes.len() - 2],
        bytes[bytes.len() - 1],
    ]);
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::CorruptCheckpoint("payload CRC mismatch".into()));
    }

    let vectors = if config.optimizer.is_some() { 3 } else { 1 };
    if payload.len() != 4 * config.param_count * vectors {
        return Err(Error::CorruptCheckpoint(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            4 * config.param_count * vectors
        )));
    }
    let read_f64s = |start: usize, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| {
                let off = start + 4 * i;
                f32::from_le_bytes([
                    payload[off],
                    payload[off + 1],
                    payload[off + 2],
                    payload[off + 3],
                ]) as f64
            })
            .collect()
    };

    let mut model = build_unet(config.arch)?;
    if model.param_count() != config.param_count {
        return Err(Error::CorruptCheckpoint(format!(
            "config claims {} parameters, arch implies {}",
            config.param_count,
            model.param_count()
        )));
    }
    model.set_params(read_f64s(0, config.param_count))?;

    let optimizer = config.optimizer.map(|o| {
        let mut state = AdamState::new(config.param_count, o.lr);
        state.beta1 = o.beta1;
        state.beta2 = o.beta2;
        state.eps = o.eps;
        state.step_count = o.step_count;
        state.m = read_f64s(4 * config.param_count, config.param_count);
        state.v = read_f64s(8 * config.param_count, config.param_count);
        state
    });
    Ok((model, optimizer))
}
