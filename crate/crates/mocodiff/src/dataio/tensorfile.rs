//! MRTN: a self-describing tensor container.
//! Layout: magic "MRTN", version u8, dtype u8 (0 = f32), ndim u8,
//! dims as u32 little-endian, then the row-major f32 payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

const MAGIC: &[u8; 4] = b"MRTN";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_tensor(path: impl AsRef<Path>, t: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode(t: &ImageTensor) -> Result<Vec<u8>> {
    if t.is_empty() {
        return Err(Error::EmptyImage);
    }
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::InvalidArgument("too many dims".into()));
    }
    let mut out = Vec::with_capacity(7 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        let d32 = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dim {d} overflows u32")))?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::format(path, reason))
}

fn decode(bytes: &[u8]) -> std::result::Result<ImageTensor, String> {
    if bytes.len() < 7 {
        return Err("truncated: missing header".into());
    }
    if &bytes[0..4] != MAGIC {
        return Err(format!("bad magic {:?}", &bytes[0..4]));
    }
    if bytes[4] != VERSION {
        return Err(format!("unsupported version {}", bytes[4]));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(format!("unsupported dtype code {}", bytes[5]));
    }
    let ndim = bytes[6] as usize;
    let dims_end = 7 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err("truncated: missing dims".into());
    }
    let mut shape = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let off = 7 + 4 * d;
        let v = u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        if v == 0 {
            return Err("empty tensor".into());
        }
        shape.push(v as usize);
    }
    if ndim == 0 {
        return Err("empty tensor".into());
    }
    let n: usize = shape.iter().product();
    if bytes.len() < dims_end + 4 * n {
        return Err(format!("truncated: payload needs {} bytes", 4 * n));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = dims_end + 4 * i;
        let v = f32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        data.push(v as f64);
    }
    ImageTensor::from_vec(shape, data).map_err(|e| e.to_string())
}
