//! NIfTI-1 single-file reader (uncompressed .nii, datatypes uint8/int16/
//! float32) and a minimal fixture writer for tests. qform/sform are ignored;
//! axes are taken as stored. Big-endian and .nii.gz files are out of scope.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::ImageTensor;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// A parsed volume with intensity scaling already applied.
#[derive(Debug, Clone)]
pub struct NiftiVolume {
    /// Extents (x, y, z); trailing dims of 1 are dropped.
    pub dims: Vec<usize>,
    /// Voxels as [X,Y,Z] row-major f64, scl_slope/scl_inter applied.
    pub voxels: ImageTensor,
    /// Voxel spacing in mm per axis.
    pub pixdim: Vec<f64>,
    pub scl_slope: f64,
    pub scl_inter: f64,
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Parse an uncompressed single-file NIfTI-1 volume.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti_bytes(&bytes).map_err(|reason| Error::format(path, reason))
}

fn read_nifti_bytes(bytes: &[u8]) -> std::result::Result<NiftiVolume, String> {
    if bytes.len() < HEADER_SIZE {
        return Err(format!("truncated header: {} bytes", bytes.len()));
    }
    let sizeof_hdr = rd_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(format!("bad sizeof_hdr {sizeof_hdr}"));
    }
    if &bytes[344..348] != MAGIC {
        return Err(format!("bad magic {:?}", &bytes[344..348]));
    }
    let ndim = rd_i16(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(format!("bad dim[0] {ndim}"));
    }
    let mut dims = Vec::new();
    for d in 1..=ndim as usize {
        let extent = rd_i16(bytes, 40 + 2 * d);
        if extent < 1 {
            return Err(format!("bad dim[{d}] {extent}"));
        }
        if d <= 3 {
            dims.push(extent as usize);
        } else if extent != 1 {
            return Err(format!("unsupported dim[{d}] {extent} (more than 3 axes)"));
        }
    }
    let datatype = rd_i16(bytes, 70);
    let voxel_bytes = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(format!("unsupported datatype {other}")),
    };
    let pixdim: Vec<f64> =
        (1..=dims.len()).map(|d| rd_f32(bytes, 76 + 4 * d) as f64).collect();
    let vox_offset = rd_f32(bytes, 108);
    if vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(format!("bad vox_offset {vox_offset}"));
    }
    let offset = vox_offset as usize;
    let mut scl_slope = rd_f32(bytes, 112) as f64;
    let scl_inter = rd_f32(bytes, 116) as f64;
    if scl_slope == 0.0 {
        scl_slope = 1.0;
    }

    let n_vox: usize = dims.iter().product();
    let need = offset + n_vox * voxel_bytes;
    if bytes.len() < need {
        return Err(format!("truncated payload: {} bytes, need {need}", bytes.len()));
    }
    let raw = &bytes[offset..need];
    let decode = |i: usize| -> f64 {
        match datatype {
            DT_UINT8 => raw[i] as f64,
            DT_INT16 => rd_i16(raw, 2 * i) as f64,
            _ => rd_f32(raw, 4 * i) as f64,
        }
    };

    // File order is x-fastest; ImageTensor is row-major, so transpose.
    let (nx, ny, nz) = (
        dims.first().copied().unwrap_or(1),
        dims.get(1).copied().unwrap_or(1),
        dims.get(2).copied().unwrap_or(1),
    );
    let mut data = vec![0.0; n_vox];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let file_idx = x + y * nx + z * nx * ny;
                let v = decode(file_idx) * scl_slope + scl_inter;
                if !v.is_finite() {
                    return Err(format!("non-finite voxel at file index {file_idx}"));
                }
                data[(x * ny + y) * nz + z] = v;
            }
        }
    }
    let voxels = ImageTensor::from_vec(if dims.is_empty() { vec![1] } else { dims.clone() }, data)
        .map_err(|e| e.to_string())?;
    Ok(NiftiVolume { dims, voxels, pixdim, scl_slope, scl_inter })
}

/// Minimal valid single-file NIfTI-1 bytes: float32 payload in file order
/// (x fastest), vox_offset 352, unit pixdim, no intensity scaling.
pub fn write_nifti_fixture(dims: (usize, usize, usize), payload: &[f32]) -> Result<Vec<u8>> {
    write_nifti_fixture_raw(dims, DT_FLOAT32, &f32_bytes(payload), 0.0, 0.0, payload.len())
}

fn f32_bytes(payload: &[f32]) -> Vec<u8> {
    payload.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn write_nifti_fixture_raw(
    dims: (usize, usize, usize),
    datatype: i16,
    payload_bytes: &[u8],
    scl_slope: f32,
    scl_inter: f32,
    n_values: usize,
) -> Result<Vec<u8>> {
    let (nx, ny, nz) = dims;
    if nx * ny * nz != n_values {
        return Err(Error::ShapeMismatch(format!(
            "dims {dims:?} imply {} voxels, payload has {n_values}",
            nx * ny * nz
        )));
    }
    let mut out = vec![0u8; VOX_OFFSET];
    out[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (d, v) in dim.iter().enumerate() {
        out[40 + 2 * d..42 + 2 * d].copy_from_slice(&v.to_le_bytes());
    }
    out[70..72].copy_from_slice(&datatype.to_le_bytes());
    let bitpix: i16 = match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        _ => 32,
    };
    out[72..74].copy_from_slice(&bitpix.to_le_bytes());
    for d in 0..8 {
        out[76 + 4 * d..80 + 4 * d].copy_from_slice(&1.0f32.to_le_bytes());
    }
    out[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    out[112..116].copy_from_slice(&scl_slope.to_le_bytes());
    out[116..120].copy_from_slice(&scl_inter.to_le_bytes());
    out[344..348].copy_from_slice(MAGIC);
    out.extend_from_slice(payload_bytes);
    Ok(out)
}
