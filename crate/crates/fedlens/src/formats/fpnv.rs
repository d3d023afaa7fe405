use std::path::Path;

use fedlens_core::nn::{ParamVector, TensorSlot};

use super::{DecodeError, Reader};
use crate::error::{CliError, Result};

pub const FPNV_VERSION: u16 = 1;

/// Serializes every tensor slot as `(layer u32, ndims u8, dims u32.., f64 LE..)`
/// after the `FPNV` magic, version, and slot count.
pub fn encode_params(p: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * p.len() + 16 * p.layout().len());
    out.extend_from_slice(b"FPNV");
    out.extend_from_slice(&FPNV_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.layout().len() as u32).to_le_bytes());
    for slot in p.layout() {
        out.extend_from_slice(&(slot.layer as u32).to_le_bytes());
        out.push(slot.shape.len() as u8);
        for &d in &slot.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.values()[slot.offset..slot.offset + slot.numel()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector, DecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(b"FPNV")?;
    let version = r.u16_le("version")?;
    if version != FPNV_VERSION {
        return Err((4, format!("unsupported version {version}")));
    }
    let count = r.u32_le("tensor count")? as usize;
    let mut layout = Vec::with_capacity(count.min(1 << 16));
    let mut values = Vec::new();
    for _ in 0..count {
        let layer = r.u32_le("layer index")? as usize;
        let ndims = r.u8("ndims")? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32_le("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let at = r.pos();
        let raw = r.take(numel.checked_mul(8).ok_or((at, "tensor too large".to_string()))?, "tensor payload")?;
        layout.push(TensorSlot { layer, shape, offset: values.len() });
        values.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    }
    r.finish("last tensor")?;
    ParamVector::from_parts(layout, values).map_err(|e| (r.pos(), e.to_string()))
}

pub fn write_params(path: &Path, p: &ParamVector) -> Result<()> {
    std::fs::write(path, encode_params(p)).map_err(|e| CliError::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_params(&bytes).map_err(|(offset, msg)| CliError::Format { path: path.into(), offset, msg })
}
