//! `TPT1` tensor files: magic, dtype byte, rank byte, little-endian u32
//! dims, then the row-major little-endian payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Serializes `t`. With [`DType::F32`] values are rounded to single precision.
pub fn encode_tensor(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::Shape(format!("rank {} does not fit the tensor format", t.ndim())));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + dtype.size() * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Tensor, DType)> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing TPT1 magic".into()));
    }
    let dtype = match bytes[4] {
        1 => DType::F32,
        2 => DType::F64,
        c => return Err(bad(format!("unknown dtype code {c}"))),
    };
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != numel * dtype.size() {
        return Err(bad(format!(
            "payload is {} bytes, dims {shape:?} need {}",
            payload.len(),
            numel * dtype.size()
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
    Ok((t, dtype))
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: DType) -> Result<()> {
    super::write_bytes(path, &encode_tensor(t, dtype)?)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&super::read_bytes(path)?, path).map(|(t, _)| t)
}
