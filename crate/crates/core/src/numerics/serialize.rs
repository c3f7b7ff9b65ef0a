//! Binary and JSON encodings of [`Tensor`].
//!
//! Binary layout (little-endian): `rank: u32`, `extents: u32 × rank`,
//! `dtype: u8` (0 = f64, 1 = f32), then the row-major payload.

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const DTYPE_F64: u8 = 0;
pub const DTYPE_F32: u8 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    w.write_all(&[DTYPE_F64])?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let shape = (0..rank).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(truncated)?;
    let n: usize = shape.iter().product();
    let data = match tag[0] {
        DTYPE_F64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(truncated)?;
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        }
        DTYPE_F32 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(truncated)?;
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }
        other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    };
    Tensor::new(shape, data)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated tensor data: {e}"))
}

/// JSON form used in mel/rhythm dumps: the payload is base64 of the
/// little-endian f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorJson {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl From<&Tensor> for TensorJson {
    fn from(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            data: STANDARD.encode(bytes),
        }
    }
}

impl TryFrom<&TensorJson> for Tensor {
    type Error = Error;

    fn try_from(j: &TensorJson) -> Result<Self> {
        if j.dtype != "f64" {
            return Err(Error::InvalidArgument(format!("unsupported dtype {}", j.dtype)));
        }
        let bytes = STANDARD
            .decode(&j.data)
            .map_err(|e| Error::InvalidArgument(format!("bad base64 payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidArgument("payload not a multiple of 8 bytes".into()));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(j.shape.clone(), data)
    }
}
