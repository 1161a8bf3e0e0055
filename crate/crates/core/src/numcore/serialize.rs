//! Binary tensor blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TNSR" | version: u8 | name_len: u32 | name: utf-8 | rank: u32 | dims: u64 * rank | payload: f64 * numel
//! ```
//!
//! Values are widened to `f64` on write, so `f32` tensors round-trip exactly too.

use std::io::{Read, Write};

use super::{NumError, Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_FORMAT_VERSION: u8 = 1;

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, name: &str, tensor: &Tensor<T>) -> std::io::Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&[TENSOR_FORMAT_VERSION])?;
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in tensor.data() {
        out.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_tensor<T: Scalar>(name: &str, tensor: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + name.len() + 8 * tensor.numel());
    write_tensor(&mut buf, name, tensor).expect("writing to a Vec cannot fail");
    buf
}

/// Parses one blob; the input must contain exactly one tensor and nothing else.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<(String, Tensor<T>), NumError> {
    let mut cursor = bytes;
    let mut magic = [0u8; 4];
    take(&mut cursor, &mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(NumError::Corrupt("bad magic".into()));
    }
    let mut version = [0u8; 1];
    take(&mut cursor, &mut version)?;
    if version[0] != TENSOR_FORMAT_VERSION {
        return Err(NumError::Version {
            found: version[0],
            expected: TENSOR_FORMAT_VERSION,
        });
    }
    let name_len = read_u32(&mut cursor)? as usize;
    if name_len > cursor.len() {
        return Err(NumError::Corrupt("truncated name".into()));
    }
    let mut name = vec![0u8; name_len];
    take(&mut cursor, &mut name)?;
    let name = String::from_utf8(name).map_err(|_| NumError::Corrupt("name is not utf-8".into()))?;
    let rank = read_u32(&mut cursor)? as usize;
    if rank > 8 {
        return Err(NumError::Corrupt(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(&mut cursor)? as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NumError::Corrupt("dimension overflow".into()))?;
    let expected = numel
        .checked_mul(8)
        .ok_or_else(|| NumError::Corrupt("dimension overflow".into()))?;
    if cursor.len() != expected {
        return Err(NumError::Corrupt(format!(
            "tensor `{name}` expects {expected} payload bytes, found {}",
            cursor.len()
        )));
    }
    let data = cursor
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    let tensor = Tensor::new(shape, data)?;
    Ok((name, tensor))
}

pub fn read_tensor<T: Scalar, R: Read>(input: &mut R) -> Result<(String, Tensor<T>), NumError> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| NumError::Corrupt(e.to_string()))?;
    decode_tensor(&bytes)
}

fn take(cursor: &mut &[u8], buf: &mut [u8]) -> Result<(), NumError> {
    if cursor.len() < buf.len() {
        return Err(NumError::Corrupt("truncated header".into()));
    }
    let (head, tail) = cursor.split_at(buf.len());
    buf.copy_from_slice(head);
    *cursor = tail;
    Ok(())
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32, NumError> {
    let mut b = [0u8; 4];
    take(cursor, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cursor: &mut &[u8]) -> Result<u64, NumError> {
    let mut b = [0u8; 8];
    take(cursor, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
