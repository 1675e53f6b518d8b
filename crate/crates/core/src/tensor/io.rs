//! RTEN tensor files.
//!
//! Layout: `b"RTEN"`, version byte (1), dtype byte (0 = f32, 1 = f64), rank
//! byte, one zero padding byte, `rank` little-endian `u32` dims, then the
//! row-major little-endian payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"RTEN";
const VERSION: u8 = 1;

impl<T: Scalar> Tensor<T> {
    pub fn to_rten_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + T::BYTES * self.numel());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(T::DTYPE);
        out.push(self.rank() as u8);
        out.push(0);
        for &d in self.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_rten_bytes(bytes: &[u8]) -> Result<Self> {
        let parse = |offset: usize, msg: String| Error::Parse { offset, msg };
        if bytes.len() < 8 {
            return Err(parse(bytes.len(), "truncated RTEN header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(parse(0, format!("bad magic {:?}", &bytes[..4])));
        }
        if bytes[4] != VERSION {
            return Err(parse(4, format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != T::DTYPE {
            return Err(parse(
                5,
                format!("dtype {} does not match requested {}", bytes[5], T::DTYPE),
            ));
        }
        let rank = bytes[6] as usize;
        let dims_end = 8 + 4 * rank;
        if bytes.len() < dims_end {
            return Err(parse(bytes.len(), format!("truncated dims: rank {rank}")));
        }
        let shape: Vec<usize> = bytes[8..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let expected = dims_end + n * T::BYTES;
        if bytes.len() != expected {
            return Err(parse(
                bytes.len().min(expected),
                format!(
                    "payload for shape {shape:?} needs {expected} bytes, file has {}",
                    bytes.len()
                ),
            ));
        }
        let data = bytes[dims_end..]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        Tensor::new(&shape, data)
    }
}

pub fn write_rten<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, t.to_rten_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_rten<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_rten_bytes(&bytes)
}
