//! Dense row-major `f64` tensors and the `MSPT` binary container.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! "MSPT" | rank: u32 | dims: rank x u64 | values: product(dims) x f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MSPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidDims(dims));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            if bytes.len() >= 4 && &bytes[..4] != CONTAINER_MAGIC {
                return Err(bad_magic(&bytes[..4]));
            }
            return Err(Error::Truncated {
                needed: 8,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return Err(bad_magic(&bytes[..4]));
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = 8 + 8 * rank;
        if bytes.len() < header {
            return Err(Error::Truncated {
                needed: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidDims(dims.clone()))?;
        let needed = header + 8 * count;
        let payload = bytes.len() - header;
        if bytes.len() < needed {
            return Err(Error::Truncated {
                needed,
                found: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(Error::LengthMismatch {
                expected: count,
                found: payload / 8,
            });
        }
        let data = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(dims, data)
    }
}

fn bad_magic(found: &[u8]) -> Error {
    Error::BadMagic {
        expected: String::from_utf8_lossy(CONTAINER_MAGIC).into_owned(),
        found: String::from_utf8_lossy(found).into_owned(),
    }
}

pub fn save_tensor_container(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_tensor_container(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_round_trip() {
        let t = Tensor::new(vec![3, 4], vec![1.0; 12]).unwrap();
        let bytes = t.to_bytes();
        let back = Tensor::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bit_exact_values() {
        let vals = [1.5, -0.25, 0.0, 7.0];
        let t = Tensor::new(vec![2, 2], vals.to_vec()).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        for (a, b) in back.data().iter().zip(vals.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = Tensor::new(vec![1], vec![2.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncation_and_mismatch_are_distinct() {
        let bytes = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap().to_bytes();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(Tensor::from_bytes(short), Err(Error::Truncated { .. })));
        assert!(matches!(Tensor::from_bytes(&bytes[..6]), Err(Error::Truncated { .. })));
        let mut long = bytes.clone();
        long.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(
            Tensor::from_bytes(&long),
            Err(Error::LengthMismatch { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }
}
