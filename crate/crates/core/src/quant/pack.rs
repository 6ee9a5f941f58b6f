//! Packed code arrays: one code per weight, `bits[r]` bits each, LSB-first
//! within little-endian bytes, every row starting on a byte boundary.

use crate::error::{Error, Result};

pub fn packed_row_bytes(cols: usize, bits: u32) -> usize {
    (cols * bits as usize).div_ceil(8)
}

pub fn pack_rows(codes: &[u32], cols: usize, row_bits: &[u32]) -> Result<Vec<u8>> {
    if codes.len() != cols * row_bits.len() {
        return Err(Error::LengthMismatch {
            expected: cols * row_bits.len(),
            found: codes.len(),
        });
    }
    let total: usize = row_bits.iter().map(|&b| packed_row_bytes(cols, b)).sum();
    let mut out = Vec::with_capacity(total);
    for (row, &bits) in codes.chunks_exact(cols.max(1)).zip(row_bits) {
        let mut bytes = vec![0u8; packed_row_bytes(cols, bits)];
        for (i, &code) in row.iter().enumerate() {
            if bits < 32 && code >> bits != 0 {
                return Err(Error::InvalidCode { code, bits });
            }
            for b in 0..bits as usize {
                if code >> b & 1 == 1 {
                    let pos = i * bits as usize + b;
                    bytes[pos / 8] |= 1 << (pos % 8);
                }
            }
        }
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

pub fn unpack_rows(bytes: &[u8], cols: usize, row_bits: &[u32]) -> Result<Vec<u32>> {
    let needed: usize = row_bits.iter().map(|&b| packed_row_bytes(cols, b)).sum();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::LengthMismatch {
            expected: needed,
            found: bytes.len(),
        });
    }
    let mut codes = Vec::with_capacity(cols * row_bits.len());
    let mut offset = 0;
    for &bits in row_bits {
        let row = &bytes[offset..offset + packed_row_bytes(cols, bits)];
        for i in 0..cols {
            let mut code = 0u32;
            for b in 0..bits as usize {
                let pos = i * bits as usize + b;
                code |= u32::from(row[pos / 8] >> (pos % 8) & 1) << b;
            }
            codes.push(code);
        }
        offset += row.len();
    }
    Ok(codes)
}
