//! `.dtct` tensor files and binary PGM export.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DTCT"  version:u8=1  dtype:u8=1 (f32)  rank:u8  reserved:u8=0
//! rank x u32 extents
//! row-major f32 payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DTCT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER: usize = 8;

/// Serialize as a `.dtct` byte stream. 64-bit tensors are narrowed to f32.
pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, t.rank() as u8, 0]);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

/// Parse one tensor from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER {
        return Err(Error::TruncatedPayload {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let (version, dtype, rank, reserved) = (bytes[4], bytes[5], bytes[6] as usize, bytes[7]);
    if version != VERSION {
        return Err(Error::Unsupported {
            what: "version",
            value: version as u32,
        });
    }
    if dtype != DTYPE_F32 {
        return Err(Error::Unsupported {
            what: "dtype",
            value: dtype as u32,
        });
    }
    if reserved != 0 {
        return Err(Error::Unsupported {
            what: "reserved byte",
            value: reserved as u32,
        });
    }
    if rank == 0 {
        return Err(Error::Unsupported { what: "rank", value: 0 });
    }
    let dims_end = HEADER + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::TruncatedPayload {
            expected: dims_end,
            found: bytes.len(),
        });
    }
    let extents: Vec<u32> = bytes[HEADER..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let payload = extents
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or_else(|| Error::ExtentOverflow(extents.clone()))?;
    let dims: Vec<usize> = extents.iter().map(|&d| d as usize).collect();
    let found = bytes.len() - dims_end;
    if found < payload {
        return Err(Error::TruncatedPayload {
            expected: payload,
            found,
        });
    }
    let data = bytes[dims_end..dims_end + payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((Tensor::from_vec(&dims, data)?, dims_end + payload))
}

/// Parse a complete `.dtct` stream; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::TruncatedPayload {
            expected: used - bytes_before_payload(&t),
            found: bytes.len() - bytes_before_payload(&t),
        });
    }
    Ok(t)
}

fn bytes_before_payload(t: &Tensor<f32>) -> usize {
    HEADER + 4 * t.rank()
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Min-max rescale to 0..=255; a constant image maps to 128.
pub fn to_gray<T: Scalar>(img: &Tensor<T>) -> Vec<u8> {
    let (lo, hi) = (img.min().as_f64(), img.max().as_f64());
    if hi <= lo {
        return vec![128; img.numel()];
    }
    img.data()
        .iter()
        .map(|&v| ((v.as_f64() - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary PGM bytes for a `[H, W]` image or mask.
pub fn encode_pgm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    if img.rank() != 2 {
        return Err(Error::contract(
            "export_pgm",
            format!("expected a rank-2 image, got {}", img.shape()),
        ));
    }
    let (h, w) = (img.dims()[0], img.dims()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(to_gray(img));
    Ok(out)
}

pub fn export_pgm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

/// Write raw 8-bit pixels as a PGM.
pub fn write_pgm_bytes(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::contract("write_pgm_bytes", "pixel count does not match extents"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0f32, -2.5]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..8], b"DTCT\x01\x01\x02\x00");
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
        assert_eq!(decode_tensor(&b).unwrap(), t);
    }

    #[test]
    fn distinct_errors() {
        let t = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut b = encode_tensor(&t);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic)));
        let short = &b[..b.len() - 1];
        assert!(matches!(decode_tensor(short), Err(Error::TruncatedPayload { expected: 12, found: 11 })));
        b.push(0);
        assert!(matches!(decode_tensor(&b), Err(Error::TruncatedPayload { expected: 12, found: 13 })));
        let mut huge = b"DTCT\x01\x01\x03\x00".to_vec();
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_tensor(&huge), Err(Error::ExtentOverflow(_))));
    }

    #[test]
    fn pgm_rescale() {
        let m = Tensor::from_vec(&[1, 3], vec![0.0f32, 1.0, 0.0]).unwrap();
        let b = encode_pgm(&m).unwrap();
        assert!(b.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&b[b.len() - 3..], &[0, 255, 0]);
        let c = encode_pgm(&Tensor::<f32>::full(&[2, 2], 0.3)).unwrap();
        assert_eq!(&c[c.len() - 4..], &[128; 4]);
        assert!(encode_pgm(&Tensor::<f32>::zeros(&[1, 2, 2])).is_err());
    }
}
