//! MVST binary tensor files.
//!
//! Layout: magic `MVST`, version byte `0x01`, dtype byte (0 = f64, 1 = f32,
//! 2 = u8), ndim byte, `ndim` little-endian `u32` extents, then the row-major
//! little-endian payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVST";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 0,
    F32 = 1,
    U8 = 2,
}

impl DType {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DType::F64),
            1 => Some(DType::F32),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// A decoded MVST payload.
#[derive(Debug, Clone, PartialEq)]
pub enum MvstArray {
    F64(Tensor),
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl MvstArray {
    pub fn shape(&self) -> &[usize] {
        match self {
            MvstArray::F64(t) => t.shape(),
            MvstArray::F32 { shape, .. } | MvstArray::U8 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            MvstArray::F64(_) => DType::F64,
            MvstArray::F32 { .. } => DType::F32,
            MvstArray::U8 { .. } => DType::U8,
        }
    }

    /// Widens any payload to an `f64` tensor.
    pub fn to_tensor(&self) -> Tensor {
        match self {
            MvstArray::F64(t) => t.clone(),
            MvstArray::F32 { shape, data } => {
                Tensor::new(shape.clone(), data.iter().map(|&x| f64::from(x)).collect()).expect("validated shape")
            }
            MvstArray::U8 { shape, data } => {
                Tensor::new(shape.clone(), data.iter().map(|&x| f64::from(x)).collect()).expect("validated shape")
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(7 + 4 * shape.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.push(u8::try_from(shape.len()).expect("rank fits in a byte"));
        for &e in shape {
            out.extend_from_slice(&u32::try_from(e).expect("extent fits in u32").to_le_bytes());
        }
        match self {
            MvstArray::F64(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            MvstArray::F32 { data, .. } => data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            MvstArray::U8 { data, .. } => out.extend_from_slice(data),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err("missing MVST magic".into());
        }
        if bytes[4] != VERSION {
            return Err(format!("unsupported version {:#04x}", bytes[4]));
        }
        let dtype = DType::from_byte(bytes[5]).ok_or_else(|| format!("unknown dtype byte {}", bytes[5]))?;
        let ndim = bytes[6] as usize;
        let header = 7 + 4 * ndim;
        if bytes.len() < header {
            return Err("truncated header".into());
        }
        let shape: Vec<usize> = bytes[7..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let payload = &bytes[header..];
        if payload.len() != n * dtype.width() {
            return Err(format!(
                "payload is {} bytes, expected {} for shape {:?}",
                payload.len(),
                n * dtype.width(),
                shape
            ));
        }
        Ok(match dtype {
            DType::F64 => {
                let data = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                MvstArray::F64(Tensor::new(shape, data).map_err(|e| e.to_string())?)
            }
            DType::F32 => MvstArray::F32 {
                shape,
                data: payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            },
            DType::U8 => MvstArray::U8 {
                shape,
                data: payload.to_vec(),
            },
        })
    }
}

pub fn write(path: &Path, array: &MvstArray) -> Result<()> {
    fs::write(path, array.encode()).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<MvstArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    MvstArray::decode(&bytes).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write(path, &MvstArray::F64(t.clone()))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Ok(read(path)?.to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_exact() {
        let a = MvstArray::U8 {
            shape: vec![2, 3],
            data: vec![0, 1, 2, 3, 4, 5],
        };
        let b = a.encode();
        assert_eq!(&b[..7], &[b'M', b'V', b'S', b'T', 0x01, 2, 2]);
        assert_eq!(&b[7..15], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[15..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(MvstArray::decode(b"MVSX\x01\x00\x00").is_err());
        let mut b = MvstArray::F64(Tensor::zeros(&[3])).encode();
        b.pop();
        assert!(MvstArray::decode(&b).unwrap_err().contains("payload"));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = MvstArray::decode(&MvstArray::F64(t.clone()).encode()).unwrap();
            prop_assert_eq!(back, MvstArray::F64(t));
        }

        #[test]
        fn f32_round_trip(data in prop::collection::vec(-1e6f32..1e6, 1..40)) {
            let a = MvstArray::F32 { shape: vec![data.len()], data };
            prop_assert_eq!(MvstArray::decode(&a.encode()).unwrap(), a);
        }
    }
}
