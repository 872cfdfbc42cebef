//! ZTF tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "ZTF1" | rank: u8 (2 or 3) | dims: rank x u32 | payload: f32, row-major
//! ```
//!
//! Rank 2 stores `height, width`; rank 3 stores `layers, height, width` with
//! the payload layer-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Grid3D};

pub const MAGIC: &[u8; 4] = b"ZTF1";

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Rank2(Grid2D),
    Rank3(Grid3D),
}

impl Tensor {
    pub fn rank(&self) -> u8 {
        match self {
            Tensor::Rank2(_) => 2,
            Tensor::Rank3(_) => 3,
        }
    }

    pub fn into_grid2(self) -> Result<Grid2D> {
        match self {
            Tensor::Rank2(g) => Ok(g),
            Tensor::Rank3(_) => Err(Error::shape("expected a rank-2 tensor, found rank 3")),
        }
    }

    pub fn into_grid3(self) -> Result<Grid3D> {
        match self {
            Tensor::Rank3(g) => Ok(g),
            Tensor::Rank2(_) => Err(Error::shape("expected a rank-3 tensor, found rank 2")),
        }
    }
}

impl From<Grid2D> for Tensor {
    fn from(g: Grid2D) -> Self {
        Tensor::Rank2(g)
    }
}

impl From<Grid3D> for Tensor {
    fn from(g: Grid3D) -> Self {
        Tensor::Rank3(g)
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rank = bytes[4];
    if rank != 2 && rank != 3 {
        return Err(Error::Rank(rank));
    }
    let header = 5 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape("tensor element count overflows"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::shape("tensor byte length overflows"))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let data: Vec<f32> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    match dims[..] {
        [h, w] => Grid2D::new(h, w, data).map(Tensor::Rank2),
        [l, h, w] => Grid3D::new(l, h, w, data).map(Tensor::Rank3),
        _ => unreachable!("rank checked above"),
    }
}

pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let (dims, data): (Vec<usize>, &[f32]) = match tensor {
        Tensor::Rank2(g) => (vec![g.height(), g.width()], g.as_slice()),
        Tensor::Rank3(g) => (vec![g.layers(), g.height(), g.width()], g.as_slice()),
    };
    let mut out = Vec::with_capacity(5 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(dims.len() as u8);
    for d in dims {
        let d = u32::try_from(d).expect("grid dimension exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&super::read_bytes(path.as_ref())?)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_tensor(tensor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_2x2() {
        let g = Grid2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::from(g);
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
    }

    #[test]
    fn round_trip_1x1_zero() {
        let t = Tensor::from(Grid2D::new(1, 1, vec![0.0]).unwrap());
        assert_eq!(decode_tensor(&encode_tensor(&t)).unwrap(), t);
    }

    #[test]
    fn exact_layout() {
        let t = Tensor::from(Grid2D::new(1, 2, vec![1.0, -2.0]).unwrap());
        let bytes = encode_tensor(&t);
        let mut expected = b"ZTF1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        expected.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensor(&Tensor::from(Grid2D::zeros(1, 1).unwrap()));
        bytes[0] = b'X';
        let err = decode_tensor(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");
        assert!(matches!(decode_tensor(b"ZT"), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode_tensor(&Tensor::from(Grid2D::zeros(2, 3).unwrap()));
        assert!(matches!(
            decode_tensor(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            decode_tensor(&bytes[..7]),
            Err(Error::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_tensor(&long), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn rejects_bad_rank() {
        assert!(matches!(
            decode_tensor(b"ZTF1\x01\x01\x00\x00\x00"),
            Err(Error::Rank(1))
        ));
        assert!(matches!(decode_tensor(b"ZTF1\x04"), Err(Error::Rank(4))));
    }

    #[test]
    fn rejects_non_finite() {
        let mut bytes = b"ZTF1\x02\x01\x00\x00\x00\x01\x00\x00\x00".to_vec();
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(Error::NonFinite(0))));
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let bytes = b"ZTF1\x03\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff";
        assert!(decode_tensor(bytes).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ztf");
        let t = Tensor::from(Grid3D::new(2, 1, 2, vec![0.5, 1.5, -2.5, 3.25]).unwrap());
        write_tensor(&t, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            l in 1usize..4, h in 1usize..6, w in 1usize..6,
            vals in proptest::collection::vec(-1e30f32..1e30, 1..200),
            rank3 in any::<bool>(),
        ) {
            let n = if rank3 { l * h * w } else { h * w };
            let data: Vec<f32> = (0..n).map(|i| vals[i % vals.len()]).collect();
            let t = if rank3 {
                Tensor::from(Grid3D::new(l, h, w, data).unwrap())
            } else {
                Tensor::from(Grid2D::new(h, w, data).unwrap())
            };
            let bytes = encode_tensor(&t);
            prop_assert_eq!(encode_tensor(&decode_tensor(&bytes).unwrap()), bytes);
        }
    }
}
