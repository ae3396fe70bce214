//! Binary containers shared by checkpoints and feature files.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "G3CK" | version u32 | blob count u32
//! per blob: name len u32 | UTF-8 name | dtype u8 | rows u32 | cols u32 | payload
//! state len u32 | state bytes (UTF-8 JSON)
//! CRC32 of every preceding byte
//! ```
//!
//! Feature files hold a single matrix:
//!
//! ```text
//! "FTNS" | version u32 | dtype u8 | rows u32 | cols u32 | payload | CRC32
//! ```
//!
//! dtype 0 is `f32`, 1 is `f64`; payloads are row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Array2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"G3CK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 4] = b"FTNS";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Corrupt(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_array(buf: &mut Vec<u8>, dtype: DType, a: &Array2) -> Result<()> {
    buf.push(dtype as u8);
    put_u32(buf, dim_u32(a.rows())?);
    put_u32(buf, dim_u32(a.cols())?);
    match dtype {
        DType::F64 => a
            .data()
            .iter()
            .for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => a
            .data()
            .iter()
            .for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    Ok(())
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} too large")))
}

fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

/// Checks the trailing CRC and returns the body without it.
fn unseal(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    Ok(body)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn array(&mut self) -> Result<(DType, Array2)> {
        let dtype = DType::from_code(self.u8()?)?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Corrupt("dimensions overflow".into()))?;
        let raw = self.take(
            n.checked_mul(dtype.width())
                .ok_or_else(|| Error::Corrupt("dimensions overflow".into()))?,
        )?;
        let data = match dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        Ok((dtype, Array2::from_vec(rows, cols, data)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        Ok(())
    }
}

fn check_header(r: &mut Reader<'_>, magic: &[u8; 4], version: u32) -> Result<()> {
    if r.take(4)? != magic {
        return Err(Error::Corrupt(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let found = r.u32()?;
    if found != version {
        return Err(Error::Version {
            found,
            expected: version,
        });
    }
    Ok(())
}

/// Named `f64` arrays plus an opaque state blob.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub blobs: Vec<(String, Array2)>,
    pub state: Vec<u8>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION);
        put_u32(&mut buf, dim_u32(self.blobs.len())?);
        for (name, arr) in &self.blobs {
            put_u32(&mut buf, dim_u32(name.len())?);
            buf.extend_from_slice(name.as_bytes());
            put_array(&mut buf, DType::F64, arr)?;
        }
        put_u32(&mut buf, dim_u32(self.state.len())?);
        buf.extend_from_slice(&self.state);
        Ok(seal(buf))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = unseal(bytes)?;
        let mut r = Reader { bytes: body, pos: 0 };
        check_header(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Corrupt("blob name is not UTF-8".into()))?
                .to_string();
            let (_, arr) = r.array()?;
            blobs.push((name, arr));
        }
        let len = r.u32()? as usize;
        let state = r.take(len)?.to_vec();
        r.finish()?;
        Ok(Self { blobs, state })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn blob(&self, name: &str) -> Option<&Array2> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }
}

pub fn encode_features(a: &Array2, dtype: DType) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(21 + a.len() * dtype.width());
    buf.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut buf, FEATURE_VERSION);
    put_array(&mut buf, dtype, a)?;
    Ok(seal(buf))
}

pub fn decode_features(bytes: &[u8]) -> Result<Array2> {
    let body = unseal(bytes)?;
    let mut r = Reader { bytes: body, pos: 0 };
    check_header(&mut r, FEATURE_MAGIC, FEATURE_VERSION)?;
    let (_, a) = r.array()?;
    r.finish()?;
    Ok(a)
}

pub fn write_features(path: impl AsRef<Path>, a: &Array2) -> Result<()> {
    fs::write(path, encode_features(a, DType::F64)?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Array2> {
    decode_features(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn truncated_checkpoint_fails_checksum() {
        let ck = Checkpoint {
            blobs: vec![("w".into(), Array2::filled(2, 3, 0.25))],
            state: b"{}".to_vec(),
        };
        let bytes = ck.to_bytes().unwrap();
        for cut in [1, 5, bytes.len() / 2] {
            let err = Checkpoint::from_bytes(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "{err}");
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let ck = Checkpoint::default();
        let mut bytes = ck.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let bytes = seal(bytes);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn f32_features_decode() {
        let a = Array2::from_rows(&[&[0.5, -1.0], &[2.0, 0.125]]);
        let back = decode_features(&encode_features(&a, DType::F32).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    proptest! {
        #[test]
        fn features_round_trip_bitwise(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
            let mut rng = crate::numerics::RngState::new(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| f64::from_bits(rng.next_u64())).filter(|v| v.is_finite()).collect();
            prop_assume!(data.len() == rows * cols);
            let a = Array2::from_vec(rows, cols, data).unwrap();
            let bytes = encode_features(&a, DType::F64).unwrap();
            let b = decode_features(&bytes).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(encode_features(&b, DType::F64).unwrap(), bytes);
        }
    }
}
