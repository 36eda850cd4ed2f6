//! INCW weight files.
//!
//! ```text
//! "INCW"  u32 version  u32 count
//! count x { u16 name_len, name bytes (UTF-8), u8 rank, rank x u32 dim, values }
//! ```
//!
//! All integers little-endian. Version 1 stores values as `f32`, version 2
//! as `f64`. Parameters live in `f64`, so only version 2 round-trips them
//! bit-exactly; version 1 is the compact interchange form.

use std::path::Path;

use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"INCW";

/// Value encoding of a weight file, identified by its format version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFormat {
    F32 = 1,
    F64 = 2,
}

impl WeightFormat {
    fn from_version(version: u32) -> Option<Self> {
        match version {
            1 => Some(WeightFormat::F32),
            2 => Some(WeightFormat::F64),
            _ => None,
        }
    }
}

pub fn encode(entries: &[(String, &Tensor)], format: WeightFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(format as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Config(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            match format {
                WeightFormat::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                WeightFormat::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    let format = WeightFormat::from_version(version).ok_or_else(|| Error::Integrity {
        offset: at,
        detail: format!("unsupported INCW version {version}"),
    })?;
    let count = r.u32("record count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.offset();
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.bytes(name_len, "name")?)
            .map_err(|_| Error::Integrity {
                offset: at,
                detail: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel.min(1 << 24));
        for _ in 0..numel {
            data.push(match format {
                WeightFormat::F32 => r.f32(&name)? as f64,
                WeightFormat::F64 => r.f64(&name)?,
            });
        }
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::Integrity {
            offset: at,
            detail: format!("record `{name}`: {e}"),
        })?;
        entries.push((name, tensor));
    }
    r.expect_end()?;
    Ok(entries)
}

pub fn write(path: &Path, entries: &[(String, &Tensor)], format: WeightFormat) -> Result<()> {
    std::fs::write(path, encode(entries, format)?)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("a.weight".into(), Tensor::from_fn(&[2, 3], |i| i as f64 / 7.0)),
            ("a.bias".into(), Tensor::full(&[3], -0.1)),
        ]
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let entries = sample();
        let refs: Vec<(String, &Tensor)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes = encode(&refs, WeightFormat::F64).unwrap();
        assert_eq!(decode(&bytes).unwrap(), entries);
    }

    #[test]
    fn f32_layout_matches_header_description() {
        let t = Tensor::new(&[1], vec![1.5]).unwrap();
        let bytes = encode(&[("x".into(), &t)], WeightFormat::F32).unwrap();
        let mut expected = b"INCW".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'x');
        expected.push(1);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap()[0].1.data(), &[1.5]);
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let entries = sample();
        let refs: Vec<(String, &Tensor)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes = encode(&refs, WeightFormat::F64).unwrap();
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode(&[], WeightFormat::F64).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Integrity { offset: 0, .. })));
    }
}
