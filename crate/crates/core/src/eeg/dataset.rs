//! In-memory DE datasets and the EEGF file format.
//!
//! ```text
//! "EEGF"  u32 version = 1
//! u32 n, u32 c, u32 t, u32 num_samples, u32 num_subjects
//! num_samples x { u16 subject_id, u8 label, u8 pad = 0, n·c·t f32 (row-major) }
//! ```
//!
//! All integers little-endian. `num_subjects` counts distinct subject ids.

use std::collections::BTreeSet;
use std::path::Path;

use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::samples::Samples;
use crate::tensor::Tensor;

pub const EEGF_MAGIC: &[u8; 4] = b"EEGF";
pub const EEGF_VERSION: u32 = 1;

/// One sample with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    /// `[n, c, t]`
    pub x: Tensor,
    pub label: u8,
    pub subject_id: u16,
}

/// Feature samples of a fixed shape, stored as `f32` like the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dims: [usize; 3],
    subjects: Vec<u16>,
    labels: Vec<u8>,
    features: Vec<f32>,
}

impl Dataset {
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(Error::Data(format!("invalid sample dims {dims:?}")));
        }
        Ok(Self {
            dims,
            subjects: Vec::new(),
            labels: Vec::new(),
            features: Vec::new(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Appends one sample; `values` are narrowed to `f32`.
    pub fn push(&mut self, subject_id: u16, label: u8, values: &[f64]) -> Result<()> {
        if values.len() != self.sample_len() {
            return Err(Error::shape(
                "dataset",
                format!("{} values for samples of dims {:?}", values.len(), self.dims),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature for subject {subject_id}")));
        }
        self.subjects.push(subject_id);
        self.labels.push(label);
        self.features.extend(values.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn subject(&self, i: usize) -> u16 {
        self.subjects[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.features[i * len..(i + 1) * len]
    }

    pub fn sample(&self, i: usize) -> FeatureSample {
        let values = self.features(i).iter().map(|&v| v as f64).collect();
        FeatureSample {
            x: Tensor::new(&self.dims, values).expect("dims validated"),
            label: self.labels[i],
            subject_id: self.subjects[i],
        }
    }

    /// Distinct subject ids in ascending order.
    pub fn subject_ids(&self) -> Vec<u16> {
        self.subjects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Indices of samples whose subject is in `subjects`, in dataset order.
    pub fn indices_of(&self, subjects: &[u16]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| subjects.contains(&self.subjects[i]))
            .collect()
    }

    /// The selected samples as an `f64` batch.
    pub fn to_samples(&self, indices: &[usize]) -> Result<Samples> {
        if indices.is_empty() {
            return Err(Error::Data("no samples selected".into()));
        }
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample {i} out of range ({})", self.len())));
            }
            data.extend(self.features(i).iter().map(|&v| v as f64));
        }
        let [n, c, t] = self.dims;
        let x = Tensor::new(&[indices.len(), n, c, t], data)?;
        Samples::new(x, indices.iter().map(|&i| self.labels[i] as usize).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.len() * (4 + 4 * self.sample_len()));
        out.extend_from_slice(EEGF_MAGIC);
        out.extend_from_slice(&EEGF_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.subject_ids().len() as u32).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(&self.subjects[i].to_le_bytes());
            out.push(self.labels[i]);
            out.push(0);
            for v in self.features(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(EEGF_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != EEGF_VERSION {
            return Err(Error::Integrity {
                offset: at,
                detail: format!("unsupported EEGF version {version}"),
            });
        }
        let at = r.offset();
        let n = r.u32("n")? as usize;
        let c = r.u32("c")? as usize;
        let t = r.u32("t")? as usize;
        let mut ds = Self::new([n, c, t]).map_err(|e| Error::Integrity {
            offset: at,
            detail: e.to_string(),
        })?;
        let count = r.u32("sample count")? as usize;
        let subjects_at = r.offset();
        let declared_subjects = r.u32("subject count")? as usize;
        let len = ds.sample_len();
        let record = 4 + 4 * len;
        if r.remaining() / record < count {
            // Report the offset of the first incomplete record.
            let whole = r.remaining() / record;
            return Err(Error::Integrity {
                offset: r.offset() + (whole * record) as u64,
                detail: format!("truncated: header promises {count} samples, file holds {whole}"),
            });
        }
        ds.subjects.reserve(count);
        ds.labels.reserve(count);
        ds.features.reserve(count * len);
        for _ in 0..count {
            ds.subjects.push(r.u16("subject id")?);
            ds.labels.push(r.u8("label")?);
            r.u8("padding")?;
            for _ in 0..len {
                ds.features.push(r.f32("feature")?);
            }
        }
        r.expect_end()?;
        if ds.subject_ids().len() != declared_subjects {
            return Err(Error::Integrity {
                offset: subjects_at,
                detail: format!(
                    "header declares {declared_subjects} subjects, records contain {}",
                    ds.subject_ids().len()
                ),
            });
        }
        Ok(ds)
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.to_bytes())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let mut ds = Dataset::new([1, 2, 2]).unwrap();
        ds.push(3, 1, &[0.5, -1.0, 2.0, 0.25]).unwrap();
        ds.push(1, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        ds.push(3, 0, &[0.0, 0.0, 0.0, 7.0]).unwrap();
        ds
    }

    #[test]
    fn byte_layout() {
        let bytes = tiny().to_bytes();
        assert_eq!(&bytes[..4], b"EEGF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(&bytes[28..32], &[3, 0, 1, 0]);
        assert_eq!(bytes.len(), 28 + 3 * (4 + 16));
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        assert_eq!(Dataset::from_bytes(&ds.to_bytes()).unwrap(), ds);
        assert_eq!(ds.subject_ids(), vec![1, 3]);
        assert_eq!(ds.indices_of(&[3]), vec![0, 2]);
    }

    #[test]
    fn empty_dataset_is_a_valid_file() {
        let ds = Dataset::new([5, 16, 16]).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(bytes.len(), 28);
        assert!(Dataset::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = tiny().to_bytes();
        bytes[1] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Integrity { offset: 0, .. })));
        let bytes = tiny().to_bytes();
        let err = Dataset::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Integrity { offset: 68, .. }), "{err}");
        let mut bytes = tiny().to_bytes();
        bytes[24] = 9;
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Integrity { offset: 24, .. })));
    }
}
