//! From raw recordings to normalized differential-entropy samples.

mod dataset;
mod features;
pub mod filter;
mod norm;
mod synth;

pub use dataset::{read_dataset, write_dataset, Dataset, FeatureSample, EEGF_MAGIC, EEGF_VERSION};
pub use features::{bandpass, de_features, differential_entropy, windowize, VARIANCE_FLOOR};
pub use norm::{zscore_apply, zscore_fit, NormStats, STD_FLOOR};
pub use synth::{synth_generate, synth_recordings, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multichannel recording of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecording {
    pub sample_rate: f64,
    /// One row of samples per channel.
    pub data: Vec<Vec<f64>>,
    pub subject_id: u16,
    pub label: u8,
}

impl RawRecording {
    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Signal(format!("invalid sample rate {}", self.sample_rate)));
        }
        if self.data.is_empty() {
            return Err(Error::Signal("recording has no channels".into()));
        }
        if self.data.iter().any(|row| row.len() != self.len()) {
            return Err(Error::Signal("channels have different lengths".into()));
        }
        if (self.len() as f64) < self.sample_rate {
            return Err(Error::Signal(format!(
                "recording of {} samples is shorter than one second at {} Hz",
                self.len(),
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// A named frequency band. The band `[0, ∞)` means "no filtering".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn new(name: &str, low: f64, high: f64) -> Self {
        Self {
            name: name.to_string(),
            low,
            high,
        }
    }

    pub fn identity() -> Self {
        Self::new("identity", 0.0, f64::INFINITY)
    }

    pub fn is_identity(&self) -> bool {
        self.low == 0.0 && self.high == f64::INFINITY
    }
}

/// Ordered list of bands, one feature plane each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    pub bands: Vec<Band>,
}

impl Default for BandSet {
    fn default() -> Self {
        Self {
            bands: vec![
                Band::new("delta", 1.0, 4.0),
                Band::new("theta", 4.0, 8.0),
                Band::new("alpha", 8.0, 14.0),
                Band::new("beta", 14.0, 31.0),
                Band::new("gamma", 31.0, 50.0),
            ],
        }
    }
}

impl BandSet {
    pub fn identity() -> Self {
        Self {
            bands: vec![Band::identity()],
        }
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Checks every band against the Nyquist frequency and the ordering.
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Signal("band set is empty".into()));
        }
        let nyquist = sample_rate / 2.0;
        for b in &self.bands {
            if b.is_identity() {
                continue;
            }
            if !(b.low > 0.0 && b.low < b.high && b.high < nyquist) {
                return Err(Error::Signal(format!(
                    "band {} ({}-{} Hz) must satisfy 0 < low < high < {nyquist} Hz",
                    b.name, b.low, b.high
                )));
            }
        }
        for pair in self.bands.windows(2) {
            if !pair[0].is_identity() && !pair[1].is_identity() && pair[1].low < pair[0].low {
                return Err(Error::Signal(format!(
                    "bands {} and {} are out of order",
                    pair[0].name, pair[1].name
                )));
            }
        }
        Ok(())
    }

    /// Parses `name:low-high,name:low-high,...`, or `identity`.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec.trim() == "identity" {
            return Ok(Self::identity());
        }
        let bands = spec
            .split(',')
            .map(|item| {
                let bad = || Error::Config(format!("bad band `{item}`, expected name:low-high"));
                let (name, range) = item.trim().split_once(':').ok_or_else(bad)?;
                let (low, high) = range.split_once('-').ok_or_else(bad)?;
                let low: f64 = low.trim().parse().map_err(|_| bad())?;
                let high: f64 = high.trim().parse().map_err(|_| bad())?;
                Ok(Band::new(name.trim(), low, high))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bands })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bands_are_valid_at_200_hz() {
        let bands = BandSet::default();
        assert_eq!(bands.len(), 5);
        bands.validate(200.0).unwrap();
        assert!(bands.validate(90.0).is_err());
    }

    #[test]
    fn band_list_parses() {
        let b = BandSet::parse("alpha:8-14, beta:14-31").unwrap();
        assert_eq!(b.bands[1], Band::new("beta", 14.0, 31.0));
        assert!(BandSet::parse("alpha8-14").is_err());
        assert!(BandSet::parse("identity").unwrap().bands[0].is_identity());
    }

    #[test]
    fn short_recording_is_rejected() {
        let rec = RawRecording {
            sample_rate: 200.0,
            data: vec![vec![0.0; 199]],
            subject_id: 0,
            label: 0,
        };
        assert!(rec.validate().is_err());
    }
}
