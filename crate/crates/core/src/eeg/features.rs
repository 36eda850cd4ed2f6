use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::filter::SosFilter;
use super::{BandSet, RawRecording};

/// Butterworth order used for every band.
const FILTER_ORDER: usize = 4;

/// Smallest window variance fed to the logarithm.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Zero-phase band-pass of every channel.
pub fn bandpass(rec: &RawRecording, low: f64, high: f64) -> Result<RawRecording> {
    rec.validate()?;
    let filter = SosFilter::butterworth_bandpass(FILTER_ORDER, low, high, rec.sample_rate)?;
    Ok(RawRecording {
        data: rec.data.iter().map(|row| filter.filtfilt(row)).collect(),
        ..rec.clone()
    })
}

/// `½ ln(2πe σ²)` of one window, with the unbiased variance floored at
/// [`VARIANCE_FLOOR`].
pub fn differential_entropy(window: &[f64]) -> f64 {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let ss: f64 = window.iter().map(|v| (v - mean).powi(2)).sum();
    let var = if window.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var.max(VARIANCE_FLOOR)).ln()
}

/// DE features `[bands, channels, windows]` over windows of `window`
/// seconds starting every `window - overlap` seconds.
pub fn de_features(rec: &RawRecording, bands: &BandSet, window: f64, overlap: f64) -> Result<Tensor> {
    rec.validate()?;
    bands.validate(rec.sample_rate)?;
    if !(window > 0.0 && (0.0..window).contains(&overlap)) {
        return Err(Error::Signal(format!(
            "window {window} s with overlap {overlap} s is invalid"
        )));
    }
    let len = (window * rec.sample_rate).round() as usize;
    let hop = ((window - overlap) * rec.sample_rate).round() as usize;
    if len < 2 || hop == 0 {
        return Err(Error::Signal(format!(
            "window of {window} s is too short at {} Hz",
            rec.sample_rate
        )));
    }
    if rec.len() < len {
        return Err(Error::Signal(format!(
            "recording of {} samples is shorter than one {len}-sample window",
            rec.len()
        )));
    }
    let windows = (rec.len() - len) / hop + 1;
    let channels = rec.channels();
    let mut out = Vec::with_capacity(bands.len() * channels * windows);
    for band in &bands.bands {
        let filtered = if band.is_identity() {
            rec.clone()
        } else {
            bandpass(rec, band.low, band.high)?
        };
        for row in &filtered.data {
            for w in 0..windows {
                out.push(differential_entropy(&row[w * hop..w * hop + len]));
            }
        }
    }
    Tensor::new(&[bands.len(), channels, windows], out)
}

/// Windows `[n, c, t]` cut from `[n, c, T]` every `hop` steps.
pub fn windowize(features: &Tensor, t: usize, hop: usize) -> Result<Vec<Tensor>> {
    let shape = features.shape();
    if shape.len() != 3 {
        return Err(Error::shape("windowize", format!("expected [n, c, T], got {shape:?}")));
    }
    let (n, c, total) = (shape[0], shape[1], shape[2]);
    if t == 0 || hop == 0 {
        return Err(Error::Signal("window length and hop must be positive".into()));
    }
    if t > total {
        return Err(Error::Signal(format!(
            "window of {t} steps does not fit in {total} steps"
        )));
    }
    let count = (total - t) / hop + 1;
    let data = features.data();
    (0..count)
        .map(|k| {
            let start = k * hop;
            let mut out = Vec::with_capacity(n * c * t);
            for row in 0..n * c {
                out.extend_from_slice(&data[row * total + start..row * total + start + t]);
            }
            Tensor::new(&[n, c, t], out)
        })
        .collect()
}
