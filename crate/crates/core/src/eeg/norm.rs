use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::Samples;
use crate::tensor::Tensor;

/// Smallest standard deviation used when dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-(band, channel) mean and standard deviation, shared over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// `[n, c]`
    pub mean: Tensor,
    /// `[n, c]`, floored at [`STD_FLOOR`].
    pub std: Tensor,
}

fn dims(samples: &Samples) -> Result<(usize, usize)> {
    match samples.sample_dims() {
        &[n, c, t] => Ok((n * c, t)),
        other => Err(Error::shape("zscore", format!("expected [n, c, t] samples, got {other:?}"))),
    }
}

/// Statistics over every sample and time step of the fitting set.
pub fn zscore_fit(samples: &Samples) -> Result<NormStats> {
    if samples.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty set".into()));
    }
    let (rows, t) = dims(samples)?;
    let count = (samples.len() * t) as f64;
    let mut mean = vec![0.0; rows];
    for sample in samples.x().data().chunks(rows * t) {
        for (r, m) in mean.iter_mut().enumerate() {
            *m += sample[r * t..(r + 1) * t].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; rows];
    for sample in samples.x().data().chunks(rows * t) {
        for (r, v) in var.iter_mut().enumerate() {
            *v += sample[r * t..(r + 1) * t]
                .iter()
                .map(|x| (x - mean[r]).powi(2))
                .sum::<f64>();
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
    let [n, c, _] = samples.sample_dims().try_into().expect("checked rank");
    Ok(NormStats {
        mean: Tensor::new(&[n, c], mean)?,
        std: Tensor::new(&[n, c], std)?,
    })
}

/// `(x - μ) / σ` per (band, channel).
pub fn zscore_apply(samples: &Samples, stats: &NormStats) -> Result<Samples> {
    let (rows, t) = dims(samples)?;
    if stats.mean.numel() != rows || stats.std.numel() != rows {
        return Err(Error::shape(
            "zscore_apply",
            format!("stats of shape {:?} for samples {:?}", stats.mean.shape(), samples.sample_dims()),
        ));
    }
    let (mean, std) = (stats.mean.data(), stats.std.data());
    let mut x = samples.x().clone();
    for sample in x.data_mut().chunks_mut(rows * t) {
        for r in 0..rows {
            for v in &mut sample[r * t..(r + 1) * t] {
                *v = (*v - mean[r]) / std[r];
            }
        }
    }
    Samples::new(x, samples.labels().to_vec())
}
