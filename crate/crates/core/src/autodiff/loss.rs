use std::borrow::Cow;

use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

impl<'a> Tape<'a> {
    /// Mean softmax cross-entropy of `logits [B, K]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {shape:?} for {} labels", labels.len()),
            ));
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label, classes: k });
        }

        let z = self.value(logits);
        let mut probs = Vec::with_capacity(b * k);
        let mut total = 0.0;
        for (row, &label) in z.chunks(k).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            total += log_denom - (row[label] - max);
            probs.extend(row.iter().map(|&v| (v - max).exp() / denom));
        }
        let loss = total / b as f64;
        let tracked = self.is_tracked(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            tracked,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }
}

pub(super) fn backward(
    tape: &Tape<'_>,
    logits: Var,
    probs: &[f64],
    labels: &[usize],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.is_tracked(logits) {
        return;
    }
    let k = tape.shape(logits)[1];
    let scale = g[0] / labels.len() as f64;
    let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
    for (row, &label) in dz.chunks_mut(k).zip(labels) {
        row[label] -= scale;
    }
    accumulate(&mut grads[logits.index()], dz);
}
