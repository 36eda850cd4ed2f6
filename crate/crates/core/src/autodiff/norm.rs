use std::borrow::Cow;

use super::{accumulate, Mode, Op, Tape, Var};
use crate::error::{Error, Result};

/// Per-channel batch mean and biased variance observed in a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl<'a> Tape<'a> {
    /// Batch normalization over `(B, H, W)` of a `[B, C, H, W]` tensor.
    ///
    /// Train mode normalizes with the batch statistics (biased variance) and
    /// returns them so the caller can fold them into its running estimates.
    /// Eval mode uses `running_mean` / `running_var` and returns `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running_mean: &[f64],
        running_var: &[f64],
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(
                "batchnorm2d",
                format!("expected 4-d input, got {shape:?}"),
            ));
        }
        let (b, c) = (shape[0], shape[1]);
        let plane = shape[2] * shape[3];
        for (name, len) in [
            ("scale", self.shape(scale).iter().product::<usize>()),
            ("shift", self.shape(shift).iter().product()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{name} has {len} entries for {c} channels"),
                ));
            }
        }

        let x = self.value(input);
        let count = (b * plane) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (chunk, i) in x.chunks(plane).zip(0..) {
                    mean[i % c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for (chunk, i) in x.chunks(plane).zip(0..) {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var)
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let gamma = self.value(scale);
        let beta = self.value(shift);
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for (chunk, i) in x.chunks(plane).zip(0..) {
            let ch = i % c;
            for &v in chunk {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(gamma[ch] * h + beta[ch]);
            }
        }

        let tracked = self.is_tracked(input) || self.is_tracked(scale) || self.is_tracked(shift);
        let train = mode == Mode::Train;
        let var_out = self.push(
            shape,
            Cow::Owned(out),
            tracked,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((var_out, train.then_some(BatchStats { mean, var })))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    tape: &Tape<'_>,
    input: Var,
    scale: Var,
    shift: Var,
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let shape = tape.shape(input);
    let (b, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let count = (b * plane) as f64;

    let mut sum_g = vec![0.0; c];
    let mut sum_g_xhat = vec![0.0; c];
    for ((gc, hc), i) in g.chunks(plane).zip(xhat.chunks(plane)).zip(0..) {
        let ch = i % c;
        for (&gv, &hv) in gc.iter().zip(hc) {
            sum_g[ch] += gv;
            sum_g_xhat[ch] += gv * hv;
        }
    }
    if tape.is_tracked(scale) {
        accumulate(&mut grads[scale.index()], sum_g_xhat.clone());
    }
    if tape.is_tracked(shift) {
        accumulate(&mut grads[shift.index()], sum_g.clone());
    }
    if !tape.is_tracked(input) {
        return;
    }

    let gamma = tape.value(scale);
    let mut dx = Vec::with_capacity(g.len());
    for ((gc, hc), i) in g.chunks(plane).zip(xhat.chunks(plane)).zip(0..) {
        let ch = i % c;
        let k = gamma[ch] * inv_std[ch];
        if train {
            let mg = sum_g[ch] / count;
            let mgh = sum_g_xhat[ch] / count;
            dx.extend(gc.iter().zip(hc).map(|(&gv, &hv)| k * (gv - mg - hv * mgh)));
        } else {
            dx.extend(gc.iter().map(|&gv| k * gv));
        }
    }
    accumulate(&mut grads[input.index()], dx);
}
