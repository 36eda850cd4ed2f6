use std::borrow::Cow;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};

use super::gemm::gemm;
use super::{accumulate, Mode, Op, Tape, Var};
use crate::error::{Error, Result};

impl<'a> Tape<'a> {
    pub fn relu(&mut self, input: Var) -> Var {
        let out: Vec<f64> = self.value(input).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        let tracked = self.is_tracked(input);
        self.push(shape, Cow::Owned(out), tracked, Op::Relu { input })
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Eval mode, and rate 0, return `input` unchanged.
    pub fn dropout(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self
            .value(input)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(input).to_vec();
        let tracked = self.is_tracked(input);
        Ok(self.push(shape, Cow::Owned(out), tracked, Op::Dropout { input, mask }))
    }

    /// Affine map `input [B, F] · weight [F, O] + bias [O]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (b, o) = (xs[0], ws[1]);
        let mut out = Array2::from_shape_fn((b, o), |(_, j)| self.value(bias)[j]);
        gemm(
            self.precision(),
            view(self.value(input), xs[0], xs[1]),
            view(self.value(weight), ws[0], ws[1]),
            1.0,
            &mut out.view_mut(),
        );
        let tracked = self.is_tracked(input) || self.is_tracked(weight) || self.is_tracked(bias);
        Ok(self.push(
            vec![b, o],
            Cow::Owned(out.into_raw_vec_and_offset().0),
            tracked,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Concatenates `[B, Ci, H, W]` parts along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_channels", "no parts"));
        };
        let s0 = self.shape(first).to_vec();
        if s0.len() != 4 {
            return Err(Error::shape("concat_channels", format!("part shape {s0:?}")));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("part {s:?} does not match batch/spatial dims of {s0:?}"),
                ));
            }
            channels += s[1];
        }
        let plane = s0[2] * s0[3];
        let mut out = Vec::with_capacity(s0[0] * channels * plane);
        for b in 0..s0[0] {
            for &p in parts {
                let chunk = self.shape(p)[1] * plane;
                out.extend_from_slice(&self.value(p)[b * chunk..(b + 1) * chunk]);
            }
        }
        let tracked = parts.iter().any(|&p| self.is_tracked(p));
        Ok(self.push(
            vec![s0[0], channels, s0[2], s0[3]],
            Cow::Owned(out),
            tracked,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(input).len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(input)),
            ));
        }
        let value = self.value(input).to_vec();
        let tracked = self.is_tracked(input);
        Ok(self.push(shape.to_vec(), Cow::Owned(value), tracked, Op::Reshape { input }))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input);
        let b = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(input, &[b, rest])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).iter().sum();
        let tracked = self.is_tracked(input);
        self.push(vec![1], Cow::Owned(vec![total]), tracked, Op::Sum { input })
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

pub(super) fn relu_backward(
    tape: &Tape<'_>,
    input: Var,
    output: Var,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.is_tracked(input) {
        return;
    }
    let dx = tape
        .value(output)
        .iter()
        .zip(g)
        .map(|(&y, &gv)| if y > 0.0 { gv } else { 0.0 })
        .collect();
    accumulate(&mut grads[input.index()], dx);
}

pub(super) fn dropout_backward(
    tape: &Tape<'_>,
    input: Var,
    mask: &[f64],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if tape.is_tracked(input) {
        let dx = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
        accumulate(&mut grads[input.index()], dx);
    }
}

pub(super) fn dense_backward(
    tape: &Tape<'_>,
    input: Var,
    weight: Var,
    bias: Var,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let xs = tape.shape(input);
    let (b, f) = (xs[0], xs[1]);
    let o = tape.shape(weight)[1];
    let gm = view(g, b, o);
    if tape.is_tracked(bias) {
        let db = gm.sum_axis(ndarray::Axis(0)).to_vec();
        accumulate(&mut grads[bias.index()], db);
    }
    if tape.is_tracked(weight) {
        let mut dw = Array2::zeros((f, o));
        gemm(
            tape.precision(),
            view(tape.value(input), b, f).t(),
            gm,
            0.0,
            &mut dw.view_mut(),
        );
        accumulate(&mut grads[weight.index()], dw.into_raw_vec_and_offset().0);
    }
    if tape.is_tracked(input) {
        let mut dx = Array2::zeros((b, f));
        gemm(
            tape.precision(),
            gm,
            view(tape.value(weight), f, o).t(),
            0.0,
            &mut dx.view_mut(),
        );
        accumulate(&mut grads[input.index()], dx.into_raw_vec_and_offset().0);
    }
}

pub(super) fn concat_backward(
    tape: &Tape<'_>,
    parts: &[Var],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let s0 = tape.shape(parts[0]);
    let (batch, plane) = (s0[0], s0[2] * s0[3]);
    let total: usize = parts.iter().map(|&p| tape.shape(p)[1]).sum::<usize>() * plane;
    let mut offset = 0;
    for &p in parts {
        let chunk = tape.shape(p)[1] * plane;
        if tape.is_tracked(p) {
            let mut dp = Vec::with_capacity(batch * chunk);
            for b in 0..batch {
                let start = b * total + offset;
                dp.extend_from_slice(&g[start..start + chunk]);
            }
            accumulate(&mut grads[p.index()], dp);
        }
        offset += chunk;
    }
}
