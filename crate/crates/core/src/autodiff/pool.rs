use std::borrow::Cow;

use super::conv::{Axis, Padding};
use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

impl<'a> Tape<'a> {
    /// Windowed maximum over the spatial axes of `[B, C, H, W]`.
    ///
    /// Padded cells never win. Ties go to the first cell in row-major window
    /// order, which is the lowest flat index.
    pub fn maxpool2d(
        &mut self,
        input: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 4 {
            return Err(Error::shape(
                "maxpool2d",
                format!("expected 4-d input, got {shape:?}"),
            ));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let rows = Axis::new("maxpool2d", h, kernel.0, stride.0, padding)?;
        let cols = Axis::new("maxpool2d", w, kernel.1, stride.1, padding)?;
        let (ho, wo) = (rows.output, cols.output);

        let x = self.value(input);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut argmax = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                let y0 = (oy * rows.stride) as isize - rows.pad as isize;
                for ox in 0..wo {
                    let x0 = (ox * cols.stride) as isize - cols.pad as isize;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for ky in 0..rows.kernel as isize {
                        let iy = y0 + ky;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..cols.kernel as isize {
                            let ix = x0 + kx;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let at = base + iy as usize * w + ix as usize;
                            if best_at == usize::MAX || x[at] > best {
                                best = x[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }

        let tracked = self.is_tracked(input);
        Ok(self.push(
            vec![b, c, ho, wo],
            Cow::Owned(out),
            tracked,
            Op::MaxPool2d { input, argmax },
        ))
    }
}

pub(super) fn backward(
    tape: &Tape<'_>,
    input: Var,
    argmax: &[usize],
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if !tape.is_tracked(input) {
        return;
    }
    let mut dx = vec![0.0; tape.value(input).len()];
    for (&at, &gv) in argmax.iter().zip(g) {
        dx[at] += gv;
    }
    accumulate(&mut grads[input.index()], dx);
}
