//! 2-D cross-correlation over `[B, C, H, W]` tensors.
//!
//! Large maps are lowered to a single GEMM over an im2col matrix. Small maps,
//! where most taps of a 5x5 kernel fall off the edge, instead run one GEMM per
//! kernel offset `(ky, kx)` restricted to the output positions whose tap lands
//! inside the input, so padding zeros are never multiplied.

use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::gemm::{narrow, widen, Real};
use super::{accumulate, Op, Precision, Tape, Var};
use crate::error::{Error, Result};

/// Border handling for convolution and pooling windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output size `ceil(H / stride)`; zero padding, the odd extra cell on
    /// the high-index side.
    Same,
    /// No padding; output size `floor((H - k) / stride) + 1`.
    Valid,
}

/// Placement of a sliding window along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Axis {
    pub input: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output: usize,
}

impl Axis {
    pub(crate) fn new(
        op: &'static str,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::shape(op, "kernel and stride must be positive"));
        }
        let (pad, output) = match padding {
            Padding::Valid => {
                if kernel > input {
                    return Err(Error::shape(
                        op,
                        format!("window {kernel} larger than input extent {input}"),
                    ));
                }
                (0, (input - kernel) / stride + 1)
            }
            Padding::Same => {
                let output = input.div_ceil(stride);
                let total = ((output - 1) * stride + kernel).saturating_sub(input);
                (total / 2, output)
            }
        };
        Ok(Self {
            input,
            kernel,
            stride,
            pad,
            output,
        })
    }

    /// Output positions whose tap at kernel offset `k` reads a real input cell.
    pub(crate) fn valid_outputs(&self, k: usize) -> Span {
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.input + self.pad > k {
            ((self.input + self.pad - k - 1) / self.stride + 1).min(self.output)
        } else {
            0
        };
        Span {
            start: lo,
            count: hi.saturating_sub(lo),
            step: 1,
        }
    }

    /// Input coordinates read by the outputs in `outputs` at offset `k`.
    pub(crate) fn sources(&self, outputs: Span, k: usize) -> Span {
        Span {
            start: outputs.start * self.stride + k - self.pad,
            count: outputs.count,
            step: self.stride,
        }
    }
}

/// An arithmetic progression of indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub start: usize,
    pub count: usize,
    pub step: usize,
}

impl Span {
    pub(crate) fn iter(self) -> impl Iterator<Item = usize> {
        (0..self.count).map(move |i| self.start + i * self.step)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub rows: Axis,
    pub cols: Axis,
}

impl ConvGeom {
    fn in_plane(&self) -> usize {
        self.rows.input * self.cols.input
    }

    fn out_plane(&self) -> usize {
        self.rows.output * self.cols.output
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.rows.output, self.cols.output]
    }

    fn taps(&self) -> usize {
        self.rows.kernel * self.cols.kernel
    }

    /// Whether to lower the whole kernel into one product over an im2col
    /// matrix rather than one product per offset. The im2col form multiplies
    /// padding zeros too, so it only pays off when few taps fall off the edge.
    fn lower_to_columns(&self) -> bool {
        let live = |axis: &Axis| -> usize {
            (0..axis.kernel).map(|k| axis.valid_outputs(k).count).sum()
        };
        let live_taps = live(&self.rows) * live(&self.cols);
        5 * live_taps >= 4 * self.out_plane() * self.taps()
    }

    /// Reorders `[cout, cin, kh, kw]` weights to `[kh * kw, cout, cin]` so
    /// each offset's matrix is contiguous.
    fn offset_major<T: Real>(&self, w: &[T]) -> Vec<T> {
        let taps = self.taps();
        let mut out = Vec::with_capacity(w.len());
        for k in 0..taps {
            for o in 0..self.cout {
                let row = &w[o * self.cin * taps..][..self.cin * taps];
                out.extend(row.iter().skip(k).step_by(taps).copied());
            }
        }
        out
    }

    /// Inverse of [`ConvGeom::offset_major`], adding into `w`.
    fn add_from_offset_major<T: Real>(&self, packed: &[T], w: &mut [T]) {
        let taps = self.taps();
        let block = self.cout * self.cin;
        for k in 0..taps {
            for o in 0..self.cout {
                for i in 0..self.cin {
                    w[(o * self.cin + i) * taps + k] += packed[k * block + o * self.cin + i];
                }
            }
        }
    }

    /// `[cout, cin]` weight matrix at one kernel offset of an offset-major
    /// buffer.
    fn packed_at<'w, T>(&self, packed: &'w [T], ky: usize, kx: usize) -> ArrayView2<'w, T> {
        let block = self.cout * self.cin;
        let k = ky * self.cols.kernel + kx;
        ArrayView2::from_shape((self.cout, self.cin), &packed[k * block..][..block])
            .expect("weight block")
    }

    fn packed_at_mut<'w, T>(
        &self,
        packed: &'w mut [T],
        ky: usize,
        kx: usize,
    ) -> ArrayViewMut2<'w, T> {
        let block = self.cout * self.cin;
        let k = ky * self.cols.kernel + kx;
        ArrayViewMut2::from_shape((self.cout, self.cin), &mut packed[k * block..][..block])
            .expect("weight block")
    }

    /// The weight tensor as a `[cout, cin * taps]` matrix.
    fn weight_matrix<'w, T>(&self, w: &'w [T]) -> ArrayView2<'w, T> {
        ArrayView2::from_shape((self.cout, self.cin * self.taps()), w).expect("weight matrix")
    }

    /// Visits every (kernel offset, live output span, input span) triple.
    fn for_each_offset(&self, mut f: impl FnMut(usize, usize, Span, Span, Span, Span)) {
        for ky in 0..self.rows.kernel {
            let out_rows = self.rows.valid_outputs(ky);
            if out_rows.count == 0 {
                continue;
            }
            for kx in 0..self.cols.kernel {
                let out_cols = self.cols.valid_outputs(kx);
                if out_cols.count == 0 {
                    continue;
                }
                f(
                    ky,
                    kx,
                    out_rows,
                    out_cols,
                    self.rows.sources(out_rows, ky),
                    self.cols.sources(out_cols, kx),
                );
            }
        }
    }
}

/// Copies `src[b, c, rows, cols]` into a `[channels, batch * rows * cols]`
/// matrix.
fn gather<T: Real>(
    src: &[T],
    batch: usize,
    channels: usize,
    plane: (usize, usize),
    rows: Span,
    cols: Span,
) -> Array2<T> {
    let (h, w) = plane;
    let n = batch * rows.count * cols.count;
    let mut out = Vec::with_capacity(channels * n);
    for c in 0..channels {
        for b in 0..batch {
            let base = (b * channels + c) * h * w;
            for r in rows.iter() {
                let row = base + r * w;
                if cols.step == 1 {
                    out.extend_from_slice(&src[row + cols.start..row + cols.start + cols.count]);
                } else {
                    out.extend(cols.iter().map(|col| src[row + col]));
                }
            }
        }
    }
    Array2::from_shape_vec((channels, n), out).expect("gather shape")
}

/// Inverse of [`gather`]: adds a `[channels, batch * rows * cols]` matrix
/// into `dst[b, c, rows, cols]`.
fn scatter_add<T: Real>(
    dst: &mut [T],
    batch: usize,
    channels: usize,
    plane: (usize, usize),
    rows: Span,
    cols: Span,
    m: &Array2<T>,
) {
    let (h, w) = plane;
    let values = m.as_slice().expect("standard layout");
    let mut k = 0;
    for c in 0..channels {
        for b in 0..batch {
            let base = (b * channels + c) * h * w;
            for r in rows.iter() {
                let row = base + r * w;
                for col in cols.iter() {
                    dst[row + col] += values[k];
                    k += 1;
                }
            }
        }
    }
}

/// `[cin * taps, batch * out_plane]` matrix of input taps, zero where a tap
/// falls in the padding. Row order matches [`ConvGeom::weight_matrix`].
fn im2col<T: Real>(geom: &ConvGeom, x: &[T]) -> Array2<T> {
    let p = geom.out_plane();
    let n = geom.batch * p;
    let (w, wo) = (geom.cols.input, geom.cols.output);
    let mut cols = Array2::<T>::zeros((geom.cin * geom.taps(), n));
    let data = cols.as_slice_mut().expect("standard layout");
    for c in 0..geom.cin {
        geom.for_each_offset(|ky, kx, out_rows, out_cols, in_rows, in_cols| {
            let row = (c * geom.rows.kernel + ky) * geom.cols.kernel + kx;
            let dst = &mut data[row * n..(row + 1) * n];
            for b in 0..geom.batch {
                let base = (b * geom.cin + c) * geom.in_plane();
                for (oy, iy) in out_rows.iter().zip(in_rows.iter()) {
                    let o = b * p + oy * wo;
                    let i = base + iy * w;
                    for (ox, ix) in out_cols.iter().zip(in_cols.iter()) {
                        dst[o + ox] = x[i + ix];
                    }
                }
            }
        });
    }
    cols
}

/// Adjoint of [`im2col`]: adds each column entry back onto its input cell.
fn col2im_add<T: Real>(geom: &ConvGeom, cols: &Array2<T>, dx: &mut [T]) {
    let p = geom.out_plane();
    let n = geom.batch * p;
    let (w, wo) = (geom.cols.input, geom.cols.output);
    let data = cols.as_slice().expect("standard layout");
    for c in 0..geom.cin {
        geom.for_each_offset(|ky, kx, out_rows, out_cols, in_rows, in_cols| {
            let row = (c * geom.rows.kernel + ky) * geom.cols.kernel + kx;
            let src = &data[row * n..(row + 1) * n];
            for b in 0..geom.batch {
                let base = (b * geom.cin + c) * geom.in_plane();
                for (oy, iy) in out_rows.iter().zip(in_rows.iter()) {
                    let o = b * p + oy * wo;
                    let i = base + iy * w;
                    for (ox, ix) in out_cols.iter().zip(in_cols.iter()) {
                        dx[i + ix] += src[o + ox];
                    }
                }
            }
        });
    }
}

/// `[B, C, P]` to `[C, B * P]`.
fn channel_major<T: Real>(values: &[T], batch: usize, channels: usize, plane: usize) -> Array2<T> {
    let mut out = Array2::<T>::zeros((channels, batch * plane));
    for b in 0..batch {
        for c in 0..channels {
            let src = &values[(b * channels + c) * plane..][..plane];
            out.row_mut(c)
                .slice_mut(ndarray::s![b * plane..(b + 1) * plane])
                .iter_mut()
                .zip(src)
                .for_each(|(d, &s)| *d = s);
        }
    }
    out
}

/// Adds the products into `out`, which arrives holding the broadcast bias.
fn forward_kernel<T: Real>(geom: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let plane_out = (geom.rows.output, geom.cols.output);
    if geom.lower_to_columns() {
        let cols = im2col(geom, x);
        let mut y = Array2::<T>::zeros((geom.cout, cols.ncols()));
        general_mat_mul(T::one(), &geom.weight_matrix(w), &cols, T::zero(), &mut y);
        let p = geom.out_plane();
        for b in 0..geom.batch {
            for c in 0..geom.cout {
                let dst = &mut out[(b * geom.cout + c) * p..][..p];
                let src = y.row(c);
                let src = src.slice(ndarray::s![b * p..(b + 1) * p]);
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        return;
    }
    let packed = geom.offset_major(w);
    geom.for_each_offset(|ky, kx, out_rows, out_cols, in_rows, in_cols| {
        let plane_in = (geom.rows.input, geom.cols.input);
        let xk = gather(x, geom.batch, geom.cin, plane_in, in_rows, in_cols);
        let mut yk = Array2::<T>::zeros((geom.cout, xk.ncols()));
        general_mat_mul(T::one(), &geom.packed_at(&packed, ky, kx), &xk, T::zero(), &mut yk);
        scatter_add(out, geom.batch, geom.cout, plane_out, out_rows, out_cols, &yk);
    });
}

/// Weight and input gradients; either may be skipped.
fn backward_kernel<T: Real>(
    geom: &ConvGeom,
    x: &[T],
    w: &[T],
    g: &[T],
    dw: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let plane_in = (geom.rows.input, geom.cols.input);
    let plane_out = (geom.rows.output, geom.cols.output);
    if geom.lower_to_columns() {
        let gm = channel_major(g, geom.batch, geom.cout, geom.out_plane());
        if let Some(dw) = dw {
            let cols = im2col(geom, x);
            let mut dwm = ArrayViewMut2::from_shape((geom.cout, geom.cin * geom.taps()), dw)
                .expect("weight matrix");
            general_mat_mul(T::one(), &gm, &cols.t(), T::one(), &mut dwm);
        }
        if let Some(dx) = dx {
            let mut dcols = Array2::<T>::zeros((geom.cin * geom.taps(), gm.ncols()));
            general_mat_mul(T::one(), &geom.weight_matrix(w).t(), &gm, T::zero(), &mut dcols);
            col2im_add(geom, &dcols, dx);
        }
        return;
    }
    let packed = if dx.is_some() {
        geom.offset_major(w)
    } else {
        Vec::new()
    };
    let mut packed_dw = if dw.is_some() {
        vec![T::zero(); w.len()]
    } else {
        Vec::new()
    };
    geom.for_each_offset(|ky, kx, out_rows, out_cols, in_rows, in_cols| {
        let gk = gather(g, geom.batch, geom.cout, plane_out, out_rows, out_cols);
        if dw.is_some() {
            let xk = gather(x, geom.batch, geom.cin, plane_in, in_rows, in_cols);
            let mut dwk = geom.packed_at_mut(&mut packed_dw, ky, kx);
            general_mat_mul(T::one(), &gk, &xk.t(), T::zero(), &mut dwk);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut dxk = Array2::<T>::zeros((geom.cin, gk.ncols()));
            let wk = geom.packed_at(&packed, ky, kx);
            general_mat_mul(T::one(), &wk.t(), &gk, T::zero(), &mut dxk);
            scatter_add(dx, geom.batch, geom.cin, plane_in, in_rows, in_cols, &dxk);
        }
    });
    if let Some(dw) = dw {
        geom.add_from_offset_major(&packed_dw, dw);
    }
}

impl<'a> Tape<'a> {
    /// Cross-correlation of `input [B, Cin, H, W]` with `weight [Cout, Cin, kh, kw]`
    /// plus `bias [Cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        padding: Padding,
        stride: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected 4-d input and weight, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight expects {}", xs[1], ws[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {bs:?} does not match {} filters", ws[0]),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            rows: Axis::new("conv2d", xs[2], ws[2], stride.0, padding)?,
            cols: Axis::new("conv2d", xs[3], ws[3], stride.1, padding)?,
        };

        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let out_plane = geom.out_plane();
        let mut out = vec![0.0; geom.batch * geom.cout * out_plane];
        for (chunk, i) in out.chunks_mut(out_plane).zip(0..) {
            chunk.fill(b[i % geom.cout]);
        }
        match self.precision() {
            Precision::F64 => forward_kernel(&geom, x, w, &mut out),
            Precision::F32 => {
                let mut narrow_out = narrow(&out);
                forward_kernel(&geom, &narrow(x), &narrow(w), &mut narrow_out);
                out = widen(&narrow_out);
            }
        }

        let tracked = self.is_tracked(input) || self.is_tracked(weight) || self.is_tracked(bias);
        let shape = geom.out_shape();
        Ok(self.push(
            shape,
            Cow::Owned(out),
            tracked,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }
}

pub(super) fn backward(
    tape: &Tape<'_>,
    geom: &ConvGeom,
    input: Var,
    weight: Var,
    bias: Var,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let need_x = tape.is_tracked(input);
    let need_w = tape.is_tracked(weight);
    let need_b = tape.is_tracked(bias);
    let out_plane = geom.out_plane();

    if need_b {
        let mut db = vec![0.0; geom.cout];
        for (chunk, i) in g.chunks(out_plane).zip(0..) {
            db[i % geom.cout] += chunk.iter().sum::<f64>();
        }
        accumulate(&mut grads[bias.index()], db);
    }
    if !need_x && !need_w {
        return;
    }

    let x = tape.value(input);
    let w = tape.value(weight);
    debug_assert_eq!(geom.in_plane() * geom.cin * geom.batch, x.len());
    let (dw, dx) = match tape.precision() {
        Precision::F64 => {
            let mut dw = vec![0.0; if need_w { w.len() } else { 0 }];
            let mut dx = vec![0.0; if need_x { x.len() } else { 0 }];
            backward_kernel(
                geom,
                x,
                w,
                g,
                need_w.then_some(&mut dw[..]),
                need_x.then_some(&mut dx[..]),
            );
            (dw, dx)
        }
        Precision::F32 => {
            let mut dw = vec![0.0f32; if need_w { w.len() } else { 0 }];
            let mut dx = vec![0.0f32; if need_x { x.len() } else { 0 }];
            let x32 = if need_w { narrow(x) } else { Vec::new() };
            backward_kernel(
                geom,
                &x32,
                &narrow(w),
                &narrow(g),
                need_w.then_some(&mut dw[..]),
                need_x.then_some(&mut dx[..]),
            );
            (widen(&dw), widen(&dx))
        }
    };
    if need_w {
        accumulate(&mut grads[weight.index()], dw);
    }
    if need_x {
        accumulate(&mut grads[input.index()], dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn conv(x: &Tensor, w: &Tensor, b: &Tensor, padding: Padding, stride: (usize, usize)) -> Tensor {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let y = tape.conv2d(xv, wv, bv, padding, stride).unwrap();
        tape.to_tensor(y)
    }

    #[test]
    fn valid_ones_kernel_sums_windows() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        let y = conv(&x, &w, &b, Padding::Valid, (1, 1));
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn same_padding_puts_extra_zeros_on_high_side() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        let y = conv(&x, &w, &b, Padding::Same, (1, 1));
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), &[4.0, 4.0, 2.0, 4.0, 4.0, 2.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn zero_weight_yields_bias() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| (i as f64).sin());
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let b = Tensor::new(&[2], vec![0.5, -1.5]).unwrap();
        let y = conv(&x, &w, &b, Padding::Same, (1, 1));
        assert_eq!(y.shape(), &[2, 2, 4, 5]);
        for (chunk, i) in y.data().chunks(20).zip(0..) {
            let expected = if i % 2 == 0 { 0.5 } else { -1.5 };
            assert!(chunk.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn no_kernel_flip() {
        // A kernel with a single 1 at (0, 1) picks the right-hand neighbour.
        let x = Tensor::from_fn(&[1, 1, 2, 3], |i| i as f64);
        let w = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = conv(&x, &w, &Tensor::zeros(&[1]), Padding::Valid, (1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn strided_valid_output_size() {
        let x = Tensor::ones(&[1, 1, 7, 6]);
        let w = Tensor::ones(&[1, 1, 3, 2]);
        let y = conv(&x, &w, &Tensor::zeros(&[1]), Padding::Valid, (2, 3));
        assert_eq!(y.shape(), &[1, 1, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::ones(&[1, 2, 3, 3]);
        let w = Tensor::ones(&[1, 3, 2, 2]);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let b = Tensor::zeros(&[1]);
        let bv = tape.leaf(&b);
        let err = tape.conv2d(xv, wv, bv, Padding::Same, (1, 1)).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn kernel_larger_than_valid_input_is_rejected() {
        let x = Tensor::ones(&[1, 1, 2, 2]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
        assert!(tape.conv2d(xv, wv, bv, Padding::Valid, (1, 1)).is_err());
    }

    #[test]
    fn valid_output_spans() {
        let axis = Axis::new("t", 4, 5, 1, Padding::Same).unwrap();
        assert_eq!(axis.pad, 2);
        let counts: Vec<usize> = (0..5).map(|k| axis.valid_outputs(k).count).collect();
        assert_eq!(counts, vec![2, 3, 4, 3, 2]);
    }

    #[test]
    fn single_precision_tracks_double_on_both_lowerings() {
        for (hw, k) in [(16, 5), (4, 5)] {
            let x = Tensor::from_fn(&[2, 3, hw, hw], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0)
                .tracked(true);
            let w = Tensor::from_fn(&[4, 3, k, k], |i| ((i * 13) % 7) as f64 / 7.0 - 0.5)
                .tracked(true);
            let b = Tensor::full(&[4], 0.25).tracked(true);
            let run = |precision| {
                let mut tape = Tape::with_precision(precision);
                let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
                let y = tape.conv2d(xv, wv, bv, Padding::Same, (1, 1)).unwrap();
                let out = tape.to_tensor(y);
                let s = tape.sum(y);
                let grads = tape.backward(s).unwrap();
                (out, grads.get(xv).unwrap(), grads.get(wv).unwrap())
            };
            let (y64, dx64, dw64) = run(Precision::F64);
            let (y32, dx32, dw32) = run(Precision::F32);
            for (a, b) in [(y64, y32), (dx64, dx32), (dw64, dw32)] {
                for (p, q) in a.data().iter().zip(b.data()) {
                    assert!((p - q).abs() <= 1e-5 * (1.0 + p.abs()), "{p} vs {q}");
                }
            }
        }
    }
}
