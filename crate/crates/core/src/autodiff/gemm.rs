use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar, Zip};

use super::Precision;

/// Element type a kernel can run in.
pub(crate) trait Real: LinalgScalar + Send + Sync + std::ops::AddAssign {}

impl Real for f64 {}

impl Real for f32 {}

pub(crate) fn narrow(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

pub(crate) fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

/// `c = a · b + beta · c` with operands in the requested precision.
pub(crate) fn gemm(
    precision: Precision,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    beta: f64,
    c: &mut ArrayViewMut2<'_, f64>,
) {
    match precision {
        Precision::F64 => general_mat_mul(1.0, &a, &b, beta, c),
        Precision::F32 => {
            let a32 = a.mapv(|v| v as f32);
            let b32 = b.mapv(|v| v as f32);
            let mut out = ndarray::Array2::<f32>::zeros(c.raw_dim());
            general_mat_mul(1.0, &a32, &b32, 0.0, &mut out);
            if beta == 0.0 {
                Zip::from(c).and(&out).for_each(|c, &r| *c = r as f64);
            } else {
                Zip::from(c)
                    .and(&out)
                    .for_each(|c, &r| *c = beta * *c + r as f64);
            }
        }
    }
}
