//! Labelled samples stacked into one batch-major tensor.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    x: Tensor,
    labels: Vec<usize>,
}

impl Samples {
    /// `x` is `[N, ..sample_dims]` with one label per row.
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        if x.shape().is_empty() || x.shape()[0] != labels.len() {
            return Err(Error::shape(
                "samples",
                format!("{} labels for inputs of shape {:?}", labels.len(), x.shape()),
            ));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_dims(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Samples> {
        Ok(Samples {
            x: self.x.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// The first `n` rows (all of them when `n >= len`). Fails for `n = 0`
    /// because tensors have no empty dimensions.
    pub fn head(&self, n: usize) -> Result<Samples> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Consecutive batches of at most `size` rows.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Samples> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.select(&idx).expect("indices in range")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_all_rows_in_order() {
        let s = Samples::new(Tensor::from_fn(&[5, 2], |i| i as f64), vec![0, 1, 2, 0, 1]).unwrap();
        let sizes: Vec<usize> = s.batches(2).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let last = s.batches(2).last().unwrap();
        assert_eq!(last.x().data(), &[8.0, 9.0]);
        assert_eq!(last.labels(), &[1]);
    }

    #[test]
    fn label_count_must_match() {
        assert!(Samples::new(Tensor::zeros(&[3, 2]), vec![0, 1]).is_err());
    }
}
