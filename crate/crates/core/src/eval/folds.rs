use serde::{Deserialize, Serialize};

use crate::eeg::{zscore_apply, zscore_fit, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::samples::Samples;

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub index: usize,
    pub test_subject: u16,
    pub train_subjects: Vec<u16>,
}

/// One fold per subject, in ascending subject order.
pub fn loso_split(dataset: &Dataset) -> Result<Vec<FoldSpec>> {
    loso_split_ids(&dataset.subject_ids())
}

/// [`loso_split`] over explicit subject ids (duplicates are ignored).
pub fn loso_split_ids(subjects: &[u16]) -> Result<Vec<FoldSpec>> {
    let mut ids = subjects.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(index, &test_subject)| FoldSpec {
            index,
            test_subject,
            train_subjects: ids.iter().copied().filter(|&s| s != test_subject).collect(),
        })
        .collect())
}

/// Normalized training and test samples of one fold. The statistics are
/// fitted on the training subjects only.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Samples,
    pub test: Samples,
    pub stats: NormStats,
}

impl FoldData {
    pub fn prepare(dataset: &Dataset, fold: &FoldSpec) -> Result<Self> {
        let train_raw = dataset.to_samples(&dataset.indices_of(&fold.train_subjects))?;
        let test_raw = dataset.to_samples(&dataset.indices_of(&[fold.test_subject]))?;
        let stats = zscore_fit(&train_raw)?;
        Ok(Self {
            train: zscore_apply(&train_raw, &stats)?,
            test: zscore_apply(&test_raw, &stats)?,
            stats,
        })
    }
}
