//! Clean and robust scoring, cross-subject folds and experiment drivers.

mod experiment;
mod folds;

pub use experiment::{
    ablation_run, gamma_sweep, run_fold, AblationConfig, AblationReport, ArmResult, RunOutcome,
    SweepPoint, SweepReport,
};
pub use folds::{loso_split, loso_split_ids, FoldData, FoldSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::Attack;
use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::network::{forward_in, Network};
use crate::samples::Samples;
use crate::seeding::{rng_for, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Scores of one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean cross-entropy.
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub clean: Scores,
    /// Scores under attack, when an attack was run.
    pub robust: Option<Scores>,
    pub attack: Option<Attack>,
}

impl MetricsReport {
    pub fn accuracy(&self) -> f64 {
        self.clean.accuracy
    }

    pub fn macro_f1(&self) -> f64 {
        self.clean.macro_f1
    }

    pub fn r_accuracy(&self) -> Option<f64> {
        self.robust.as_ref().map(|s| s.accuracy)
    }

    pub fn r_f1(&self) -> Option<f64> {
        self.robust.as_ref().map(|s| s.macro_f1)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

/// Per-class precision, recall and F1 from a confusion matrix. Undefined
/// ratios (no predictions, no support) count as 0.
pub fn class_scores(confusion: &[Vec<u64>]) -> Vec<ClassScores> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { num / den as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(confusion: &[Vec<u64>]) -> f64 {
    let scores = class_scores(confusion);
    scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

fn scores(truth: &[usize], logits: &[Vec<f64>], classes: usize) -> Scores {
    let predicted: Vec<usize> = logits.iter().map(|row| argmax(row)).collect();
    let confusion = confusion_matrix(truth, &predicted, classes);
    let correct = truth.iter().zip(&predicted).filter(|(t, p)| t == p).count();
    let loss = truth
        .iter()
        .zip(logits)
        .map(|(&t, row)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            lse - row[t]
        })
        .sum::<f64>()
        / truth.len() as f64;
    Scores {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: macro_f1(&confusion),
        loss,
        per_class: class_scores(&confusion),
        confusion,
    }
}

fn rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits.data().chunks(k).map(<[f64]>::to_vec).collect()
}

fn check_labels(samples: &Samples, classes: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if let Some(&label) = samples.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok(())
}

/// Clean scores in eval mode. Batches are scored in parallel; the result
/// does not depend on the thread count.
pub fn evaluate<N: Network>(net: &N, samples: &Samples, batch_size: usize) -> Result<MetricsReport> {
    let classes = net.num_classes();
    check_labels(samples, classes)?;
    let batches: Vec<Samples> = samples.batches(batch_size).collect();
    let logits: Vec<Vec<Vec<f64>>> = batches
        .par_iter()
        .map(|b| {
            let mut rng = rng_for(0, Purpose::Evaluation, 0);
            forward_in(net, b.x(), Mode::Eval, &mut rng).map(|t| rows(&t))
        })
        .collect::<Result<_>>()?;
    let logits: Vec<Vec<f64>> = logits.into_iter().flatten().collect();
    Ok(MetricsReport {
        samples: samples.len(),
        clean: scores(samples.labels(), &logits, classes),
        robust: None,
        attack: None,
    })
}

/// Logit rows of one batch.
type Logits = Vec<Vec<f64>>;

/// Clean and robust scores. Batch `b` is attacked with the stream
/// `(seed, Attack, b)`, so a fixed seed gives a fixed report.
pub fn evaluate_robust<N: Network>(
    net: &N,
    samples: &Samples,
    attack: &Attack,
    seed: u64,
    batch_size: usize,
) -> Result<MetricsReport> {
    let classes = net.num_classes();
    check_labels(samples, classes)?;
    attack.threat.validate()?;
    attack.config.validate()?;
    let batches: Vec<Samples> = samples.batches(batch_size).collect();
    let pairs: Vec<(Logits, Logits)> = batches
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let mut rng = rng_for(seed, Purpose::Attack, i as u64);
            let x_adv = attack.run(net, b.x(), b.labels(), &mut rng)?;
            let clean = forward_in(net, b.x(), Mode::Eval, &mut rng)?;
            let adv = forward_in(net, &x_adv, Mode::Eval, &mut rng)?;
            Ok((rows(&clean), rows(&adv)))
        })
        .collect::<Result<_>>()?;
    let (clean, adv): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let clean: Vec<Vec<f64>> = clean.into_iter().flatten().collect();
    let adv: Vec<Vec<f64>> = adv.into_iter().flatten().collect();
    Ok(MetricsReport {
        samples: samples.len(),
        clean: scores(samples.labels(), &clean, classes),
        robust: Some(scores(samples.labels(), &adv, classes)),
        attack: Some(*attack),
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    /// Present when every run was scored under attack.
    pub r_accuracy: Option<MeanStd>,
    pub r_f1: Option<MeanStd>,
}

/// Mean ± population std over folds or seeds.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to aggregate".into()));
    }
    let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<Vec<f64>> {
        reports.iter().map(f).collect()
    };
    let stat = |f: &dyn Fn(&MetricsReport) -> Option<f64>| collect(f).and_then(|v| MeanStd::of(&v));
    Ok(AggregateReport {
        runs: reports.len(),
        accuracy: stat(&|r| Some(r.accuracy())).expect("non-empty"),
        macro_f1: stat(&|r| Some(r.macro_f1())).expect("non-empty"),
        r_accuracy: stat(&|r| r.r_accuracy()),
        r_f1: stat(&|r| r.r_f1()),
    })
}

/// Human-readable confusion matrix, rows are true classes.
pub fn format_confusion(confusion: &[Vec<u64>], names: &[&str]) -> String {
    let label = |i: usize| names.get(i).map_or_else(|| i.to_string(), |s| s.to_string());
    let width = (0..confusion.len())
        .map(|i| label(i).len())
        .chain(confusion.iter().flatten().map(|v| v.to_string().len()))
        .max()
        .unwrap_or(1)
        .max(4);
    let mut out = format!("{:>width$}", "true\\pred");
    for j in 0..confusion.len() {
        out.push_str(&format!(" {:>width$}", label(j)));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&format!("{:>w$}", label(i), w = width.max(9)));
        for v in row {
            out.push_str(&format!(" {v:>width$}"));
        }
        out.push('\n');
    }
    out
}
