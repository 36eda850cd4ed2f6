//! Ablation over training regimes and the weight-budget sweep.
//!
//! A job is one `(arm, seed, fold)` triple. Every job derives its model
//! initialization and training streams from `(seed, fold)` alone, so all arms
//! start from the same weights and see the same batch order. Jobs run on a
//! dedicated thread pool and are reduced in job order, so results do not
//! depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::Attack;
use crate::eeg::Dataset;
use crate::error::{Error, Result};
use crate::model::{IncModel, ModelConfig};
use crate::seeding::{derive_seed, Purpose};
use crate::train::{fit, Defense, TrainConfig, TrainingLog};

use super::folds::{loso_split, FoldData, FoldSpec};
use super::{aggregate, evaluate_robust, AggregateReport, MeanStd, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub model: ModelConfig,
    /// Training settings; `defense` and `seed` are set per job.
    pub train: TrainConfig,
    pub eval_attack: Attack,
    pub eval_batch: usize,
    /// Fold indices to run; `None` runs every fold.
    pub folds: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_attack: Attack::default(),
            eval_batch: 64,
            folds: None,
            seeds: vec![0],
            jobs: 0,
        }
    }
}

/// One trained and evaluated model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub fold: usize,
    pub test_subject: u16,
    pub report: MetricsReport,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub defense: Defense,
    pub runs: Vec<RunOutcome>,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub runs: Vec<RunOutcome>,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

fn selected_folds(dataset: &Dataset, config: &AblationConfig) -> Result<Vec<FoldSpec>> {
    let all = loso_split(dataset)?;
    match &config.folds {
        None => Ok(all),
        Some(wanted) => wanted
            .iter()
            .map(|&i| {
                all.get(i).cloned().ok_or_else(|| {
                    Error::Config(format!("fold {i} does not exist ({} folds)", all.len()))
                })
            })
            .collect(),
    }
}

/// Trains one model on `fold` and scores it on the held-out subject.
pub fn run_fold(
    dataset: &Dataset,
    fold: &FoldSpec,
    seed: u64,
    model: &ModelConfig,
    train: &TrainConfig,
    eval_attack: &Attack,
    eval_batch: usize,
) -> Result<(IncModel, RunOutcome)> {
    if model.sample_dims() != dataset.dims() {
        return Err(Error::Config(format!(
            "model expects samples {:?}, dataset holds {:?}",
            model.sample_dims(),
            dataset.dims()
        )));
    }
    let data = FoldData::prepare(dataset, fold)?;
    let fold_index = fold.index as u64;
    let mut net = IncModel::new(model.clone(), derive_seed(seed, Purpose::Init, fold_index))?;
    let config = TrainConfig {
        seed: derive_seed(seed, Purpose::Shuffle, fold_index),
        ..train.clone()
    };
    let log = fit(&mut net, &data.train, None, &config)?;
    let report = evaluate_robust(
        &net,
        &data.test,
        eval_attack,
        derive_seed(seed, Purpose::Evaluation, fold_index),
        eval_batch,
    )?;
    let outcome = RunOutcome {
        seed,
        fold: fold.index,
        test_subject: fold.test_subject,
        report,
        log,
    };
    Ok((net, outcome))
}

fn run_jobs<T: Send + Sync>(jobs: usize, work: Vec<T>, f: impl Fn(&T) -> Result<RunOutcome> + Sync) -> Result<Vec<RunOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| work.par_iter().map(&f).collect())
}

/// Trains every arm on every selected fold and seed.
pub fn ablation_run(dataset: &Dataset, arms: &[Defense], config: &AblationConfig) -> Result<AblationReport> {
    if arms.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one arm and one seed".into()));
    }
    let folds = selected_folds(dataset, config)?;
    let mut work = Vec::new();
    for &defense in arms {
        for &seed in &config.seeds {
            for fold in &folds {
                work.push((defense, seed, fold.clone()));
            }
        }
    }
    let outcomes = run_jobs(config.jobs, work, |(defense, seed, fold)| {
        let train = TrainConfig {
            defense: *defense,
            ..config.train.clone()
        };
        run_fold(dataset, fold, *seed, &config.model, &train, &config.eval_attack, config.eval_batch)
            .map(|(_, outcome)| outcome)
    })?;
    let per_arm = config.seeds.len() * folds.len();
    let arms = arms
        .iter()
        .zip(outcomes.chunks(per_arm))
        .map(|(&defense, runs)| {
            let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
            Ok(ArmResult {
                defense,
                runs: runs.to_vec(),
                aggregate: aggregate(&reports)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { arms })
}

/// Trains TSP at every `gamma` on every selected fold and seed.
pub fn gamma_sweep(dataset: &Dataset, gammas: &[f64], config: &AblationConfig) -> Result<SweepReport> {
    if gammas.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one gamma and one seed".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Config(format!("gamma must be non-negative, got {g}")));
    }
    let folds = selected_folds(dataset, config)?;
    let mut work = Vec::new();
    for &gamma in gammas {
        for &seed in &config.seeds {
            for fold in &folds {
                work.push((gamma, seed, fold.clone()));
            }
        }
    }
    let outcomes = run_jobs(config.jobs, work, |(gamma, seed, fold)| {
        let mut train = config.train.clone();
        train.defense = Defense::Tsp;
        train.tsp.gamma = *gamma;
        run_fold(dataset, fold, *seed, &config.model, &train, &config.eval_attack, config.eval_batch)
            .map(|(_, outcome)| outcome)
    })?;
    let per_point = config.seeds.len() * folds.len();
    let points = gammas
        .iter()
        .zip(outcomes.chunks(per_point))
        .map(|(&gamma, runs)| {
            let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
            Ok(SweepPoint {
                gamma,
                runs: runs.to_vec(),
                aggregate: aggregate(&reports)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport { points })
}

fn pm(stat: Option<MeanStd>) -> String {
    stat.map_or_else(|| "-".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std))
}

impl AblationReport {
    pub fn arm(&self, defense: Defense) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.defense == defense)
    }

    /// One row per arm with clean and robust columns.
    pub fn to_text(&self) -> String {
        let mut rows = vec![[
            "arm".to_string(),
            "Accuracy".to_string(),
            "F1".to_string(),
            "R-Accuracy".to_string(),
            "R-F1".to_string(),
        ]];
        for arm in &self.arms {
            let a = &arm.aggregate;
            rows.push([
                arm.defense.to_string(),
                pm(Some(a.accuracy)),
                pm(Some(a.macro_f1)),
                pm(a.r_accuracy),
                pm(a.r_f1),
            ]);
        }
        align(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "arm,runs,accuracy_mean,accuracy_std,f1_mean,f1_std,r_accuracy_mean,r_accuracy_std,r_f1_mean,r_f1_std\n",
        );
        for arm in &self.arms {
            let a = &arm.aggregate;
            out.push_str(&format!(
                "{},{},{}\n",
                arm.defense,
                a.runs,
                csv_stats(&[Some(a.accuracy), Some(a.macro_f1), a.r_accuracy, a.r_f1])
            ));
        }
        out
    }
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "gamma,runs,accuracy_mean,accuracy_std,f1_mean,f1_std,r_accuracy_mean,r_accuracy_std,r_f1_mean,r_f1_std\n",
        );
        for p in &self.points {
            let a = &p.aggregate;
            out.push_str(&format!(
                "{},{},{}\n",
                p.gamma,
                a.runs,
                csv_stats(&[Some(a.accuracy), Some(a.macro_f1), a.r_accuracy, a.r_f1])
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![[
            "gamma".to_string(),
            "Accuracy".to_string(),
            "R-Accuracy".to_string(),
            "R-F1".to_string(),
        ]];
        for p in &self.points {
            let a = &p.aggregate;
            rows.push([p.gamma.to_string(), pm(Some(a.accuracy)), pm(a.r_accuracy), pm(a.r_f1)]);
        }
        align(&rows)
    }
}

fn csv_stats(stats: &[Option<MeanStd>]) -> String {
    stats
        .iter()
        .map(|s| s.map_or_else(|| ",".to_string(), |s| format!("{},{}", s.mean, s.std)))
        .collect::<Vec<_>>()
        .join(",")
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (cell, &w))| {
                let pad = w - cell.chars().count();
                if j == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
