//! Run configuration: a flat `key = value` file with dotted section names.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default, so an empty file is a valid configuration. Unknown or repeated
//! keys are errors. [`RunConfig::to_text`] writes every key with its resolved
//! value, and reading that text back gives the same configuration.

use std::path::{Path, PathBuf};

use robust_eeg::attack::{Attack, AttackKind, Norm};
use robust_eeg::autodiff::Precision;
use robust_eeg::eval::AblationConfig;
use robust_eeg::model::ModelConfig;
use robust_eeg::train::{Defense, PerturbedSet, TrainConfig};

use crate::CliError;

pub const DEFAULT_GAMMAS: [f64; 5] = [0.0, 0.005, 0.01, 0.03, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Input dimensions are taken from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Attack used to score trained models. Shares the threat model of the
    /// training attack.
    pub eval_attack: Attack,
    pub eval_batch: usize,
    /// `None` runs every fold.
    pub folds: Option<Vec<usize>>,
    /// Seeds of the ablation and the sweep; `None` uses `seed` alone.
    pub seeds: Option<Vec<u64>>,
    pub jobs: usize,
    pub gammas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            dataset: None,
            out: PathBuf::from("runs"),
            model: ModelConfig::default(),
            eval_attack: train.eval_attack,
            train,
            eval_batch: 64,
            folds: None,
            seeds: None,
            jobs: 0,
            gammas: DEFAULT_GAMMAS.to_vec(),
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::config(format!("`{key}`: cannot read `{value}` as {expected}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value, expected))
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(|item| num(key, item.trim(), expected))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parsed<T: std::str::FromStr<Err = robust_eeg::Error>>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|e: robust_eeg::Error| CliError::config(format!("`{key}`: {e}")))
}

fn kind_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Fgsm => "fgsm",
        AttackKind::Pgd => "pgd",
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v, "an unsigned integer")?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "jobs" => self.jobs = num(key, v, "an unsigned integer")?,
            "folds" => {
                self.folds = if v == "all" { None } else { Some(list(key, v, "fold indices")?) }
            }
            "seeds" => {
                self.seeds = if v == "default" { None } else { Some(list(key, v, "seeds")?) }
            }
            "gammas" => self.gammas = list(key, v, "numbers")?,

            "model.classes" => self.model.num_classes = num(key, v, "an unsigned integer")?,
            "model.dropout" => self.model.dropout_rate = num(key, v, "a number")?,
            "model.bn_eps" => self.model.bn_eps = num(key, v, "a number")?,
            "model.bn_momentum" => self.model.bn_momentum = num(key, v, "a number")?,
            "model.precision" => {
                self.model.precision = match v {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => return Err(bad(key, v, "f32 or f64")),
                }
            }

            "train.defense" => t.defense = parsed::<Defense>(key, v)?,
            "train.epochs" => t.epochs = num(key, v, "an unsigned integer")?,
            "train.batch_size" => t.batch_size = num(key, v, "an unsigned integer")?,
            "train.lr" => t.adam.lr = num(key, v, "a number")?,
            "train.beta1" => t.adam.beta1 = num(key, v, "a number")?,
            "train.beta2" => t.adam.beta2 = num(key, v, "a number")?,
            "train.adam_eps" => t.adam.eps = num(key, v, "a number")?,
            "train.patience" => {
                t.patience = if v == "none" { None } else { Some(num(key, v, "an unsigned integer or none")?) }
            }
            "train.monitor_limit" => t.monitor_limit = num(key, v, "an unsigned integer")?,
            "train.monitor_robust" => t.monitor_robust = boolean(key, v)?,

            "tsp.gamma" => t.tsp.gamma = num(key, v, "a number")?,
            "tsp.eta2" => t.tsp.eta2 = num(key, v, "a number")?,
            "tsp.ascent_steps" => t.tsp.ascent_steps = num(key, v, "an unsigned integer")?,
            "tsp.perturbed" => {
                t.tsp.perturbed = match v {
                    "weights" => PerturbedSet::Weights,
                    "all" => PerturbedSet::All,
                    _ => return Err(bad(key, v, "weights or all")),
                }
            }
            "tsp.persist" => t.tsp.persist = boolean(key, v)?,

            "threat.norm" => {
                let norm: Norm = parsed(key, v)?;
                t.attack.threat.norm = norm;
                self.eval_attack.threat.norm = norm;
            }
            "threat.epsilon" => {
                let eps: f64 = num(key, v, "a number")?;
                t.attack.threat.epsilon = eps;
                self.eval_attack.threat.epsilon = eps;
            }

            "attack.kind" => t.attack.config.kind = parsed(key, v)?,
            "attack.steps" => t.attack.config.steps = num(key, v, "an unsigned integer")?,
            "attack.step_size" => t.attack.config.step_size = num(key, v, "a number")?,
            "attack.random_init" => t.attack.config.random_init = boolean(key, v)?,

            "eval.kind" => self.eval_attack.config.kind = parsed(key, v)?,
            "eval.steps" => self.eval_attack.config.steps = num(key, v, "an unsigned integer")?,
            "eval.step_size" => self.eval_attack.config.step_size = num(key, v, "a number")?,
            "eval.random_init" => self.eval_attack.config.random_init = boolean(key, v)?,
            "eval.batch" => self.eval_batch = num(key, v, "an unsigned integer")?,

            _ => return Err(CliError::config(format!("unknown key `{key}`"))),
        }
        self.train.eval_attack = self.eval_attack;
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let a = &t.attack;
        let e = &self.eval_attack;
        let norm = match a.threat.norm {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        };
        vec![
            ("seed", self.seed.to_string()),
            ("dataset", self.dataset.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("out", self.out.display().to_string()),
            ("jobs", self.jobs.to_string()),
            ("folds", self.folds.as_ref().map_or("all".into(), |f| join(f))),
            ("seeds", join(&self.seed_list())),
            ("gammas", join(&self.gammas)),
            ("model.classes", self.model.num_classes.to_string()),
            ("model.dropout", self.model.dropout_rate.to_string()),
            ("model.bn_eps", self.model.bn_eps.to_string()),
            ("model.bn_momentum", self.model.bn_momentum.to_string()),
            (
                "model.precision",
                match self.model.precision {
                    Precision::F64 => "f64".into(),
                    Precision::F32 => "f32".into(),
                },
            ),
            ("train.defense", t.defense.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.beta1", t.adam.beta1.to_string()),
            ("train.beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.patience", t.patience.map_or("none".into(), |p| p.to_string())),
            ("train.monitor_limit", t.monitor_limit.to_string()),
            ("train.monitor_robust", t.monitor_robust.to_string()),
            ("tsp.gamma", t.tsp.gamma.to_string()),
            ("tsp.eta2", t.tsp.eta2.to_string()),
            ("tsp.ascent_steps", t.tsp.ascent_steps.to_string()),
            (
                "tsp.perturbed",
                match t.tsp.perturbed {
                    PerturbedSet::Weights => "weights".into(),
                    PerturbedSet::All => "all".into(),
                },
            ),
            ("tsp.persist", t.tsp.persist.to_string()),
            ("threat.norm", norm.into()),
            ("threat.epsilon", a.threat.epsilon.to_string()),
            ("attack.kind", kind_name(a.config.kind).into()),
            ("attack.steps", a.config.steps.to_string()),
            ("attack.step_size", a.config.step_size.to_string()),
            ("attack.random_init", a.config.random_init.to_string()),
            ("eval.kind", kind_name(e.config.kind).into()),
            ("eval.steps", e.config.steps.to_string()),
            ("eval.step_size", e.config.step_size.to_string()),
            ("eval.random_init", e.config.random_init.to_string()),
            ("eval.batch", self.eval_batch.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::config(format!("line {}: `{key}` given twice", n + 1)));
            }
            config
                .set(key, value)
                .map_err(|e| CliError::config(format!("line {}: {}", n + 1, e.message)))?;
        }
        Ok(config)
    }

    /// Reads `path` (or starts from the defaults) and applies `key=value`
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override `{item}` is not key=value")))?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    /// The model for samples of shape `dims`.
    pub fn model_for(&self, dims: [usize; 3]) -> ModelConfig {
        ModelConfig {
            subbands: dims[0],
            channels: dims[1],
            timesteps: dims[2],
            ..self.model.clone()
        }
    }

    pub fn ablation(&self, dims: [usize; 3]) -> AblationConfig {
        AblationConfig {
            model: self.model_for(dims),
            train: self.train.clone(),
            eval_attack: self.eval_attack,
            eval_batch: self.eval_batch,
            folds: self.folds.clone(),
            seeds: self.seed_list(),
            jobs: self.jobs,
        }
    }

    pub fn dataset_path(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::config("no dataset given (set `dataset` or pass --dataset)"))
    }
}
