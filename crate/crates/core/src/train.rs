//! Adam and the three training regimes: standard, adversarial training (AT)
//! and two-sided perturbation (TSP).
//!
//! A TSP step perturbs the inputs adversarially, then looks for the
//! adversarial weight perturbation `v` inside the per-layer budget
//! `‖v_l‖ ≤ γ‖θ_l‖`, takes the optimizer step at `θ + v`, and finally removes
//! `v` again:
//!
//! ```text
//! x'  = attack(θ, x)
//! v   = Π_γ(v + η₂ ∇_v L(θ + v, x'))        (ascent_steps times)
//! θ  ← (θ + v) - Adam(∇ L(θ + v, x')) - v
//! ```
//!
//! Every step forks its RNG into attack, dropout and ascent streams in that
//! order, whatever the regime. With a zero budget TSP therefore reproduces
//! AT exactly, and AT with a zero radius reproduces standard training.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::attack::Attack;
use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_robust};
use crate::network::{loss_and_gradients, GradRequest, GradientMap, Network, ParamRole, Params};
use crate::samples::Samples;
use crate::seeding::{derive_seed, fork, rng_for, Purpose};
use crate::tensor::{norm_l2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 9e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter of a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &Params, config: AdamConfig) -> Self {
        Self {
            config,
            names: params.names(),
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of parameter `name`.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((&self.m[i], &self.v[i]))
    }
}

/// One Adam update of every parameter in place.
///
/// All gradients are checked before anything changes; a missing one is an
/// error naming the parameter.
pub fn adam_step(state: &mut AdamState, params: &mut Params, grads: &GradientMap) -> Result<()> {
    if params.names() != state.names {
        return Err(Error::Config("optimizer state belongs to a different registry".into()));
    }
    let mut ordered = Vec::with_capacity(params.len());
    for p in params.iter() {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of `{}` has shape {:?}, expected {:?}", p.name, g.shape(), p.value.shape()),
            ));
        }
        ordered.push(g.data());
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(ordered)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defense {
    None,
    At,
    Tsp,
}

impl std::str::FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Defense::None),
            "at" => Ok(Defense::At),
            "tsp" => Ok(Defense::Tsp),
            other => Err(Error::Config(format!(
                "unknown defense `{other}` (expected none, at or tsp)"
            ))),
        }
    }
}

impl std::fmt::Display for Defense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Defense::None => "none",
            Defense::At => "at",
            Defense::Tsp => "tsp",
        })
    }
}

/// Which parameters receive a weight perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbedSet {
    /// Convolution and dense weights only.
    Weights,
    /// Every parameter, including biases and batch-norm scale/shift.
    All,
}

impl PerturbedSet {
    fn contains(self, role: ParamRole) -> bool {
        match self {
            PerturbedSet::Weights => role == ParamRole::Weight,
            PerturbedSet::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TspConfig {
    /// Relative per-layer budget: `‖v_l‖ ≤ gamma · ‖θ_l‖`.
    pub gamma: f64,
    /// Ascent step on `v`.
    pub eta2: f64,
    pub ascent_steps: usize,
    pub perturbed: PerturbedSet,
    /// Carry `v` over to the next mini-batch instead of restarting from zero.
    pub persist: bool,
}

impl Default for TspConfig {
    fn default() -> Self {
        Self {
            gamma: 0.03,
            eta2: 0.01,
            ascent_steps: 1,
            perturbed: PerturbedSet::Weights,
            persist: false,
        }
    }
}

impl TspConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return Err(Error::Config(format!("eta2 must be non-negative, got {}", self.eta2)));
        }
        if self.ascent_steps == 0 {
            return Err(Error::Config("ascent_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One perturbed parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedLayer {
    pub name: String,
    index: usize,
    pub v: Tensor,
}

/// Adversarial weight perturbation, one tensor per perturbed parameter.
/// Each tensor is its own unit for the norm budget.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPerturbation {
    layers: Vec<PerturbedLayer>,
}

impl WeightPerturbation {
    pub fn zeros(params: &Params, set: PerturbedSet) -> Self {
        let layers = params
            .iter()
            .enumerate()
            .filter(|(_, p)| set.contains(p.role))
            .map(|(index, p)| PerturbedLayer {
                name: p.name.clone(),
                index,
                v: Tensor::zeros(p.value.shape()),
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[PerturbedLayer] {
        &self.layers
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.iter().find(|l| l.name == name).map(|l| &l.v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.layers.iter_mut().find(|l| l.name == name).map(|l| &mut l.v)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.v.data().iter().all(|&x| x == 0.0))
    }

    /// `θ += sign · v` for every perturbed tensor. All-zero tensors are
    /// skipped so a zero perturbation leaves every bit of `θ` alone.
    pub fn add_to(&self, params: &mut Params, sign: f64) -> Result<()> {
        for layer in &self.layers {
            let p = params.get_mut(layer.index);
            if p.name != layer.name || p.value.shape() != layer.v.shape() {
                return Err(Error::Config(format!(
                    "perturbation `{}` does not match the parameter registry",
                    layer.name
                )));
            }
            if layer.v.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            for (t, &d) in p.value.data_mut().iter_mut().zip(layer.v.data()) {
                *t += sign * d;
            }
        }
        Ok(())
    }

    /// `‖v_l‖ / (γ‖θ_l‖)` for every layer: 0 for a zero `v_l`, infinite for
    /// a nonzero `v_l` on a zero budget.
    pub fn budget_ratios(&self, params: &Params, gamma: f64) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| {
                let v = l.v.norm_l2();
                let budget = gamma * params.get(l.index).value.norm_l2();
                if v == 0.0 {
                    0.0
                } else if budget == 0.0 {
                    f64::INFINITY
                } else {
                    v / budget
                }
            })
            .collect()
    }
}

/// Rescales every `v_l` to norm exactly `γ‖θ_l‖`. A zero `v_l`, or a layer
/// whose weights are all zero, gets `v_l = 0`.
pub fn project_weight_perturbation(
    mut v: WeightPerturbation,
    params: &Params,
    gamma: f64,
) -> WeightPerturbation {
    for layer in &mut v.layers {
        let norm = layer.v.norm_l2();
        let budget = gamma * params.get(layer.index).value.norm_l2();
        if norm > 0.0 && budget > 0.0 {
            let scale = budget / norm;
            layer.v.data_mut().iter_mut().for_each(|x| *x *= scale);
        } else {
            layer.v.data_mut().fill(0.0);
        }
    }
    v
}

/// `v + η₂ ∇_v L(θ + v)` on the adversarial batch, with the network in train
/// mode. The gradient is taken on a shifted copy, so `net` keeps every bit.
pub fn weight_ascent<N: Network>(
    net: &N,
    x_adv: &Tensor,
    labels: &[usize],
    v: &WeightPerturbation,
    eta2: f64,
    rng: &mut dyn RngCore,
) -> Result<WeightPerturbation> {
    let mut shifted = net.clone();
    v.add_to(shifted.params_mut(), 1.0)?;
    let eval = loss_and_gradients(&shifted, x_adv, labels, Mode::Train, GradRequest::PARAMS, rng)?;
    let grads = eval.param_grads.expect("parameter gradients requested");
    let mut out = v.clone();
    for layer in &mut out.layers {
        let g = grads
            .get(&layer.name)
            .ok_or_else(|| Error::MissingGradient(layer.name.clone()))?;
        for (d, &gv) in layer.v.data_mut().iter_mut().zip(g.data()) {
            *d += eta2 * gv;
        }
    }
    Ok(out)
}

struct StepStreams {
    attack: rand_chacha::ChaCha8Rng,
    dropout: rand_chacha::ChaCha8Rng,
    ascent: rand_chacha::ChaCha8Rng,
}

fn split(rng: &mut dyn RngCore) -> StepStreams {
    let attack = fork(rng);
    let dropout = fork(rng);
    let ascent = fork(rng);
    StepStreams {
        attack,
        dropout,
        ascent,
    }
}

/// Train-mode gradient step on `(x, labels)`; returns the batch loss.
fn descend<N: Network>(
    net: &mut N,
    x: &Tensor,
    labels: &[usize],
    opt: &mut AdamState,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let eval = loss_and_gradients(net, x, labels, Mode::Train, GradRequest::PARAMS, rng)?;
    net.apply_batch_stats(&eval.batch_stats);
    let grads = eval.param_grads.expect("parameter gradients requested");
    adam_step(opt, net.params_mut(), &grads)?;
    Ok(eval.loss)
}

/// One step on clean data.
pub fn train_step_standard<N: Network>(
    net: &mut N,
    x: &Tensor,
    labels: &[usize],
    opt: &mut AdamState,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut streams = split(rng);
    descend(net, x, labels, opt, &mut streams.dropout)
}

/// One step on adversarial examples generated against the current weights.
pub fn train_step_at<N: Network>(
    net: &mut N,
    x: &Tensor,
    labels: &[usize],
    attack: &Attack,
    opt: &mut AdamState,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut streams = split(rng);
    let x_adv = attack.run(net, x, labels, &mut streams.attack)?;
    descend(net, &x_adv, labels, opt, &mut streams.dropout)
}

/// What a TSP step did, for auditing the weight-perturbation bookkeeping.
#[derive(Debug, Clone)]
pub struct TspStepReport {
    pub loss: f64,
    /// Largest `‖v_l‖ / (γ‖θ_l‖)` seen after any projection in this step.
    pub max_ratio: f64,
    pub projections: usize,
    /// Largest relative gap between the parameters after the step and
    /// `θ + Δ`, where `Δ` is the optimizer update taken at `θ + v`. Only
    /// rounding contributes when `v` was fully removed.
    pub revert_residual: f64,
    pub perturbation: WeightPerturbation,
}

/// One TSP step. `carry` is the previous step's perturbation when
/// [`TspConfig::persist`] is set.
#[allow(clippy::too_many_arguments)]
pub fn train_step_tsp<N: Network>(
    net: &mut N,
    x: &Tensor,
    labels: &[usize],
    attack: &Attack,
    tsp: &TspConfig,
    opt: &mut AdamState,
    carry: Option<&WeightPerturbation>,
    rng: &mut dyn RngCore,
) -> Result<TspStepReport> {
    tsp.validate()?;
    let mut streams = split(rng);
    let x_adv = attack.run(net, x, labels, &mut streams.attack)?;

    let mut v = match carry {
        Some(prev) if tsp.persist => prev.clone(),
        _ => WeightPerturbation::zeros(net.params(), tsp.perturbed),
    };
    let mut max_ratio = 0.0f64;
    let mut projections = 0;
    if tsp.gamma > 0.0 {
        for _ in 0..tsp.ascent_steps {
            v = weight_ascent(net, &x_adv, labels, &v, tsp.eta2, &mut streams.ascent)?;
            v = project_weight_perturbation(v, net.params(), tsp.gamma);
            projections += 1;
            for r in v.budget_ratios(net.params(), tsp.gamma) {
                max_ratio = max_ratio.max(r);
            }
        }
    } else {
        v = WeightPerturbation::zeros(net.params(), tsp.perturbed);
    }

    let before: Vec<Tensor> = v
        .layers
        .iter()
        .map(|l| net.params().get(l.index).value.clone())
        .collect();
    v.add_to(net.params_mut(), 1.0)?;
    let shifted: Vec<Tensor> = v
        .layers
        .iter()
        .map(|l| net.params().get(l.index).value.clone())
        .collect();
    let loss = descend(net, &x_adv, labels, opt, &mut streams.dropout)?;
    let stepped: Vec<Tensor> = v
        .layers
        .iter()
        .map(|l| net.params().get(l.index).value.clone())
        .collect();
    v.add_to(net.params_mut(), -1.0)?;

    let mut revert_residual = 0.0f64;
    for (k, layer) in v.layers.iter().enumerate() {
        let after = net.params().get(layer.index).value.data();
        let it = before[k]
            .data()
            .iter()
            .zip(shifted[k].data())
            .zip(stepped[k].data())
            .zip(layer.v.data())
            .zip(after);
        for ((((&b, &s), &st), &d), &a) in it {
            let delta = st - s;
            let scale = b.abs() + d.abs() + delta.abs();
            if scale > 0.0 {
                revert_residual = revert_residual.max((a - (b + delta)).abs() / scale);
            }
        }
    }

    Ok(TspStepReport {
        loss,
        max_ratio,
        projections,
        revert_residual,
        perturbation: v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub defense: Defense,
    /// Attack used to craft training inputs (AT and TSP).
    pub attack: Attack,
    /// Attack used for the robust accuracy in the per-epoch records.
    pub eval_attack: Attack,
    pub tsp: TspConfig,
    pub adam: AdamConfig,
    /// Stop once validation robust accuracy has not improved for this many
    /// epochs.
    pub patience: Option<usize>,
    /// Samples from each of the training and validation sets scored after
    /// every epoch; 0 turns monitoring off.
    pub monitor_limit: usize,
    /// Whether monitoring includes robust accuracy.
    pub monitor_robust: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            seed: 0,
            defense: Defense::Tsp,
            attack: Attack::default(),
            eval_attack: Attack::default(),
            tsp: TspConfig::default(),
            adam: AdamConfig::default(),
            patience: None,
            monitor_limit: 256,
            monitor_robust: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.attack.threat.validate()?;
        self.attack.config.validate()?;
        self.eval_attack.threat.validate()?;
        self.eval_attack.config.validate()?;
        self.tsp.validate()?;
        self.adam.validate()
    }
}

/// Metrics after one epoch. Monitoring fields are `None` when disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss of the optimizer steps (on adversarial inputs for AT/TSP).
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub train_racc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_racc: Option<f64>,
}

/// Weight-perturbation bookkeeping over a whole TSP run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TspAudit {
    pub steps: u64,
    pub projections: u64,
    pub max_ratio: f64,
    pub max_revert_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub steps: u64,
    pub stopped_early: bool,
    pub tsp_audit: Option<TspAudit>,
}

impl TrainingLog {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// [`fit_with`] without a progress callback.
pub fn fit<N: Network>(
    net: &mut N,
    train: &Samples,
    val: Option<&Samples>,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    fit_with(net, train, val, config, &mut |_| {})
}

/// Trains `net` for `config.epochs` epochs of shuffled mini-batches.
///
/// The run is a pure function of `(net, train, config)`: shuffling uses
/// `(seed, Shuffle, epoch)` and each step `(seed, Step, step)`. Validation
/// data only feeds the records and the early-stopping rule.
pub fn fit_with<N: Network>(
    net: &mut N,
    train: &Samples,
    val: Option<&Samples>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    config.validate()?;
    if train.sample_dims() != net.sample_dims() {
        return Err(Error::shape(
            "fit",
            format!(
                "training samples {:?} do not match network input {:?}",
                train.sample_dims(),
                net.sample_dims()
            ),
        ));
    }
    let mut log = TrainingLog {
        tsp_audit: (config.defense == Defense::Tsp).then(TspAudit::default),
        ..TrainingLog::default()
    };
    let mut opt = AdamState::new(net.params(), config.adam);
    let mut carry: Option<WeightPerturbation> = None;
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(config.seed, Purpose::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk)?;
            let mut rng = rng_for(config.seed, Purpose::Step, log.steps);
            let (x, y) = (batch.x(), batch.labels());
            let loss = match config.defense {
                Defense::None => train_step_standard(net, x, y, &mut opt, &mut rng)?,
                Defense::At => train_step_at(net, x, y, &config.attack, &mut opt, &mut rng)?,
                Defense::Tsp => {
                    let report = train_step_tsp(
                        net,
                        x,
                        y,
                        &config.attack,
                        &config.tsp,
                        &mut opt,
                        carry.as_ref(),
                        &mut rng,
                    )?;
                    let audit = log.tsp_audit.as_mut().expect("tsp audit");
                    audit.steps += 1;
                    audit.projections += report.projections as u64;
                    audit.max_ratio = audit.max_ratio.max(report.max_ratio);
                    audit.max_revert_residual =
                        audit.max_revert_residual.max(report.revert_residual);
                    if config.tsp.persist {
                        carry = Some(report.perturbation);
                    }
                    report.loss
                }
            };
            loss_sum += loss * chunk.len() as f64;
            log.steps += 1;
        }

        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: None,
            train_racc: None,
            val_loss: None,
            val_acc: None,
            val_racc: None,
        };
        if config.monitor_limit > 0 {
            let eval_seed = derive_seed(config.seed, Purpose::Evaluation, epoch as u64);
            let subset = train.head(config.monitor_limit)?;
            let (acc, _, racc) = monitor(net, &subset, config, eval_seed)?;
            record.train_acc = Some(acc);
            record.train_racc = racc;
            if let Some(val) = val {
                let subset = val.head(config.monitor_limit)?;
                let (acc, loss, racc) = monitor(net, &subset, config, eval_seed ^ 1)?;
                record.val_acc = Some(acc);
                record.val_loss = Some(loss);
                record.val_racc = racc;
            }
        }
        on_epoch(&record);
        let score = record.val_racc.or(record.val_acc);
        log.records.push(record);

        if let (Some(patience), Some(score)) = (config.patience, score) {
            if score > best {
                best = score;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(log)
}

fn monitor<N: Network>(
    net: &N,
    samples: &Samples,
    config: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64, Option<f64>)> {
    if config.monitor_robust {
        let report = evaluate_robust(net, samples, &config.eval_attack, seed, config.batch_size)?;
        let robust = report.robust.as_ref().map(|r| r.accuracy);
        Ok((report.clean.accuracy, report.clean.loss, robust))
    } else {
        let report = evaluate(net, samples, config.batch_size)?;
        Ok((report.clean.accuracy, report.clean.loss, None))
    }
}

/// Sum of squared entries over all perturbed layers, for tests and reports.
pub fn perturbation_norm(v: &WeightPerturbation) -> f64 {
    let norms: Vec<f64> = v.layers.iter().map(|l| l.v.norm_l2()).collect();
    norm_l2(&norms)
}
