//! Adversarial examples under L2 and L∞ threat models.
//!
//! Every function treats axis 0 as the batch axis: norms, projections and
//! step directions apply to each sample on its own. A tensor of rank 0 or 1
//! is a single sample.
//!
//! Attacks always differentiate the network in eval mode and never mutate
//! the inputs or the network.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::network::{loss_and_gradients, GradRequest, Network};
use crate::tensor::{norm_l2, Tensor};

/// Points whose L2 offset exceeds the radius by no more than this relative
/// slack count as inside the ball. Without it, rounding in `x + δ` can push a
/// freshly projected point just outside and projection would not be
/// idempotent.
const L2_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Norm::L2),
            "linf" | "l-inf" | "inf" => Ok(Norm::Linf),
            other => Err(Error::Config(format!("unknown norm `{other}` (expected l2 or linf)"))),
        }
    }
}

/// The set of allowed perturbations: a `norm` ball of radius `epsilon`
/// around each clean sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreatModel {
    pub norm: Norm,
    pub epsilon: f64,
}

impl Default for ThreatModel {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            epsilon: 8.0 / 255.0,
        }
    }
}

impl ThreatModel {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        let threat = Self { norm, epsilon };
        threat.validate()?;
        Ok(threat)
    }

    /// A radius of zero is accepted and means "no attack".
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be a finite non-negative number, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::Config(format!("unknown attack `{other}` (expected fgsm or pgd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// PGD iterations.
    pub steps: usize,
    /// PGD step size.
    pub step_size: f64,
    /// Start from a uniform random point in the box `[-ε, ε]` around `x`.
    pub random_init: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pgd,
            steps: 10,
            step_size: 15.0 / 255.0,
            random_init: true,
        }
    }
}

impl AttackConfig {
    pub fn fgsm() -> Self {
        Self {
            kind: AttackKind::Fgsm,
            random_init: false,
            ..Self::default()
        }
    }

    pub fn pgd(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttackKind::Pgd && self.steps == 0 {
            return Err(Error::Config("PGD needs at least one step".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("invalid step size {}", self.step_size)));
        }
        Ok(())
    }
}

/// A threat model together with the procedure that searches it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Attack {
    pub threat: ThreatModel,
    pub config: AttackConfig,
}

impl Attack {
    pub fn new(threat: ThreatModel, config: AttackConfig) -> Result<Self> {
        threat.validate()?;
        config.validate()?;
        Ok(Self { threat, config })
    }

    /// Runs the configured attack. FGSM with `random_init` takes its
    /// gradient at a random point of the box and steps from the clean input.
    pub fn run<N: Network>(
        &self,
        net: &N,
        x: &Tensor,
        labels: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<Tensor> {
        match self.config.kind {
            AttackKind::Fgsm if self.config.random_init => {
                let start = random_init(x, &self.threat, rng);
                let g = grad_wrt_input(net, &start, labels)?;
                step_from(x, &g, self.threat.epsilon, &self.threat)
            }
            AttackKind::Fgsm => fgsm(net, x, labels, &self.threat),
            AttackKind::Pgd => pgd(net, x, labels, &self.threat, &self.config, rng),
        }
    }
}

/// Number of elements per sample.
fn sample_len(t: &Tensor) -> usize {
    if t.shape().len() <= 1 {
        t.numel()
    } else {
        t.shape()[1..].iter().product()
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// `x` plus elementwise `Uniform(-ε, ε)` noise, projected onto the ball.
pub fn random_init(x: &Tensor, threat: &ThreatModel, rng: &mut dyn RngCore) -> Tensor {
    let eps = threat.epsilon;
    let noise = x.data().iter().map(|&v| v + eps * (2.0 * rng.random::<f64>() - 1.0));
    let noisy = Tensor::new(x.shape(), noise.collect()).expect("same shape");
    project(&noisy, x, threat).expect("same shape")
}

/// Nearest point (per sample) of the threat ball around `x`.
///
/// Under L∞ this clamps each coordinate to `[x - ε, x + ε]`; under L2 the
/// offset is rescaled to length ε when it is longer. Applying the projection
/// twice gives bit-identical results.
pub fn project(x_adv: &Tensor, x: &Tensor, threat: &ThreatModel) -> Result<Tensor> {
    check_same_shape("project", x_adv, x)?;
    let eps = threat.epsilon;
    let mut out = x_adv.clone();
    match threat.norm {
        Norm::Linf => {
            for (o, &c) in out.data_mut().iter_mut().zip(x.data()) {
                *o = o.clamp(c - eps, c + eps);
            }
        }
        Norm::L2 => {
            let n = sample_len(x);
            if n == 0 {
                return Ok(out);
            }
            let mut delta = vec![0.0; n];
            for (o, c) in out.data_mut().chunks_mut(n).zip(x.data().chunks(n)) {
                for ((d, &a), &b) in delta.iter_mut().zip(o.iter()).zip(c) {
                    *d = a - b;
                }
                let norm = norm_l2(&delta);
                if norm > eps * (1.0 + L2_SLACK) {
                    let scale = eps / norm;
                    for ((a, &b), &d) in o.iter_mut().zip(c).zip(&delta) {
                        *a = b + d * scale;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Steepest-ascent direction of unit size in the threat norm: the sign under
/// L∞ (with `sign(0) = 0`), the normalized gradient under L2 (zero for a zero
/// gradient).
pub fn step_direction(g: &Tensor, norm: Norm) -> Tensor {
    match norm {
        Norm::Linf => g.map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Norm::L2 => {
            let n = sample_len(g);
            let mut out = g.clone();
            if n == 0 {
                return out;
            }
            for chunk in out.data_mut().chunks_mut(n) {
                let norm = norm_l2(chunk);
                if norm > 0.0 {
                    chunk.iter_mut().for_each(|v| *v /= norm);
                } else {
                    chunk.fill(0.0);
                }
            }
            out
        }
    }
}

/// Gradient of the mean cross-entropy with respect to the input, with the
/// network in eval mode.
pub fn grad_wrt_input<N: Network>(net: &N, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    // Eval mode draws no randomness; the generator only satisfies the API.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let eval = loss_and_gradients(net, x, labels, Mode::Eval, GradRequest::INPUT, &mut unused)?;
    Ok(eval.input_grad.expect("input gradient requested"))
}

/// `Π(x + size · direction(g))`.
fn step_from(x: &Tensor, g: &Tensor, size: f64, threat: &ThreatModel) -> Result<Tensor> {
    let dir = step_direction(g, threat.norm);
    let moved = x.zip_map(&dir, |a, d| a + size * d)?;
    project(&moved, x, threat)
}

/// One step of size ε along the steepest-ascent direction at the clean input.
pub fn fgsm<N: Network>(
    net: &N,
    x: &Tensor,
    labels: &[usize],
    threat: &ThreatModel,
) -> Result<Tensor> {
    let g = grad_wrt_input(net, x, labels)?;
    step_from(x, &g, threat.epsilon, threat)
}

/// Projected gradient ascent on the loss within the threat ball.
pub fn pgd<N: Network>(
    net: &N,
    x: &Tensor,
    labels: &[usize],
    threat: &ThreatModel,
    config: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<Tensor> {
    pgd_observed(net, x, labels, threat, config, rng, &mut |_, _| {})
}

/// [`pgd`], calling `observe(t, x_t)` on the starting point (`t = 0`) and
/// after every projected step.
pub fn pgd_observed<N: Network>(
    net: &N,
    x: &Tensor,
    labels: &[usize],
    threat: &ThreatModel,
    config: &AttackConfig,
    rng: &mut dyn RngCore,
    observe: &mut dyn FnMut(usize, &Tensor),
) -> Result<Tensor> {
    config.validate()?;
    let mut current = if config.random_init {
        random_init(x, threat, rng)
    } else {
        x.clone()
    };
    observe(0, &current);
    for t in 1..=config.steps {
        let g = grad_wrt_input(net, &current, labels)?;
        let dir = step_direction(&g, threat.norm);
        let moved = current.zip_map(&dir, |a, d| a + config.step_size * d)?;
        current = project(&moved, x, threat)?;
        observe(t, &current);
    }
    Ok(current)
}

/// Largest per-sample distance from `x` in the threat norm.
pub fn max_distance(x_adv: &Tensor, x: &Tensor, norm: Norm) -> Result<f64> {
    check_same_shape("max_distance", x_adv, x)?;
    let delta = x_adv.zip_map(x, |a, b| a - b)?;
    Ok(match norm {
        Norm::Linf => delta.norm_linf(),
        Norm::L2 => {
            let n = sample_len(&delta);
            if n == 0 {
                return Ok(0.0);
            }
            delta.data().chunks(n).map(norm_l2).fold(0.0, f64::max)
        }
    })
}
