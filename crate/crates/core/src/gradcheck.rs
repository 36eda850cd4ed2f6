//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Padding, Tape, Var};
use crate::error::Result;
use crate::model::{IncModel, ModelConfig};
use crate::network::{loss_and_gradients, GradRequest, Network};
use crate::tensor::Tensor;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element `i` of `at`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, at: &Tensor, h: f64) -> Tensor {
    let indices: Vec<usize> = (0..at.numel()).collect();
    let values = finite_diff_at(&mut f, at, h, &indices);
    Tensor::new(at.shape(), values).expect("same shape as input")
}

/// Central differences at a subset of element indices.
pub fn finite_diff_at(
    mut f: impl FnMut(&Tensor) -> f64,
    at: &Tensor,
    h: f64,
    indices: &[usize],
) -> Vec<f64> {
    let mut probe = at.clone();
    indices
        .iter()
        .map(|&i| {
            let original = probe.data()[i];
            probe.data_mut()[i] = original + h;
            let plus = f(&probe);
            probe.data_mut()[i] = original - h;
            let minus = f(&probe);
            probe.data_mut()[i] = original;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Step used by the built-in suite.
pub const SUITE_STEP: f64 = 1e-5;

/// Largest relative error the suite accepts.
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Settings of [`run_suite`]: the model input size and the seeds to repeat
/// every check with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub subbands: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub seeds: Vec<u64>,
    /// Entries probed per parameter tensor of the full model.
    pub probes: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            subbands: 2,
            channels: 16,
            timesteps: 16,
            seeds: vec![1, 2, 3, 4, 5],
            probes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < SUITE_TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces `out` to a scalar through a fixed random projection and a
/// cross-entropy, so every output element carries a distinct weight.
fn scalarize(tape: &mut Tape<'_>, out: Var, proj: &Tensor) -> Result<Var> {
    let p = tape.leaf_owned(proj.clone());
    let z = tape.leaf_owned(Tensor::zeros(&[proj.shape()[1]]));
    let flat = tape.flatten(out)?;
    let logits = tape.dense(flat, p, z)?;
    let labels: Vec<usize> = (0..tape.shape(logits)[0]).map(|i| i % 3).collect();
    tape.softmax_cross_entropy(logits, &labels)
}

type Op<'f> = &'f dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// Worst relative error over the gradients of every input of `op`.
fn check_op(inputs: &[Tensor], op: Op<'_>, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_as(t, false)).collect();
        let out = op(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let proj = random(&[out_shape[1..].iter().product(), 3], &mut rng);
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf_as(t, false)).collect();
        let out = op(&mut tape, &vars)?;
        let l = scalarize(&mut tape, out, &proj)?;
        Ok(tape.scalar(l))
    };
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_as(t, true)).collect();
        let out = op(&mut tape, &vars)?;
        let l = scalarize(&mut tape, out, &proj)?;
        let grads = tape.backward(l)?;
        vars.iter().map(|&v| grads.get_or_zero(v)).collect()
    };
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut failure = None;
        let numeric = finite_diff_grad(
            |t| {
                let mut xs = inputs.to_vec();
                xs[k] = t.clone();
                eval(&xs).unwrap_or_else(|e| {
                    failure = Some(e);
                    f64::NAN
                })
            },
            input,
            SUITE_STEP,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(max_relative_error(analytic[k].data(), numeric.data()));
    }
    Ok(worst)
}

fn layer_checks(seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (padding, stride, k) in [
        (Padding::Same, (1, 1), 3),
        (Padding::Same, (1, 1), 2),
        (Padding::Valid, (1, 1), 3),
        (Padding::Valid, (2, 1), 2),
        (Padding::Same, (2, 2), 5),
    ] {
        let inputs = [
            random(&[2, 3, 5, 4], &mut rng),
            random(&[2, 3, k, k], &mut rng),
            random(&[2], &mut rng),
        ];
        let op = move |t: &mut Tape<'_>, v: &[Var]| t.conv2d(v[0], v[1], v[2], padding, stride);
        out.push((format!("conv2d {padding:?} k{k} s{}x{}", stride.0, stride.1), check_op(&inputs, &op, seed)?));
    }

    // Distinct values at least 1/256 apart, so no finite-difference step can
    // change which element wins a pooling window.
    let mut order: Vec<usize> = (0..256).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(&[2, 2, 8, 8], order.iter().map(|&k| k as f64 / 256.0).collect())?;
    let valid = |t: &mut Tape<'_>, v: &[Var]| t.maxpool2d(v[0], (4, 4), (4, 4), Padding::Valid);
    out.push(("maxpool valid".into(), check_op(std::slice::from_ref(&x), &valid, seed)?));
    let same = |t: &mut Tape<'_>, v: &[Var]| t.maxpool2d(v[0], (3, 3), (1, 1), Padding::Same);
    out.push(("maxpool same".into(), check_op(&[x], &same, seed)?));

    let relu = |t: &mut Tape<'_>, v: &[Var]| Ok(t.relu(v[0]));
    out.push(("relu".into(), check_op(&[random(&[3, 2, 2, 2], &mut rng)], &relu, seed)?));

    let rm: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
    let rv: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    for mode in [Mode::Train, Mode::Eval] {
        let inputs = [random(&[4, 3, 2, 3], &mut rng), random(&[3], &mut rng), random(&[3], &mut rng)];
        let op = |t: &mut Tape<'_>, v: &[Var]| {
            t.batchnorm2d(v[0], v[1], v[2], &rm, &rv, mode, 1e-5).map(|(y, _)| y)
        };
        out.push((format!("batchnorm {mode:?}"), check_op(&inputs, &op, seed)?));
    }

    let dropout = move |t: &mut Tape<'_>, v: &[Var]| {
        let mut mask = ChaCha8Rng::seed_from_u64(seed);
        t.dropout(v[0], 0.3, Mode::Train, &mut mask)
    };
    out.push(("dropout".into(), check_op(&[random(&[2, 1, 4, 4], &mut rng)], &dropout, seed)?));

    let inputs = [random(&[4, 5], &mut rng), random(&[5, 6], &mut rng), random(&[6], &mut rng)];
    let dense = |t: &mut Tape<'_>, v: &[Var]| t.dense(v[0], v[1], v[2]);
    out.push(("dense".into(), check_op(&inputs, &dense, seed)?));

    let inputs = [
        random(&[2, 1, 2, 3], &mut rng),
        random(&[2, 3, 2, 3], &mut rng),
        random(&[2, 2, 2, 3], &mut rng),
    ];
    let concat = |t: &mut Tape<'_>, v: &[Var]| t.concat_channels(v);
    out.push(("concat".into(), check_op(&inputs, &concat, seed)?));

    let z = random(&[4, 3], &mut rng);
    let labels = [2, 0, 1, 1];
    let ce = |z: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(z);
        let l = tape.softmax_cross_entropy(v, &labels)?;
        Ok(tape.scalar(l))
    };
    let analytic = {
        let tracked = z.clone().tracked(true);
        let mut tape = Tape::new();
        let v = tape.leaf(&tracked);
        let l = tape.softmax_cross_entropy(v, &labels)?;
        tape.backward(l)?.get_or_zero(v)
    };
    let numeric = finite_diff_grad(|t| ce(t).unwrap_or(f64::NAN), &z, SUITE_STEP);
    out.push(("cross-entropy".into(), max_relative_error(analytic.data(), numeric.data())));
    Ok(out)
}

/// Full model in eval mode with running statistics moved away from their
/// initial values: every parameter tensor and the input are probed.
fn model_checks(config: &SuiteConfig, seed: u64) -> Result<Vec<(String, f64)>> {
    let model_config = ModelConfig {
        subbands: config.subbands,
        channels: config.channels,
        timesteps: config.timesteps,
        ..ModelConfig::default()
    };
    let dims = model_config.sample_dims();
    let mut model = IncModel::new(model_config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for _ in 0..3 {
        let x = random(&[4, dims[0], dims[1], dims[2]], &mut rng);
        let eval = loss_and_gradients(&model, &x, &[0, 1, 2, 0], Mode::Train, GradRequest::NONE, &mut rng)?;
        model.apply_batch_stats(&eval.batch_stats);
    }
    let x = random(&[2, dims[0], dims[1], dims[2]], &mut rng);
    let labels = [1, 2];
    let grads = loss_and_gradients(
        &model,
        &x,
        &labels,
        Mode::Eval,
        GradRequest { params: true, input: true },
        &mut rng,
    )?;
    let loss_at = |m: &IncModel, input: &Tensor| {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        loss_and_gradients(m, input, &labels, Mode::Eval, GradRequest::NONE, &mut r)
            .map_or(f64::NAN, |e| e.loss)
    };
    let param_grads = grads.param_grads.expect("requested");
    let mut worst = 0.0f64;
    for idx in 0..model.params().len() {
        let param = model.params().get(idx).clone();
        let probes: Vec<usize> = (0..config.probes).map(|_| rng.random_range(0..param.value.numel())).collect();
        let numeric = finite_diff_at(
            |t| {
                let mut m = model.clone();
                m.params_mut().get_mut(idx).value = t.clone();
                loss_at(&m, &x)
            },
            &param.value,
            SUITE_STEP,
            &probes,
        );
        let g = param_grads
            .get(&param.name)
            .ok_or_else(|| crate::Error::MissingGradient(param.name.clone()))?;
        let analytic: Vec<f64> = probes.iter().map(|&i| g.data()[i]).collect();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    let input_grad = grads.input_grad.expect("requested");
    let probes: Vec<usize> = (0..4 * config.probes).map(|_| rng.random_range(0..x.numel())).collect();
    let numeric = finite_diff_at(|t| loss_at(&model, t), &x, SUITE_STEP, &probes);
    let analytic: Vec<f64> = probes.iter().map(|&i| input_grad.data()[i]).collect();
    Ok(vec![
        ("model parameters".into(), worst),
        ("model input".into(), max_relative_error(&analytic, &numeric)),
    ])
}

/// Every layer operation and the full model, once per seed, in double
/// precision.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for &seed in &config.seeds {
        for (name, max_rel_err) in layer_checks(seed)?.into_iter().chain(model_checks(config, seed)?) {
            results.push(CheckResult { name, seed, max_rel_err });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.7 - 1.0);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-5);
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(|t| t.data()[0].powi(2), &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
