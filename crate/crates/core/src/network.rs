//! The interface shared by every trainable classifier, plus the parameter
//! registry and gradient map it exposes.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Mode, Precision, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What a parameter tensor does inside its layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    /// Layer group, e.g. `c1.conv`; the unit of per-layer norms.
    pub layer: String,
    pub role: ParamRole,
    pub value: Tensor,
}

/// Ordered, name-unique parameter registry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    entries: Vec<Param>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: &str, role: ParamRole, value: Tensor) -> Result<usize> {
        let suffix = match role {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Scale => "scale",
            ParamRole::Shift => "shift",
        };
        let name = format!("{layer}.{suffix}");
        if self.index_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.push(Param {
            name,
            layer: layer.to_string(),
            role,
            value,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.entries[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.entries[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.entries[i])
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|p| p.name.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }
}

/// Parameter name to gradient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientMap(BTreeMap<String, Tensor>);

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.0.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }
}

/// Output of [`Network::record`].
pub struct Recorded {
    pub logits: Var,
    /// Tape handles of the parameters, aligned with [`Network::params`].
    pub params: Vec<Var>,
    /// Batch statistics of every batch-norm layer (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// A differentiable classifier over fixed-size samples.
pub trait Network: Clone + Send + Sync {
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn mode(&self) -> Mode;
    fn set_mode(&mut self, mode: Mode);
    /// Dimensions of a single input sample (without the batch axis).
    fn sample_dims(&self) -> &[usize];
    fn num_classes(&self) -> usize;

    fn precision(&self) -> Precision {
        Precision::F64
    }

    /// Records a forward pass of `input [B, ..sample_dims]` on `tape`.
    fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: Var,
        mode: Mode,
        track_params: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Recorded>;

    /// Folds train-mode batch statistics into running estimates.
    fn apply_batch_stats(&mut self, _stats: &[BatchStats]) {}
}

/// Which gradients [`loss_and_gradients`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub params: bool,
    pub input: bool,
}

impl GradRequest {
    pub const PARAMS: Self = Self {
        params: true,
        input: false,
    };
    pub const INPUT: Self = Self {
        params: false,
        input: true,
    };
    pub const NONE: Self = Self {
        params: false,
        input: false,
    };
}

/// Mean cross-entropy and requested gradients at the current parameters.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub param_grads: Option<GradientMap>,
    pub input_grad: Option<Tensor>,
    pub batch_stats: Vec<BatchStats>,
}

fn check_batch<N: Network>(net: &N, batch: &Tensor) -> Result<()> {
    let shape = batch.shape();
    if shape.len() != net.sample_dims().len() + 1 || &shape[1..] != net.sample_dims() {
        return Err(Error::shape(
            "forward",
            format!(
                "batch {shape:?} does not match sample dims {:?}",
                net.sample_dims()
            ),
        ));
    }
    Ok(())
}

/// Logits for `batch` in the network's current mode.
pub fn forward<N: Network>(net: &N, batch: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
    forward_in(net, batch, net.mode(), rng)
}

/// Logits for `batch` in an explicit mode. Batch statistics are discarded.
pub fn forward_in<N: Network>(
    net: &N,
    batch: &Tensor,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Tensor> {
    check_batch(net, batch)?;
    let mut tape = Tape::with_precision(net.precision());
    let x = tape.leaf_as(batch, false);
    let rec = net.record(&mut tape, x, mode, false, rng)?;
    Ok(tape.to_tensor(rec.logits))
}

/// Mean cross-entropy of `net` on `(batch, labels)` and, on request, its
/// gradients with respect to the parameters and/or the input.
pub fn loss_and_gradients<N: Network>(
    net: &N,
    batch: &Tensor,
    labels: &[usize],
    mode: Mode,
    request: GradRequest,
    rng: &mut dyn RngCore,
) -> Result<LossEval> {
    check_batch(net, batch)?;
    let mut tape = Tape::with_precision(net.precision());
    let x = tape.leaf_as(batch, request.input);
    let rec = net.record(&mut tape, x, mode, request.params, rng)?;
    let loss_var = tape.softmax_cross_entropy(rec.logits, labels)?;
    let loss = tape.scalar(loss_var);
    if !request.params && !request.input {
        return Ok(LossEval {
            loss,
            param_grads: None,
            input_grad: None,
            batch_stats: rec.batch_stats,
        });
    }
    let grads = tape.backward(loss_var)?;
    let param_grads = request.params.then(|| {
        let mut map = GradientMap::new();
        for (param, &var) in net.params().iter().zip(&rec.params) {
            map.insert(param.name.clone(), grads.get_or_zero(var));
        }
        map
    });
    let input_grad = request.input.then(|| grads.get_or_zero(x));
    Ok(LossEval {
        loss,
        param_grads,
        input_grad,
        batch_stats: rec.batch_stats,
    })
}

/// Multinomial logistic regression on the flattened sample.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    params: Params,
    dims: Vec<usize>,
    classes: usize,
    mode: Mode,
}

impl LinearClassifier {
    pub fn new(sample_dims: &[usize], classes: usize) -> Self {
        let features: usize = sample_dims.iter().product();
        let mut params = Params::new();
        params
            .push("linear", ParamRole::Weight, Tensor::zeros(&[features, classes]))
            .expect("fresh registry");
        params
            .push("linear", ParamRole::Bias, Tensor::zeros(&[classes]))
            .expect("fresh registry");
        Self {
            params,
            dims: sample_dims.to_vec(),
            classes,
            mode: Mode::Train,
        }
    }
}

impl Network for LinearClassifier {
    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn sample_dims(&self) -> &[usize] {
        &self.dims
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: Var,
        _mode: Mode,
        track_params: bool,
        _rng: &mut dyn RngCore,
    ) -> Result<Recorded> {
        let w = tape.leaf_as(&self.params.get(0).value, track_params);
        let b = tape.leaf_as(&self.params.get(1).value, track_params);
        let flat = tape.flatten(input)?;
        let logits = tape.dense(flat, w, b)?;
        Ok(Recorded {
            logits,
            params: vec![w, b],
            batch_stats: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{rng_for, Purpose};

    #[test]
    fn duplicate_names_rejected() {
        let mut p = Params::new();
        p.push("a", ParamRole::Weight, Tensor::zeros(&[1])).unwrap();
        assert!(p.push("a", ParamRole::Weight, Tensor::zeros(&[1])).is_err());
        p.push("a", ParamRole::Bias, Tensor::zeros(&[1])).unwrap();
        assert_eq!(p.names(), vec!["a.weight", "a.bias"]);
    }

    #[test]
    fn zero_linear_model_has_zero_input_gradient() {
        let net = LinearClassifier::new(&[2, 3], 3);
        let x = Tensor::from_fn(&[4, 2, 3], |i| i as f64);
        let mut rng = rng_for(0, Purpose::Attack, 0);
        let eval = loss_and_gradients(&net, &x, &[0, 1, 2, 0], Mode::Eval, GradRequest::INPUT, &mut rng)
            .unwrap();
        assert!(eval.input_grad.unwrap().data().iter().all(|&g| g == 0.0));
        assert!((eval.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_dims_are_checked() {
        let net = LinearClassifier::new(&[2, 3], 3);
        let x = Tensor::zeros(&[4, 3, 2]);
        let mut rng = rng_for(0, Purpose::Attack, 0);
        assert!(forward(&net, &x, &mut rng).is_err());
    }
}
