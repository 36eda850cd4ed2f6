//! The Inception-based EEG classifier.
//!
//! Inputs are `[B, subbands, channels, timesteps]`: frequency subbands act as
//! convolution channels and all pooling runs over the (channel, time) plane.
//!
//! | block     | layers                                                         |
//! |-----------|----------------------------------------------------------------|
//! | C1        | conv 64 @ 5x5 same, BN, ReLU, maxpool 4/4 valid, dropout        |
//! | Inception | b1: conv 32 @ 1x1                                              |
//! |           | b2: conv 96 @ 1x1, conv 128 @ 3x3                              |
//! |           | b3: conv 128 @ 3x3, conv 32 @ 5x5                              |
//! |           | b4: maxpool 3/1 same, conv 32 @ 5x5                            |
//! |           | concat to 224 channels                                         |
//! | C2        | conv 256 @ 5x5 same, BN, ReLU, maxpool 4/4 valid, dropout       |
//! | head      | dense 512, 256, 64 (ReLU), dense K logits                       |
//!
//! Every convolution, including those inside the Inception branches, is
//! followed by batch norm and ReLU.

pub mod weights;

use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, BatchStats, Mode, Padding, Precision, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{Network, ParamRole, Params, Recorded};
use crate::seeding::{rng_for, Purpose};
use crate::tensor::Tensor;

pub use weights::WeightFormat;

/// Shape and regularization settings of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub subbands: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            subbands: 5,
            channels: 62,
            timesteps: 16,
            num_classes: 3,
            dropout_rate: 0.3,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            precision: Precision::F64,
        }
    }
}

impl ModelConfig {
    pub fn sample_dims(&self) -> [usize; 3] {
        [self.subbands, self.channels, self.timesteps]
    }
}

#[derive(Debug, Clone)]
struct ConvUnit {
    weight: usize,
    bias: usize,
    scale: usize,
    shift: usize,
    stats: usize,
    kernel: usize,
}

#[derive(Debug, Clone)]
struct DenseUnit {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Plan {
    c1: ConvUnit,
    b1: ConvUnit,
    b2a: ConvUnit,
    b2b: ConvUnit,
    b3a: ConvUnit,
    b3b: ConvUnit,
    b4: ConvUnit,
    c2: ConvUnit,
    hidden: Vec<DenseUnit>,
    logits: DenseUnit,
    flatten: usize,
}

/// Running mean and variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub layer: String,
    pub mean: Tensor,
    pub var: Tensor,
}

const POOL: (usize, usize) = (4, 4);
const HIDDEN: [usize; 3] = [512, 256, 64];
pub const INCEPTION_WIDTHS: [usize; 4] = [32, 128, 32, 32];

/// The INC network: C1, Inception block, C2 and a dense head.
#[derive(Debug, Clone)]
pub struct IncModel {
    config: ModelConfig,
    params: Params,
    running: Vec<RunningStats>,
    plan: Plan,
    mode: Mode,
    dims: Vec<usize>,
}

struct Builder<'r> {
    params: Params,
    running: Vec<RunningStats>,
    rng: &'r mut dyn RngCore,
}

impl Builder<'_> {
    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound))
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> ConvUnit {
        let w = self.he_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel);
        let conv = format!("{name}.conv");
        let bn = format!("{name}.bn");
        let unit = ConvUnit {
            weight: self.params.push(&conv, ParamRole::Weight, w).expect("unique"),
            bias: self
                .params
                .push(&conv, ParamRole::Bias, Tensor::zeros(&[cout]))
                .expect("unique"),
            scale: self
                .params
                .push(&bn, ParamRole::Scale, Tensor::ones(&[cout]))
                .expect("unique"),
            shift: self
                .params
                .push(&bn, ParamRole::Shift, Tensor::zeros(&[cout]))
                .expect("unique"),
            stats: self.running.len(),
            kernel,
        };
        self.running.push(RunningStats {
            layer: bn,
            mean: Tensor::zeros(&[cout]),
            var: Tensor::ones(&[cout]),
        });
        unit
    }

    fn dense(&mut self, name: &str, fan_in: usize, out: usize) -> DenseUnit {
        let w = self.he_uniform(&[fan_in, out], fan_in);
        DenseUnit {
            weight: self.params.push(name, ParamRole::Weight, w).expect("unique"),
            bias: self
                .params
                .push(name, ParamRole::Bias, Tensor::zeros(&[out]))
                .expect("unique"),
        }
    }
}

fn pooled(stage: &str, extent: usize) -> Result<usize> {
    Axis::new("maxpool2d", extent, POOL.0, POOL.1, Padding::Valid)
        .map(|a| a.output)
        .map_err(|_| Error::Build {
            stage: stage.to_string(),
            detail: format!("{POOL:?} pooling window does not fit a spatial extent of {extent}"),
        })
}

impl IncModel {
    /// Builds the network with He-uniform weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.subbands == 0 || config.channels == 0 || config.timesteps == 0 {
            return Err(Error::Build {
                stage: "input".into(),
                detail: "all input dimensions must be positive".into(),
            });
        }
        if config.num_classes < 2 {
            return Err(Error::Build {
                stage: "logits".into(),
                detail: "need at least two classes".into(),
            });
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                config.dropout_rate
            )));
        }
        let h1 = pooled("c1.pool", config.channels)?;
        let w1 = pooled("c1.pool", config.timesteps)?;
        let h2 = pooled("c2.pool", h1)?;
        let w2 = pooled("c2.pool", w1)?;
        let flatten = 256 * h2 * w2;

        let mut rng = rng_for(seed, Purpose::Init, 0);
        let mut b = Builder {
            params: Params::new(),
            running: Vec::new(),
            rng: &mut rng,
        };
        let c1 = b.conv("c1", config.subbands, 64, 5);
        let b1 = b.conv("inc.b1", 64, 32, 1);
        let b2a = b.conv("inc.b2a", 64, 96, 1);
        let b2b = b.conv("inc.b2b", 96, 128, 3);
        let b3a = b.conv("inc.b3a", 64, 128, 3);
        let b3b = b.conv("inc.b3b", 128, 32, 5);
        let b4 = b.conv("inc.b4", 64, 32, 5);
        let c2 = b.conv("c2", INCEPTION_WIDTHS.iter().sum(), 256, 5);
        let mut fan_in = flatten;
        let mut hidden = Vec::new();
        for (i, &width) in HIDDEN.iter().enumerate() {
            hidden.push(b.dense(&format!("fc{}", i + 1), fan_in, width));
            fan_in = width;
        }
        let logits = b.dense("logits", fan_in, config.num_classes);

        let Builder {
            params, running, ..
        } = b;
        Ok(Self {
            dims: config.sample_dims().to_vec(),
            config,
            params,
            running,
            plan: Plan {
                c1,
                b1,
                b2a,
                b2b,
                b3a,
                b3b,
                b4,
                c2,
                hidden,
                logits,
                flatten,
            },
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.config.precision = precision;
    }

    /// Width of the flattened C2 output feeding the first dense layer.
    pub fn flatten_size(&self) -> usize {
        self.plan.flatten
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    /// Logits in the current mode.
    pub fn forward(&self, batch: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        crate::network::forward(self, batch, rng)
    }

    /// Every persistent tensor (parameters, then running statistics) by name.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.params.iter().map(|p| (p.name.clone(), &p.value)).collect();
        for s in &self.running {
            out.push((format!("{}.running_mean", s.layer), &s.mean));
            out.push((format!("{}.running_var", s.layer), &s.var));
        }
        out
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.save_weights_as(path, WeightFormat::F64)
    }

    pub fn save_weights_as(&self, path: &Path, format: WeightFormat) -> Result<()> {
        weights::write(path, &self.state(), format)
    }

    /// Loads a weight file written for the same architecture. Nothing is
    /// modified unless every entry matches.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let entries = weights::read(path)?;
        self.load_state(entries)
    }

    pub fn load_state(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .state()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if entries.len() != expected.len() {
            let first = expected
                .iter()
                .find(|(name, _)| !entries.iter().any(|(n, _)| n == name))
                .map(|(n, _)| format!("missing `{n}`"))
                .or_else(|| {
                    entries
                        .iter()
                        .find(|(name, _)| !expected.iter().any(|(n, _)| n == name))
                        .map(|(n, _)| format!("unexpected `{n}`"))
                })
                .unwrap_or_default();
            return Err(Error::WeightMismatch(format!(
                "file has {} entries, model has {}; {first}",
                entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), (fname, tensor)) in expected.iter().zip(&entries) {
            if name != fname {
                return Err(Error::WeightMismatch(format!(
                    "expected `{name}`, found `{fname}`"
                )));
            }
            if shape.as_slice() != tensor.shape() {
                return Err(Error::WeightMismatch(format!(
                    "`{name}`: file shape {:?}, model shape {shape:?}",
                    tensor.shape()
                )));
            }
        }
        let mut values = entries.into_iter().map(|(_, t)| t);
        for p in self.params.iter_mut() {
            p.value = values.next().expect("count checked");
        }
        for s in &mut self.running {
            s.mean = values.next().expect("count checked");
            s.var = values.next().expect("count checked");
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_unit<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        pv: &[Var],
        unit: &ConvUnit,
        x: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let y = tape.conv2d(x, pv[unit.weight], pv[unit.bias], Padding::Same, (1, 1))?;
        let rs = &self.running[unit.stats];
        let (y, batch) = tape.batchnorm2d(
            y,
            pv[unit.scale],
            pv[unit.shift],
            rs.mean.data(),
            rs.var.data(),
            mode,
            self.config.bn_eps,
        )?;
        stats.extend(batch);
        debug_assert!(unit.kernel % 2 == 1);
        Ok(tape.relu(y))
    }
}

impl Network for IncModel {
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
        self.config.num_classes
    }

    fn precision(&self) -> Precision {
        self.config.precision
    }

    fn record<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: Var,
        mode: Mode,
        track_params: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Recorded> {
        let pv: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf_as(&p.value, track_params))
            .collect();
        let plan = &self.plan;
        let rate = self.config.dropout_rate;
        let mut stats = Vec::with_capacity(self.running.len());

        let x = self.conv_unit(tape, &pv, &plan.c1, input, mode, &mut stats)?;
        let x = tape.maxpool2d(x, POOL, POOL, Padding::Valid)?;
        let x = tape.dropout(x, rate, mode, rng)?;

        let b1 = self.conv_unit(tape, &pv, &plan.b1, x, mode, &mut stats)?;
        let b2 = self.conv_unit(tape, &pv, &plan.b2a, x, mode, &mut stats)?;
        let b2 = self.conv_unit(tape, &pv, &plan.b2b, b2, mode, &mut stats)?;
        let b3 = self.conv_unit(tape, &pv, &plan.b3a, x, mode, &mut stats)?;
        let b3 = self.conv_unit(tape, &pv, &plan.b3b, b3, mode, &mut stats)?;
        let b4 = tape.maxpool2d(x, (3, 3), (1, 1), Padding::Same)?;
        let b4 = self.conv_unit(tape, &pv, &plan.b4, b4, mode, &mut stats)?;
        let x = tape.concat_channels(&[b1, b2, b3, b4])?;

        let x = self.conv_unit(tape, &pv, &plan.c2, x, mode, &mut stats)?;
        let x = tape.maxpool2d(x, POOL, POOL, Padding::Valid)?;
        let x = tape.dropout(x, rate, mode, rng)?;

        let mut x = tape.flatten(x)?;
        for unit in &plan.hidden {
            x = tape.dense(x, pv[unit.weight], pv[unit.bias])?;
            x = tape.relu(x);
        }
        let logits = tape.dense(x, pv[plan.logits.weight], pv[plan.logits.bias])?;
        Ok(Recorded {
            logits,
            params: pv,
            batch_stats: stats,
        })
    }

    fn apply_batch_stats(&mut self, stats: &[BatchStats]) {
        let m = self.config.bn_momentum;
        for (running, batch) in self.running.iter_mut().zip(stats) {
            for (r, &b) in running.mean.data_mut().iter_mut().zip(&batch.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, &b) in running.var.data_mut().iter_mut().zip(&batch.var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}
