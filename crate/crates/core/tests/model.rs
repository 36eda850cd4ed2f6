use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_eeg::autodiff::{Mode, Tape};
use robust_eeg::model::{weights, IncModel, ModelConfig, WeightFormat};
use robust_eeg::network::{forward_in, loss_and_gradients, GradRequest, Network, ParamRole};
use robust_eeg::{Error, Tensor};

fn small() -> ModelConfig {
    ModelConfig {
        subbands: 3,
        channels: 16,
        timesteps: 16,
        ..ModelConfig::default()
    }
}

fn batch(b: usize, config: &ModelConfig, seed: u64) -> Tensor {
    let [n, c, t] = config.sample_dims();
    Tensor::from_fn(&[b, n, c, t], |i| {
        (((i as u64).wrapping_mul(2654435761) ^ seed) % 1000) as f64 / 500.0 - 1.0
    })
}

/// Parameter count of the default configuration, counted layer by layer.
fn hand_count() -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout + 2 * cout;
    let dense = |i: usize, o: usize| i * o + o;
    conv(5, 64, 5)
        + conv(64, 32, 1)
        + conv(64, 96, 1)
        + conv(96, 128, 3)
        + conv(64, 128, 3)
        + conv(128, 32, 5)
        + conv(64, 32, 5)
        + conv(224, 256, 5)
        + dense(256 * 3, 512)
        + dense(512, 256)
        + dense(256, 64)
        + dense(64, 3)
}

#[test]
fn default_parameter_count_is_locked() {
    let model = IncModel::new(ModelConfig::default(), 0).unwrap();
    assert_eq!(model.params().count(), hand_count());
    assert_eq!(model.params().count(), 2_331_715);
}

#[test]
fn parameter_count_depends_only_on_config() {
    let a = IncModel::new(small(), 1).unwrap();
    let b = IncModel::new(small(), 99).unwrap();
    assert_eq!(a.params().count(), b.params().count());
}

#[test]
fn logits_have_one_column_per_class() {
    let config = small();
    let model = IncModel::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = forward_in(&model, &batch(4, &config, 1), Mode::Eval, &mut rng).unwrap();
    assert_eq!(y.shape(), &[4, 3]);
}

#[test]
fn zero_input_gives_finite_logits() {
    let config = small();
    let model = IncModel::new(config.clone(), 3).unwrap();
    let x = Tensor::zeros(&[2, 3, 16, 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [Mode::Eval, Mode::Train] {
        assert!(forward_in(&model, &x, mode, &mut rng).unwrap().all_finite());
    }
}

#[test]
fn eval_forward_is_bit_deterministic() {
    let config = small();
    let model = IncModel::new(config.clone(), 5).unwrap();
    let x = batch(3, &config, 2);
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(2);
    let a = forward_in(&model, &x, Mode::Eval, &mut r1).unwrap();
    let b = forward_in(&model, &x, Mode::Eval, &mut r2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_forward_depends_on_dropout_stream() {
    let config = small();
    let model = IncModel::new(config.clone(), 5).unwrap();
    let x = batch(3, &config, 2);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        forward_in(&model, &x, Mode::Train, &mut rng).unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn initialization_is_reproducible() {
    let a = IncModel::new(small(), 42).unwrap();
    let b = IncModel::new(small(), 42).unwrap();
    let c = IncModel::new(small(), 43).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.params().names(), c.params().names());
    assert_ne!(a.params(), c.params());
}

#[test]
fn initial_values_follow_role() {
    let model = IncModel::new(small(), 0).unwrap();
    for p in model.params().iter() {
        match p.role {
            ParamRole::Bias | ParamRole::Shift => assert!(p.value.data().iter().all(|&v| v == 0.0)),
            ParamRole::Scale => assert!(p.value.data().iter().all(|&v| v == 1.0)),
            ParamRole::Weight => {
                let fan_in: usize = if p.value.shape().len() == 4 {
                    p.value.shape()[1..].iter().product()
                } else {
                    p.value.shape()[0]
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                assert!(p.value.norm_linf() <= bound, "{}", p.name);
            }
        }
    }
}

#[test]
fn inception_branches_keep_spatial_dims() {
    // The Inception block sees the 4x4 map left by the first pool; every
    // branch keeps it, so the concat is well defined and C2 sees 224 channels.
    let model = IncModel::new(small(), 0).unwrap();
    let c2 = model.params().by_name("c2.conv.weight").unwrap();
    assert_eq!(c2.value.shape()[1], 224);
    assert_eq!(model.flatten_size(), 256);
}

#[test]
fn mode_round_trip_keeps_parameters() {
    let mut model = IncModel::new(small(), 0).unwrap();
    let before = model.params().clone();
    model.set_mode(Mode::Eval);
    model.set_mode(Mode::Train);
    assert_eq!(model.params(), &before);
}

#[test]
fn layer_groups_partition_parameters() {
    let model = IncModel::new(small(), 0).unwrap();
    let mut layers: Vec<&str> = model.params().iter().map(|p| p.layer.as_str()).collect();
    layers.dedup();
    // 8 conv units contribute a conv and a bn group each, plus 4 dense layers.
    assert_eq!(layers.len(), 8 * 2 + 4);
    for p in model.params().iter() {
        assert!(p.name.starts_with(&format!("{}.", p.layer)));
    }
}

#[test]
fn save_and_load_preserve_outputs_bit_exactly() {
    let config = small();
    let mut model = IncModel::new(config.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = batch(4, &config, 3);
    let eval = loss_and_gradients(&model, &x, &[0, 1, 2, 0], Mode::Train, GradRequest::NONE, &mut rng)
        .unwrap();
    model.apply_batch_stats(&eval.batch_stats);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.incw");
    model.save_weights(&path).unwrap();
    let mut restored = IncModel::new(config, 12).unwrap();
    restored.load_weights(&path).unwrap();

    assert_eq!(restored.params(), model.params());
    assert_eq!(restored.running_stats(), model.running_stats());
    let a = forward_in(&model, &x, Mode::Eval, &mut rng).unwrap();
    let b = forward_in(&restored, &x, Mode::Eval, &mut rng).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_precision_file_round_trips_through_f32() {
    let config = small();
    let model = IncModel::new(config.clone(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.incw");
    model.save_weights_as(&path, WeightFormat::F32).unwrap();
    let mut restored = IncModel::new(config, 0).unwrap();
    restored.load_weights(&path).unwrap();
    for (a, b) in model.params().iter().zip(restored.params().iter()) {
        for (&x, &y) in a.value.data().iter().zip(b.value.data()) {
            assert_eq!(x as f32 as f64, y);
        }
    }
}

#[test]
fn loading_into_other_architecture_fails_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.incw");
    IncModel::new(small(), 1).unwrap().save_weights(&path).unwrap();

    let other = ModelConfig {
        subbands: 4,
        ..small()
    };
    let mut target = IncModel::new(other, 2).unwrap();
    let before = target.params().clone();
    let err = target.load_weights(&path).unwrap_err();
    assert!(matches!(err, Error::WeightMismatch(_)), "{err}");
    assert!(err.to_string().contains("c1.conv.weight"), "{err}");
    assert_eq!(target.params(), &before);
}

#[test]
fn truncated_weight_file_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.incw");
    IncModel::new(small(), 1).unwrap().save_weights(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = IncModel::new(small(), 1).unwrap().load_weights(&path).unwrap_err();
    assert!(matches!(err, Error::Integrity { .. }), "{err}");
}

#[test]
fn weight_file_lists_parameters_then_running_stats() {
    let model = IncModel::new(small(), 1).unwrap();
    let refs = model.state();
    let bytes = weights::encode(&refs, WeightFormat::F64).unwrap();
    let entries = weights::decode(&bytes).unwrap();
    assert_eq!(entries.len(), model.params().len() + 2 * 8);
    assert_eq!(entries[0].0, "c1.conv.weight");
    assert_eq!(entries.last().unwrap().0, "c2.bn.running_var");
}

#[test]
fn unseen_parameters_are_not_touched_by_forward() {
    let config = small();
    let model = IncModel::new(config.clone(), 0).unwrap();
    let before = model.params().clone();
    let mut tape = Tape::new();
    let x = batch(2, &config, 0);
    let xv = tape.leaf(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model.record(&mut tape, xv, Mode::Train, true, &mut rng).unwrap();
    drop(tape);
    assert_eq!(model.params(), &before);
}
