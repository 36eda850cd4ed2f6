use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_eeg::attack::{Attack, AttackConfig, AttackKind, Norm, ThreatModel};
use robust_eeg::autodiff::{Mode, Precision};
use robust_eeg::model::{IncModel, ModelConfig};
use robust_eeg::network::{loss_and_gradients, GradRequest, LinearClassifier, Network, ParamRole, Params};
use robust_eeg::samples::Samples;
use robust_eeg::seeding::fork;
use robust_eeg::train::{
    adam_step, fit, project_weight_perturbation, train_step_at, train_step_standard, train_step_tsp, weight_ascent,
    AdamConfig, AdamState, Defense, PerturbedSet, TrainConfig, TspConfig, WeightPerturbation,
};
use robust_eeg::Tensor;

fn small_model(seed: u64) -> IncModel {
    let config = ModelConfig {
        subbands: 2,
        channels: 16,
        timesteps: 16,
        precision: Precision::F32,
        ..ModelConfig::default()
    };
    IncModel::new(config, seed).unwrap()
}

fn batch(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Tensor::from_fn(&[n, 2, 16, 16], |_| rng.random_range(-1.0..1.0));
    (x, labels)
}

fn fgsm_rs(eps: f64) -> Attack {
    Attack::new(
        ThreatModel::new(Norm::Linf, eps).unwrap(),
        AttackConfig {
            kind: AttackKind::Fgsm,
            steps: 1,
            step_size: 1.25 * eps,
            random_init: true,
        },
    )
    .unwrap()
}

fn adam(params: &Params) -> AdamState {
    AdamState::new(
        params,
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    )
}

fn loss_of<N: Network>(net: &N, x: &Tensor, labels: &[usize]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    loss_and_gradients(net, x, labels, Mode::Eval, GradRequest::NONE, &mut rng)
        .unwrap()
        .loss
}

#[test]
fn zero_radius_adversarial_training_is_standard_training() {
    let (x, labels) = batch(6, 1);
    let mut a = small_model(2);
    let mut b = a.clone();
    let (mut oa, mut ob) = (adam(a.params()), adam(b.params()));
    for step in 0..3 {
        let mut ra = ChaCha8Rng::seed_from_u64(step);
        let mut rb = ra.clone();
        let la = train_step_standard(&mut a, &x, &labels, &mut oa, &mut ra).unwrap();
        let lb = train_step_at(&mut b, &x, &labels, &fgsm_rs(0.0), &mut ob, &mut rb).unwrap();
        assert_eq!(la, lb);
    }
    assert_eq!(a.params(), b.params());
    assert_eq!(a.running_stats(), b.running_stats());
}

#[test]
fn zero_budget_tsp_is_adversarial_training() {
    let (x, labels) = batch(6, 3);
    let attack = fgsm_rs(0.1);
    let tsp = TspConfig {
        gamma: 0.0,
        ..TspConfig::default()
    };
    let mut a = small_model(4);
    let mut b = a.clone();
    let (mut oa, mut ob) = (adam(a.params()), adam(b.params()));
    for step in 0..3 {
        let mut ra = ChaCha8Rng::seed_from_u64(step);
        let mut rb = ra.clone();
        let la = train_step_at(&mut a, &x, &labels, &attack, &mut oa, &mut ra).unwrap();
        let report = train_step_tsp(&mut b, &x, &labels, &attack, &tsp, &mut ob, None, &mut rb).unwrap();
        assert_eq!(la, report.loss);
        assert!(report.perturbation.is_zero());
        assert_eq!(report.projections, 0);
    }
    assert_eq!(a.params(), b.params());
}

#[test]
fn tsp_step_removes_the_perturbation_after_the_update() {
    let (x, labels) = batch(6, 5);
    let attack = fgsm_rs(0.1);
    let tsp = TspConfig {
        gamma: 0.05,
        ..TspConfig::default()
    };
    let mut net = small_model(6);
    let mut opt = adam(net.params());
    let start = net.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let report = train_step_tsp(&mut net, &x, &labels, &attack, &tsp, &mut opt, None, &mut rng).unwrap();
    assert!(!report.perturbation.is_zero());
    assert!(report.revert_residual < 1e-12, "{}", report.revert_residual);
    assert!(report.max_ratio <= 1.0 + 1e-6);

    // Replay by hand: the optimizer step taken at θ + v, then v removed.
    let mut manual = small_model(6);
    let mut manual_opt = adam(manual.params());
    let mut streams_rng = ChaCha8Rng::seed_from_u64(7);
    let mut attack_rng = fork(&mut streams_rng);
    let mut dropout_rng = fork(&mut streams_rng);
    let x_adv = attack.run(&manual, &x, &labels, &mut attack_rng).unwrap();
    report.perturbation.add_to(manual.params_mut(), 1.0).unwrap();
    let eval = loss_and_gradients(&manual, &x_adv, &labels, Mode::Train, GradRequest::PARAMS, &mut dropout_rng)
        .unwrap();
    manual.apply_batch_stats(&eval.batch_stats);
    adam_step(&mut manual_opt, manual.params_mut(), eval.param_grads.as_ref().unwrap()).unwrap();
    report.perturbation.add_to(manual.params_mut(), -1.0).unwrap();
    assert_eq!(eval.loss, report.loss);
    assert_eq!(manual.params(), net.params());
    assert_eq!(manual.running_stats(), net.running_stats());

    let moved: f64 = net
        .params()
        .iter()
        .zip(start.iter())
        .map(|(p, q)| p.value.zip_map(&q.value, |a, b| (a - b).abs()).unwrap().norm_linf())
        .fold(0.0, f64::max);
    assert!(moved > 0.0 && moved <= 1e-3 * 1.01, "{moved}");
}

#[test]
fn standard_training_fits_a_separable_toy_problem() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 48;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Tensor::from_fn(&[n, 6], |i| {
        let (s, f) = (i / 6, i % 6);
        let signal = if f / 2 == labels[s] { 2.0 } else { 0.0 };
        signal + rng.random_range(-0.5..0.5)
    });
    let mut net = LinearClassifier::new(&[6], 3);
    let mut opt = AdamState::new(
        net.params(),
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    );
    let first = loss_of(&net, &x, &labels);
    let mut step_rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        train_step_standard(&mut net, &x, &labels, &mut opt, &mut step_rng).unwrap();
    }
    let last = loss_of(&net, &x, &labels);
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let mut net = small_model(9);
    let before = net.clone();
    let (x, labels) = batch(6, 9);
    let samples = Samples::new(x, labels).unwrap();
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let log = fit(&mut net, &samples, None, &config).unwrap();
    assert!(log.records.is_empty());
    assert_eq!(log.steps, 0);
    assert_eq!(net.params(), before.params());
    assert_eq!(net.running_stats(), before.running_stats());
}

#[test]
fn ascent_with_zero_step_keeps_the_perturbation() {
    let (x, labels) = batch(4, 12);
    let net = small_model(12);
    let mut v = WeightPerturbation::zeros(net.params(), PerturbedSet::Weights);
    let name = v.layers()[0].name.clone();
    v.get_mut(&name).unwrap().data_mut()[0] = 0.25;
    let out = weight_ascent(&net, &x, &labels, &v, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out, v);
}

#[test]
fn one_ascent_step_raises_the_loss_of_a_convex_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let mut net = LinearClassifier::new(&[5], 3);
        for p in net.params_mut().iter_mut() {
            p.value = Tensor::from_fn(p.value.shape(), |_| rng.random_range(-1.0..1.0));
        }
        let x = Tensor::from_fn(&[8, 5], |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let gamma = 0.05;
        let mut v = WeightPerturbation::zeros(net.params(), PerturbedSet::All);
        for layer in v.layers().to_vec() {
            let t = v.get_mut(&layer.name).unwrap();
            *t = Tensor::from_fn(t.shape(), |_| rng.random_range(-1.0..1.0));
        }
        let v0 = project_weight_perturbation(v, net.params(), gamma);
        let shifted_loss = |v: &WeightPerturbation| {
            let mut m = net.clone();
            v.add_to(m.params_mut(), 1.0).unwrap();
            loss_of(&m, &x, &labels)
        };
        let stepped = weight_ascent(&net, &x, &labels, &v0, 1e-3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let v1 = project_weight_perturbation(stepped, net.params(), gamma);
        assert!(shifted_loss(&v1) >= shifted_loss(&v0) - 1e-12);
    }
}

#[test]
fn weight_set_skips_biases_and_normalization() {
    let net = small_model(1);
    let v = WeightPerturbation::zeros(net.params(), PerturbedSet::Weights);
    let weights = net.params().iter().filter(|p| p.role == ParamRole::Weight).count();
    assert_eq!(v.layers().len(), weights);
    let all = WeightPerturbation::zeros(net.params(), PerturbedSet::All);
    assert_eq!(all.layers().len(), net.params().len());
}

#[test]
fn fit_is_a_pure_function_of_its_inputs() {
    let (x, labels) = batch(24, 14);
    let samples = Samples::new(x, labels).unwrap();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        defense: Defense::Tsp,
        attack: fgsm_rs(0.1),
        eval_attack: Attack::new(ThreatModel::new(Norm::Linf, 0.1).unwrap(), AttackConfig::pgd(2)).unwrap(),
        monitor_limit: 6,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = small_model(15);
        let log = fit(&mut net, &samples, Some(&samples), &config).unwrap();
        (net, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(la.to_jsonl().unwrap(), lb.to_jsonl().unwrap());
    assert_eq!(a.params(), b.params());
    assert_eq!(la.records.len(), 2);
    assert_eq!(la.steps, 6);
    let audit = la.tsp_audit.unwrap();
    assert_eq!(audit.steps, 6);
    assert!(audit.max_ratio <= 1.0 + 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_exactly_on_the_budget(
        seed in any::<u64>(),
        gamma in 1e-4f64..1.0,
        rows in 1usize..6,
        cols in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        for name in ["a", "b"] {
            let t = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-2.0..2.0));
            params.push(name, ParamRole::Weight, t).unwrap();
        }
        let mut v = WeightPerturbation::zeros(&params, PerturbedSet::Weights);
        for layer in v.layers().to_vec() {
            let t = v.get_mut(&layer.name).unwrap();
            *t = Tensor::from_fn(t.shape(), |_| rng.random_range(-3.0..3.0));
        }
        let v = project_weight_perturbation(v, &params, gamma);
        for (layer, p) in v.layers().iter().zip(params.iter()) {
            let target = gamma * p.value.norm_l2();
            prop_assert!((layer.v.norm_l2() - target).abs() <= 1e-12 * target);
        }
    }
}
