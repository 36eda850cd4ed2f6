use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_eeg::attack::{Attack, AttackConfig, Norm, ThreatModel};
use robust_eeg::eval::{
    aggregate, argmax, class_scores, confusion_matrix, evaluate, evaluate_robust, loso_split_ids, macro_f1,
    MeanStd, MetricsReport,
};
use robust_eeg::network::{forward, LinearClassifier, Network};
use robust_eeg::samples::Samples;
use robust_eeg::Tensor;

/// Macro-F1 straight from the prediction pairs, without a confusion matrix.
fn brute_force_macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        // F1 = 2TP / (2TP + FP + FN), 0 when nothing was true or predicted.
        let den = 2.0 * tp + fp + fn_;
        total += if den == 0.0 { 0.0 } else { 2.0 * tp / den };
    }
    total / classes as f64
}

#[test]
fn confusion_identities_on_random_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let m = confusion_matrix(&truth, &pred, classes);
        let trace: u64 = (0..classes).map(|c| m[c][c]).sum();
        let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        assert_eq!(trace as usize, correct);
        assert_eq!(m.iter().flatten().sum::<u64>() as usize, n);
        let expected = brute_force_macro_f1(&truth, &pred, classes);
        assert!((macro_f1(&m) - expected).abs() < 1e-12);
        let per_class = class_scores(&m);
        for (c, s) in per_class.iter().enumerate() {
            assert_eq!(s.support as usize, truth.iter().filter(|&&t| t == c).count());
        }
    }
}

#[test]
fn predicting_one_class_on_balanced_data() {
    let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let m = confusion_matrix(&truth, &[0; 30], 3);
    // Class 0: precision 1/3, recall 1, F1 1/2. Others: 0.
    assert!((macro_f1(&m) - 1.0 / 6.0).abs() < 1e-12);
    assert!((macro_f1(&m) - 0.1667).abs() < 1e-4);
}

#[test]
fn aggregate_uses_the_population_deviation() {
    let s = MeanStd::of(&[0.9, 0.92, 0.94]).unwrap();
    assert!((s.mean - 0.92).abs() < 1e-12);
    assert!((s.std - (0.0008f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((s.std - 0.0163).abs() < 1e-4);
}

fn random_linear(features: usize, rng: &mut impl Rng) -> LinearClassifier {
    let mut net = LinearClassifier::new(&[features], 3);
    for p in net.params_mut().iter_mut() {
        p.value = Tensor::from_fn(p.value.shape(), |_| rng.random_range(-1.0..1.0));
    }
    net
}

fn random_samples(n: usize, features: usize, rng: &mut impl Rng) -> Samples {
    let x = Tensor::from_fn(&[n, features], |_| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    Samples::new(x, labels).unwrap()
}

#[test]
fn evaluation_matches_an_independent_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let net = random_linear(4, &mut rng);
        let samples = random_samples(rng.random_range(1..40), 4, &mut rng);
        let report = evaluate(&net, &samples, 7).unwrap();
        let logits = forward(&net, samples.x(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let pred: Vec<usize> = logits.data().chunks(3).map(argmax).collect();
        let correct = pred.iter().zip(samples.labels()).filter(|(p, t)| p == t).count();
        let trace: u64 = (0..3).map(|c| report.clean.confusion[c][c]).sum();
        assert_eq!(report.accuracy(), trace as f64 / samples.len() as f64);
        assert_eq!(report.accuracy(), correct as f64 / samples.len() as f64);
        let expected = brute_force_macro_f1(samples.labels(), &pred, 3);
        assert!((report.macro_f1() - expected).abs() < 1e-12);
    }
}

#[test]
fn zero_radius_robust_scores_equal_clean_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for norm in [Norm::Linf, Norm::L2] {
        let net = random_linear(6, &mut rng);
        let samples = random_samples(25, 6, &mut rng);
        let attack = Attack::new(ThreatModel::new(norm, 0.0).unwrap(), AttackConfig::pgd(10)).unwrap();
        let report = evaluate_robust(&net, &samples, &attack, 3, 8).unwrap();
        assert_eq!(report.robust.as_ref(), Some(&report.clean));
        assert_eq!(report.clean, evaluate(&net, &samples, 8).unwrap().clean);
    }
}

#[test]
fn robust_scores_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = random_linear(5, &mut rng);
    let samples = random_samples(50, 5, &mut rng);
    let attack = Attack::new(ThreatModel::new(Norm::Linf, 0.3).unwrap(), AttackConfig::pgd(5)).unwrap();
    let run = |threads| -> MetricsReport {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate_robust(&net, &samples, &attack, 9, 8).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert!(one.r_accuracy().unwrap() <= one.accuracy());
}

#[test]
fn aggregate_requires_robust_scores_from_every_run() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_linear(3, &mut rng);
    let samples = random_samples(10, 3, &mut rng);
    let clean = evaluate(&net, &samples, 4).unwrap();
    let attack = Attack::new(ThreatModel::new(Norm::Linf, 0.1).unwrap(), AttackConfig::pgd(2)).unwrap();
    let robust = evaluate_robust(&net, &samples, &attack, 0, 4).unwrap();
    let agg = aggregate(&[clean.clone(), robust.clone()]).unwrap();
    assert_eq!(agg.runs, 2);
    assert!(agg.r_accuracy.is_none());
    assert_eq!(agg.accuracy.std, 0.0);
    assert!(aggregate(&[robust]).unwrap().r_accuracy.is_some());
    assert!(aggregate(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn loso_folds_partition_the_subjects(ids in prop::collection::vec(0u16..40, 0..60)) {
        let distinct: BTreeSet<u16> = ids.iter().copied().collect();
        match loso_split_ids(&ids) {
            Err(_) => prop_assert!(distinct.len() < 2),
            Ok(folds) => {
                prop_assert_eq!(folds.len(), distinct.len());
                let tests: BTreeSet<u16> = folds.iter().map(|f| f.test_subject).collect();
                prop_assert_eq!(&tests, &distinct);
                for (i, f) in folds.iter().enumerate() {
                    prop_assert_eq!(f.index, i);
                    prop_assert!(!f.train_subjects.contains(&f.test_subject));
                    let mut all: BTreeSet<u16> = f.train_subjects.iter().copied().collect();
                    prop_assert_eq!(all.len(), f.train_subjects.len());
                    all.insert(f.test_subject);
                    prop_assert_eq!(&all, &distinct);
                }
            }
        }
    }
}
