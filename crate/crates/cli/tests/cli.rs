use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_eeg::eeg::read_dataset;
use robust_eeg::eval::MetricsReport;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robust-eeg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command that must fail and returns its single stderr line.
fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    err.trim_end().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three small subjects and a fast configuration.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data.eegf");
    ok(&[
        "synth", "--out", s(&data), "--subjects", "3", "--samples", "6", "--dims", "2,16,16",
        "--seed", "4",
    ]);
    let config = dir.join("run.cfg");
    fs::write(
        &config,
        format!(
            "# small run\ndataset = {}\nseed = 7\ntrain.epochs = 1\ntrain.batch_size = 6\n\
             train.lr = 0.001\ntrain.monitor_limit = 4\nmodel.precision = f32\n\
             threat.epsilon = 0.1\nattack.kind = fgsm\nattack.step_size = 0.125\n\
             eval.steps = 2\neval.step_size = 0.05\ntsp.gamma = 0.01\n",
            data.display()
        ),
    )
    .unwrap();
    (data, config)
}

#[test]
fn synth_is_readable_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.eegf");
    let b = dir.path().join("b.eegf");
    ok(&["synth", "--out", s(&a), "--subjects", "2", "--samples", "3"]);
    ok(&["synth", "--out", s(&b), "--subjects", "2", "--samples", "3"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = read_dataset(&a).unwrap();
    assert_eq!((ds.len(), ds.dims()), (6, [5, 16, 16]));
}

#[test]
fn synth_rejects_bad_requests() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.eegf");
    assert!(fails(&["synth", "--out", s(&out), "--subjects", "1"]).starts_with("error: config:"));
    assert!(fails(&["synth", "--out", s(&out), "--dims", "5,16"]).starts_with("error: config:"));
    assert!(fails(&["synth", "--out", s(&out), "--dims", "5,0,16"]).starts_with("error: config:"));
}

#[test]
fn preprocess_turns_recordings_into_five_band_features() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.json");
    let out = dir.path().join("de.eegf");
    ok(&[
        "synth", "--raw", "--out", s(&raw), "--subjects", "2", "--samples", "2", "--channels", "3",
        "--seconds", "8",
    ]);
    ok(&["preprocess", "--input", s(&raw), "--out", s(&out), "-t", "4"]);
    let ds = read_dataset(&out).unwrap();
    assert_eq!(ds.dims(), [5, 3, 4]);
    assert_eq!(ds.len(), 4 * 2);
    assert_eq!(ds.subject_ids(), vec![0, 1]);

    let err = fails(&["preprocess", "--input", s(&raw), "--out", s(&out), "-t", "9"]);
    assert!(err.starts_with("error: signal:"), "{err}");
    let missing = dir.path().join("missing.json");
    assert!(fails(&["preprocess", "--input", s(&missing), "--out", s(&out)]).starts_with("error: io:"));
}

#[test]
fn train_writes_every_artifact_and_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    let (_, config) = setup(dir.path());
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    for out in [&run_a, &run_b] {
        ok(&["train", "-c", s(&config), "--out", s(out), "--defense", "tsp", "--fold", "1"]);
    }
    let fold = run_a.join("fold-01");
    for name in ["weights.incw", "log.jsonl", "report.json", "norm.json", "tsp_audit.json"] {
        let a = fs::read(fold.join(name)).unwrap();
        assert_eq!(a, fs::read(run_b.join("fold-01").join(name)).unwrap(), "{name} differs");
    }
    assert!(!run_a.join("fold-00").exists());

    // The echoed config replays the run.
    let echoed = run_a.join("config.txt");
    let text = fs::read_to_string(&echoed).unwrap();
    assert!(text.contains("train.defense = tsp") && text.contains("folds = 1"));
    let run_c = dir.path().join("c");
    ok(&["train", "-c", s(&echoed), "--out", s(&run_c)]);
    assert_eq!(
        fs::read(fold.join("weights.incw")).unwrap(),
        fs::read(run_c.join("fold-01/weights.incw")).unwrap()
    );
}

#[test]
fn every_defense_is_accepted() {
    let dir = TempDir::new().unwrap();
    let (_, config) = setup(dir.path());
    for defense in ["none", "at", "tsp"] {
        let out = dir.path().join(defense);
        let stdout = ok(&["train", "-c", s(&config), "--out", s(&out), "--defense", defense, "--fold", "0"]);
        assert!(stdout.contains("fold  0"));
        assert_eq!(out.join("fold-00/tsp_audit.json").exists(), defense == "tsp");
    }
    let err = fails(&["train", "-c", s(&config), "--defense", "awp"]);
    assert!(err.starts_with("error: usage:"), "{err}");
}

#[test]
fn evaluate_reports_per_attack_length() {
    let dir = TempDir::new().unwrap();
    let (data, config) = setup(dir.path());
    let run_dir = dir.path().join("run");
    ok(&["train", "-c", s(&config), "--out", s(&run_dir), "--fold", "2", "--defense", "at"]);
    let fold = run_dir.join("fold-02");
    let weights = fold.join("weights.incw");
    let stats = fold.join("norm.json");
    let eval_dir = dir.path().join("eval");
    let stdout = ok(&[
        "evaluate", "-c", s(&config), "--weights", s(&weights), "--stats", s(&stats),
        "--subject", "2", "-T", "1", "-T", "3", "--out", s(&eval_dir),
    ]);
    assert!(stdout.contains("report pgd1") && stdout.contains("report pgd3"));
    for label in ["pgd1", "pgd3"] {
        let report: MetricsReport =
            serde_json::from_str(&fs::read_to_string(eval_dir.join(format!("report-{label}.json"))).unwrap())
                .unwrap();
        assert_eq!(report.samples, 6);
        assert_eq!(report.attack.unwrap().config.steps, if label == "pgd1" { 1 } else { 3 });
        let text = fs::read_to_string(eval_dir.join(format!("report-{label}.txt"))).unwrap();
        assert!(text.contains(&format!("accuracy  {:.6}", report.accuracy())));
        assert!(text.contains(&format!("accuracy  {:.6}", report.r_accuracy().unwrap())));
        let csv = fs::read_to_string(eval_dir.join(format!("confusion-{label}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 9);
    }

    // The held-out fold scored here matches the report written by train.
    let trained: MetricsReport = serde_json::from_str(&fs::read_to_string(fold.join("report.json")).unwrap()).unwrap();
    let pgd3: MetricsReport =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("report-pgd3.json")).unwrap()).unwrap();
    assert_eq!(trained.clean, pgd3.clean);

    let zero = dir.path().join("zero");
    ok(&[
        "evaluate", "-c", s(&config), "--weights", s(&weights), "--epsilon", "0", "--out", s(&zero),
    ]);
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(zero.join("report-pgd2.json")).unwrap()).unwrap();
    assert_eq!(report.robust.as_ref(), Some(&report.clean));

    // Weights of a model for other input dimensions.
    let other = dir.path().join("other.eegf");
    ok(&["synth", "--out", s(&other), "--subjects", "2", "--samples", "3", "--dims", "3,16,16"]);
    let err = fails(&["evaluate", "-c", s(&config), "--dataset", s(&other), "--weights", s(&weights)]);
    assert!(err.starts_with("error: weights:"), "{err}");
    let _ = data;
}

#[test]
fn sweep_and_ablation_emit_one_row_per_point() {
    let dir = TempDir::new().unwrap();
    let (_, config) = setup(dir.path());
    let out = dir.path().join("sweep");
    let csv = ok(&[
        "sweep", "-c", s(&config), "--out", s(&out), "--gammas", "0,0.01,0.1", "--set", "folds=0",
    ]);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(3).unwrap().starts_with("0.1,1,"));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), csv);

    let out = dir.path().join("ablation");
    let table = ok(&["ablation", "-c", s(&config), "--out", s(&out), "--set", "folds=0", "--jobs", "2"]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, arm) in rows.iter().zip(["none", "at", "tsp"]) {
        assert!(row.starts_with(arm), "{row}");
    }
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap().lines().count(), 4);
}

#[test]
fn config_errors_are_single_line() {
    let dir = TempDir::new().unwrap();
    let (_, config) = setup(dir.path());
    let err = fails(&["train", "-c", s(&config), "--set", "tsp.gama=0.1"]);
    assert_eq!(err, "error: config: unknown key `tsp.gama`");
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = 1\nthreat.epsilon = lots\n").unwrap();
    let err = fails(&["train", "-c", s(&bad)]);
    assert!(err.starts_with("error: config: line 2:"), "{err}");
    let err = fails(&["train", "-c", s(&config), "--fold", "9"]);
    assert!(err.starts_with("error: config: fold 9"), "{err}");
}

#[test]
fn config_command_lists_every_default() {
    let text = ok(&["config"]);
    for key in ["seed", "train.lr", "tsp.gamma", "tsp.eta2", "threat.norm", "eval.steps", "gammas"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing");
    }
    let text = ok(&["config", "--set", "tsp.gamma=0.5"]);
    assert!(text.contains("tsp.gamma = 0.5"));
}

#[test]
fn gradcheck_passes_on_small_dims() {
    let stdout = ok(&["gradcheck", "--dims", "2,16,16", "--seeds", "1,2"]);
    assert!(stdout.lines().last().unwrap().starts_with("all "));
    assert!(!stdout.contains("FAIL"));
}
