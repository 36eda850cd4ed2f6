use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use robust_eeg::attack::{Attack, AttackKind, Norm};
use robust_eeg::eeg::{
    de_features, read_dataset, synth_generate, synth_recordings, windowize, write_dataset, BandSet,
    Dataset, NormStats, RawRecording, SynthConfig,
};
use robust_eeg::eval::{
    ablation_run, evaluate_robust, format_confusion, gamma_sweep, loso_split, run_fold, FoldData,
    MetricsReport, RunOutcome, Scores,
};
use robust_eeg::gradcheck::{run_suite, SuiteConfig, SUITE_TOLERANCE};
use robust_eeg::model::IncModel;
use robust_eeg::train::Defense;

use crate::config::RunConfig;
use crate::{CliError, ConfigArgs};

const CLASS_NAMES: [&str; 3] = ["negative", "neutral", "positive"];

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {jobs} workers: {e}")))
}

/// Loads the config and applies the command-line overrides.
pub fn resolve(args: &ConfigArgs, jobs: Option<usize>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(d) = &args.dataset {
        config.dataset = Some(d.clone());
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    if let Some(j) = jobs {
        config.jobs = j;
    }
    Ok(config)
}

/// Writes the resolved config into the output directory, so the run can be
/// repeated exactly with `--config <out>/config.txt`.
fn echo_config(config: &RunConfig) -> Result<(), CliError> {
    write(&config.out.join("config.txt"), config.to_text())
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// Samples (or recordings with --raw) per subject.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Sample shape `n,c,t`.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 16, 16])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    class_sep: f64,
    #[arg(long, default_value_t = 0.2)]
    fragile: f64,
    #[arg(long, default_value_t = 0.3)]
    subject_shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write raw multichannel recordings as JSON instead of features.
    #[arg(long)]
    raw: bool,
    /// Channels per raw recording.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Length of each raw recording in seconds.
    #[arg(long, default_value_t = 20)]
    seconds: usize,
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.subjects < 2 {
        return Err(CliError::config(format!(
            "{} subject(s): leave-one-subject-out needs at least 2",
            args.subjects
        )));
    }
    if args.raw {
        let recs = synth_recordings(args.subjects, args.samples, args.channels, args.seconds, args.seed)?;
        write(&args.out, serde_json::to_string(&recs)?)?;
        println!("wrote {} recordings to {}", recs.len(), args.out.display());
        return Ok(());
    }
    let dims: [usize; 3] = args
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| CliError::config(format!("--dims needs 3 values, got {}", args.dims.len())))?;
    let config = SynthConfig {
        subjects: args.subjects,
        samples_per_subject: args.samples,
        dims,
        class_sep: args.class_sep,
        fragile: args.fragile,
        subject_shift: args.subject_shift,
        seed: args.seed,
    };
    let ds = synth_generate(&config)?;
    write_dataset(&args.out, &ds)?;
    println!("wrote {} samples of {:?} to {}", ds.len(), ds.dims(), args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// JSON array of raw recordings.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `name:low-high,...`, `default` for the five standard bands, or
    /// `identity` for no filtering.
    #[arg(long, default_value = "default")]
    bands: String,
    /// Feature window in seconds.
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    /// Overlap between feature windows in seconds.
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    /// Feature steps per sample.
    #[arg(short, long, default_value_t = 16)]
    t: usize,
    /// Steps between consecutive samples; defaults to `t`.
    #[arg(long)]
    hop: Option<usize>,
}

pub fn preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input).map_err(|e| io_error(&args.input, e))?;
    let recs: Vec<RawRecording> = serde_json::from_str(&text)
        .map_err(|e| CliError::new("json", format!("{}: {e}", args.input.display())))?;
    if recs.is_empty() {
        return Err(CliError::new("data", "no recordings in input"));
    }
    let bands = if args.bands == "default" {
        BandSet::default()
    } else {
        BandSet::parse(&args.bands)?
    };
    let hop = args.hop.unwrap_or(args.t);
    let mut ds: Option<Dataset> = None;
    for (i, rec) in recs.iter().enumerate() {
        let tag = |e: robust_eeg::Error| CliError::new(e.class(), format!("recording {i}: {e}"));
        let features = de_features(rec, &bands, args.window, args.overlap).map_err(tag)?;
        for window in windowize(&features, args.t, hop).map_err(tag)? {
            let shape = window.shape();
            let ds = match &mut ds {
                Some(ds) => ds,
                None => ds.insert(Dataset::new([shape[0], shape[1], shape[2]])?),
            };
            ds.push(rec.subject_id, rec.label, window.data()).map_err(tag)?;
        }
    }
    let ds = ds.expect("at least one window");
    write_dataset(&args.out, &ds)?;
    println!("wrote {} samples of {:?} to {}", ds.len(), ds.dims(), args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training regime; overrides `train.defense`.
    #[arg(long)]
    defense: Option<Defense>,
    /// Fold index, or `all`; overrides the `folds` key.
    #[arg(long)]
    fold: Option<String>,
}

fn fold_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("fold-{index:02}"))
}

fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let path = config.dataset_path()?;
    read_dataset(path).map_err(|e| CliError::new(e.class(), format!("{}: {e}", path.display())))
}

fn summary_line(o: &RunOutcome) -> String {
    format!(
        "fold {:>2} (subject {:>3}): accuracy {:.4}  f1 {:.4}  r-accuracy {}  r-f1 {}",
        o.fold,
        o.test_subject,
        o.report.accuracy(),
        o.report.macro_f1(),
        o.report.r_accuracy().map_or("-".into(), |v| format!("{v:.4}")),
        o.report.r_f1().map_or("-".into(), |v| format!("{v:.4}")),
    )
}

pub fn train(args: &TrainArgs, jobs: Option<usize>) -> Result<(), CliError> {
    let mut config = resolve(&args.config, jobs)?;
    if let Some(d) = args.defense {
        config.set("train.defense", &d.to_string())?;
    }
    if let Some(f) = &args.fold {
        config.set("folds", f)?;
    }
    let ds = load_dataset(&config)?;
    let all = loso_split(&ds)?;
    let folds = match &config.folds {
        None => all,
        Some(wanted) => wanted
            .iter()
            .map(|&i| {
                all.get(i)
                    .cloned()
                    .ok_or_else(|| CliError::config(format!("fold {i} does not exist ({} folds)", all.len())))
            })
            .collect::<Result<_, _>>()?,
    };
    let model = config.model_for(ds.dims());
    echo_config(&config)?;
    let results: Vec<(IncModel, RunOutcome)> = pool(config.jobs)?.install(|| {
        folds
            .par_iter()
            .map(|fold| {
                run_fold(&ds, fold, config.seed, &model, &config.train, &config.eval_attack, config.eval_batch)
            })
            .collect::<robust_eeg::Result<_>>()
    })?;
    for ((net, outcome), fold) in results.iter().zip(&folds) {
        let dir = fold_dir(&config.out, outcome.fold);
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        net.save_weights(&dir.join("weights.incw"))?;
        write(&dir.join("log.jsonl"), outcome.log.to_jsonl()?)?;
        write(&dir.join("report.json"), json(&outcome.report)?)?;
        write(&dir.join("norm.json"), json(&FoldData::prepare(&ds, fold)?.stats)?)?;
        if let Some(audit) = &outcome.log.tsp_audit {
            write(&dir.join("tsp_audit.json"), json(audit)?)?;
        }
        println!("{}", summary_line(outcome));
    }
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Weights written by `train`.
    #[arg(long)]
    weights: PathBuf,
    /// Normalization statistics written by `train` (`norm.json`). Without
    /// it the features are scored as stored.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Score only these subjects. Repeatable.
    #[arg(long = "subject")]
    subjects: Vec<u16>,
    /// Attack radius; overrides `threat.epsilon`.
    #[arg(long)]
    epsilon: Option<f64>,
    /// `linf` or `l2`; overrides `threat.norm`.
    #[arg(long)]
    threat_norm: Option<Norm>,
    /// `pgd` or `fgsm`; overrides `eval.kind`.
    #[arg(long)]
    attack: Option<AttackKind>,
    /// PGD iterations. Repeatable: one report per value.
    #[arg(short = 'T', long = "steps")]
    steps: Vec<usize>,
    /// PGD step size; overrides `eval.step_size`.
    #[arg(long)]
    step_size: Option<f64>,
}

fn scores_text(title: &str, s: &Scores) -> String {
    format!(
        "{title}\n  accuracy  {:.6}\n  macro-f1  {:.6}\n  loss      {:.6}\n{}",
        s.accuracy,
        s.macro_f1,
        s.loss,
        format_confusion(&s.confusion, &CLASS_NAMES)
    )
}

fn report_text(label: &str, r: &MetricsReport) -> String {
    let mut out = format!("report {label}: {} samples\n", r.samples);
    out.push_str(&scores_text("clean", &r.clean));
    if let Some(robust) = &r.robust {
        out.push_str(&scores_text("attacked", robust));
    }
    out
}

fn confusion_csv(r: &MetricsReport) -> String {
    let mut out = String::from("scores,true,predicted,count\n");
    let sets = [("clean", Some(&r.clean)), ("attacked", r.robust.as_ref())];
    for (name, s) in sets {
        let Some(s) = s else { continue };
        for (t, row) in s.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                out.push_str(&format!("{name},{t},{p},{count}\n"));
            }
        }
    }
    out
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut config = resolve(&args.config, None)?;
    if let Some(e) = args.epsilon {
        config.set("threat.epsilon", &e.to_string())?;
    }
    if let Some(n) = args.threat_norm {
        config.set("threat.norm", &format!("{n:?}"))?;
    }
    if let Some(k) = args.attack {
        config.eval_attack.config.kind = k;
    }
    if let Some(s) = args.step_size {
        config.set("eval.step_size", &s.to_string())?;
    }
    let ds = load_dataset(&config)?;
    let indices: Vec<usize> = if args.subjects.is_empty() {
        (0..ds.len()).collect()
    } else {
        ds.indices_of(&args.subjects)
    };
    if indices.is_empty() {
        return Err(CliError::new("data", "no samples for the requested subjects"));
    }
    let mut samples = ds.to_samples(&indices)?;
    if let Some(path) = &args.stats {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let stats: NormStats = serde_json::from_str(&text)?;
        samples = robust_eeg::eeg::zscore_apply(&samples, &stats)?;
    }
    let mut net = IncModel::new(config.model_for(ds.dims()), 0)?;
    net.load_weights(&args.weights)
        .map_err(|e| CliError::new(e.class(), format!("{}: {e}", args.weights.display())))?;

    let mut attacks: Vec<(String, Attack)> = Vec::new();
    if args.steps.is_empty() {
        let a = config.eval_attack;
        let label = match a.config.kind {
            AttackKind::Fgsm => "fgsm".to_string(),
            AttackKind::Pgd => format!("pgd{}", a.config.steps),
        };
        attacks.push((label, a));
    } else {
        for &steps in &args.steps {
            let mut a = config.eval_attack;
            a.config.kind = AttackKind::Pgd;
            a.config.steps = steps;
            attacks.push((format!("pgd{steps}"), a));
        }
    }
    let write_files = args.config.out.is_some();
    if write_files {
        echo_config(&config)?;
    }
    for (label, attack) in &attacks {
        let attack = Attack::new(attack.threat, attack.config)?;
        let report = evaluate_robust(&net, &samples, &attack, config.seed, config.eval_batch)?;
        let text = report_text(label, &report);
        print!("{text}");
        if write_files {
            write(&config.out.join(format!("report-{label}.json")), json(&report)?)?;
            write(&config.out.join(format!("report-{label}.txt")), &text)?;
            write(&config.out.join(format!("confusion-{label}.csv")), confusion_csv(&report))?;
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Budgets to train with; overrides the `gammas` key.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
}

pub fn sweep(args: &SweepArgs, jobs: Option<usize>) -> Result<(), CliError> {
    let mut config = resolve(&args.config, jobs)?;
    if !args.gammas.is_empty() {
        config.gammas = args.gammas.clone();
    }
    let ds = load_dataset(&config)?;
    echo_config(&config)?;
    let report = gamma_sweep(&ds, &config.gammas, &config.ablation(ds.dims()))?;
    let csv = report.to_csv();
    write(&config.out.join("sweep.csv"), &csv)?;
    write(&config.out.join("sweep.txt"), report.to_text())?;
    write(&config.out.join("sweep.json"), json(&report)?)?;
    print!("{csv}");
    Ok(())
}

#[derive(Args)]
pub struct AblationArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Regimes to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [Defense::None, Defense::At, Defense::Tsp])]
    arms: Vec<Defense>,
}

pub fn ablation(args: &AblationArgs, jobs: Option<usize>) -> Result<(), CliError> {
    let config = resolve(&args.config, jobs)?;
    let ds = load_dataset(&config)?;
    echo_config(&config)?;
    let report = ablation_run(&ds, &args.arms, &config.ablation(ds.dims()))?;
    let text = report.to_text();
    write(&config.out.join("ablation.txt"), &text)?;
    write(&config.out.join("ablation.csv"), report.to_csv())?;
    write(&config.out.join("ablation.json"), json(&report)?)?;
    print!("{text}");
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Model input shape `n,c,t`.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 16, 16])]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    /// Entries probed per parameter tensor.
    #[arg(long, default_value_t = 4)]
    probes: usize,
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let [subbands, channels, timesteps]: [usize; 3] = args
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| CliError::config(format!("--dims needs 3 values, got {}", args.dims.len())))?;
    let results = run_suite(&SuiteConfig {
        subbands,
        channels,
        timesteps,
        seeds: args.seeds.clone(),
        probes: args.probes,
    })?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{verdict:<4} seed {:<3} {:<28} max rel err {:.3e}", r.seed, r.name, r.max_rel_err);
    }
    if failed > 0 {
        return Err(CliError::new(
            "gradcheck",
            format!("{failed} of {} checks at or above {SUITE_TOLERANCE:e}", results.len()),
        ));
    }
    println!("all {} checks below {SUITE_TOLERANCE:e}", results.len());
    Ok(())
}
