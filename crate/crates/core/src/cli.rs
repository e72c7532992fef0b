//! Command-line front end.
//!
//! Every command reads an optional JSON [`RunConfig`]; flags override it.
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::Corpus;
use crate::evaluation::report::{evaluate, write_report, EvaluationOptions, RecordingOutcome};
use crate::evaluation::{confusion, export_hypnogram, render_hypnogram_svg, ConfusionMatrix, OverallAccuracy};
use crate::filters::{class_activation_matrix, export_profile, filter_spectra, ActivationProfile, ActivationTap, Norm};
use crate::ingest::{load_corpus, load_recording, LabelFile, Recording, RecordingFiles, DEFAULT_CHANNEL};
use crate::model::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use crate::model::{FirstLayerMode, L2Scope, ModelConfig, ModelError};
use crate::tensor::Real;
use crate::training::{
    fold_checkpoint_path, fold_json_path, folds_for, load_fold_results, predict_recording, run_crossvalidation, train_fold,
    write_json, CrossvalOptions, RunManifest, TrainError,
};
use crate::{Error, Result, SAMPLING_RATE_HZ};

pub const DATA_DIR_ENV: &str = "SOMNO_DATA_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FoldSelection {
    All(String),
    List(Vec<usize>),
}

impl Default for FoldSelection {
    fn default() -> Self {
        FoldSelection::All("all".into())
    }
}

impl FoldSelection {
    fn list(&self) -> Option<Vec<usize>> {
        match self {
            FoldSelection::All(_) => None,
            FoldSelection::List(v) => Some(v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationBlock {
    pub bootstrap_samples: usize,
    pub seed: u64,
    pub overall: OverallAccuracy,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        EvaluationBlock { bootstrap_samples: 1000, seed: 0, overall: OverallAccuracy::Raw }
    }
}

/// Everything a run needs besides the seed. Only `data_dir` lacks a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub channel: String,
    pub model: ModelConfig,
    pub evaluation: EvaluationBlock,
    pub output_dir: PathBuf,
    pub folds: FoldSelection,
    pub parallel: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            channel: DEFAULT_CHANNEL.into(),
            model: ModelConfig::default(),
            evaluation: EvaluationBlock::default(),
            output_dir: PathBuf::from("somno-out"),
            folds: FoldSelection::default(),
            parallel: 1,
            precision: Precision::F32,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Parser, Debug)]
#[command(name = "somno", version, about = "Sleep-stage scoring from a single EEG channel")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse every recording in a directory and write a dataset summary.
    Ingest(IngestArgs),
    /// Train a single fold.
    Train(TrainArgs),
    /// Leave-one-subject-out cross-validation.
    Crossval(TrainArgs),
    /// Aggregate fold results into confusion, metric and regression tables.
    Evaluate(EvaluateArgs),
    /// Score one recording with a checkpoint.
    Predict(PredictArgs),
    /// Spectra and per-stage activation profiles of first-layer filters.
    AnalyzeFilters(AnalyzeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Recording directory; falls back to the config, then $SOMNO_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Full,
    Reduced,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seed for initialization, batches and fold assignment.
    #[arg(long)]
    pub seed: u64,
    /// Fold to train (train) or comma-separated folds (crossval).
    #[arg(long, value_delimiter = ',')]
    pub fold: Option<Vec<usize>>,
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub l2_softmax_only: bool,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Use a fixed Morlet wavelet bank as the first layer.
    #[arg(long)]
    pub morlet: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory holding fold_XX.json files.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// A JSON 5×5 count matrix to evaluate instead of fold results.
    #[arg(long, conflicts_with = "results")]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub overall: Option<OverallArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OverallArg {
    Raw,
    Balanced,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PSG EDF file.
    #[arg(long)]
    pub psg: PathBuf,
    /// Hypnogram EDF+ or `epoch_index,label` CSV.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub lights_out_s: Option<f64>,
    #[arg(long, default_value = DEFAULT_CHANNEL)]
    pub channel: String,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TapArg {
    PreRelu,
    PostRelu,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormArg {
    L2,
    L1,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to analyze; with --results, defaults to that fold's checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cross-validation output holding the fold's result.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Subjects whose windows are profiled; defaults to the fold's test subject.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "post-relu")]
    pub tap: TapArg,
    #[arg(long, value_enum, default_value = "l2")]
    pub norm: NormArg,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Model(ModelError::Config(_)) => 2,
        Error::Train(TrainError::NonFinite { .. }) | Error::Model(ModelError::NonFinite { .. }) => 4,
        _ => 3,
    }
}

pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).try_init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a, false),
        Command::Crossval(a) => cmd_train(&a, true),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::AnalyzeFilters(a) => cmd_analyze_filters(&a),
    }
}

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if cfg.data_dir.is_none() {
        cfg.data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    }
    if let Some(c) = &common.channel {
        cfg.channel = c.clone();
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("no data directory: pass --data-dir, set data_dir in the config, or set {DATA_DIR_ENV}")))
}

/// Records how an output directory was produced: the version, the command
/// line and the resolved settings.
fn stamp(dir: &Path, command: &str, settings: serde_json::Value) -> Result<()> {
    let record = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "args": std::env::args().collect::<Vec<_>>(),
        "settings": settings,
    });
    write_json(&record, &dir.join(format!("{command}_invocation.json")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct IngestRow<'a> {
    recording: &'a str,
    subject_id: &'a str,
    night: u32,
    total_epochs: usize,
    in_bed_epochs: usize,
    retained_epochs: usize,
    removed_movement: usize,
    removed_unscored: usize,
    stages: BTreeMap<String, usize>,
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let cfg = base_config(&a.common)?;
    let dir = data_dir(&cfg)?;
    let corpus = load_corpus(dir, &cfg.channel)?;
    create_dir(&cfg.output_dir)?;
    let rows: Vec<IngestRow> = corpus
        .iter()
        .map(|(f, r, rep)| IngestRow {
            recording: &f.name,
            subject_id: &r.subject_id,
            night: r.night,
            total_epochs: rep.total_epochs,
            in_bed_epochs: rep.in_bed_epochs,
            retained_epochs: rep.retained_epochs,
            removed_movement: rep.removed_movement,
            removed_unscored: rep.removed_unscored,
            stages: crate::SleepStage::ALL.iter().map(|s| (s.to_string(), r.stage_histogram()[s.index()])).collect(),
        })
        .collect();
    let movement: usize = rows.iter().map(|r| r.removed_movement).sum();
    let summary = serde_json::json!({
        "data_dir": dir,
        "channel": cfg.channel,
        "recordings": rows,
        "subjects": crate::training::subjects_of(&corpus.iter().map(|c| c.1.clone()).collect::<Vec<_>>()).len(),
        "removed_movement_total": movement,
    });
    write_json(&summary, &cfg.output_dir.join("dataset_summary.json"))?;
    stamp(&cfg.output_dir, "ingest", serde_json::json!({ "data_dir": dir, "channel": cfg.channel }))?;

    let mut csv = String::from("recording,subject,night,total,in_bed,retained,movement,unscored,N1,N2,N3,R,W\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.recording, r.subject_id, r.night, r.total_epochs, r.in_bed_epochs, r.retained_epochs, r.removed_movement, r.removed_unscored
        ));
        for v in r.stages.values() {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let path = cfg.output_dir.join("dataset_summary.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    println!("{} recordings, {} movement epochs removed; summary in {}", rows.len(), movement, cfg.output_dir.display());
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(p) = a.preset {
        let keep = cfg.model.clone();
        cfg.model = match p {
            Preset::Full => ModelConfig::default(),
            Preset::Reduced => ModelConfig::reduced(),
        };
        cfg.model.first_layer = keep.first_layer;
        cfg.model.morlet = keep.morlet;
    }
    let m = &mut cfg.model;
    m.seed = a.seed;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { m.$field = v; })* };
    }
    set!(max_iterations, batch_size, learning_rate, momentum, l2, eval_every, patience);
    if a.l2_softmax_only {
        m.l2_scope = L2Scope::SoftmaxOnly;
    }
    if a.morlet {
        m.first_layer = FirstLayerMode::FixedMorlet;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    if let Some(p) = a.parallel {
        cfg.parallel = p;
    }
    if let Some(f) = &a.fold {
        cfg.folds = FoldSelection::List(f.clone());
    }
}

fn load_recordings(cfg: &RunConfig) -> Result<Vec<Recording>> {
    let corpus = load_corpus(data_dir(cfg)?, &cfg.channel)?;
    Ok(corpus.into_iter().map(|(_, r, _)| r).collect())
}

fn cmd_train(a: &TrainArgs, crossval: bool) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_overrides(&mut cfg, a);
    cfg.model.validate()?;
    let recordings = load_recordings(&cfg)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg, &cfg.output_dir.join("run_config.json"))?;
    stamp(&cfg.output_dir, if crossval { "crossval" } else { "train" }, serde_json::json!({ "config": cfg, "seed": a.seed }))?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, &recordings, a.seed, crossval),
        Precision::F64 => train_with::<f64>(&cfg, &recordings, a.seed, crossval),
    }
}

fn train_with<T: Real>(cfg: &RunConfig, recordings: &[Recording], seed: u64, crossval: bool) -> Result<()> {
    if !crossval {
        let fold = match cfg.folds.list().as_deref() {
            Some([f]) => *f,
            _ => return Err(Error::Usage("train needs exactly one --fold".into())),
        };
        let splits = folds_for(recordings, seed)?;
        let split = splits.get(fold).ok_or_else(|| Error::Usage(format!("fold {fold} out of range (0..{})", splits.len())))?;
        let trained = train_fold::<T>(recordings, split, &cfg.model, seed)?;
        let ckpt = fold_checkpoint_path(&cfg.output_dir, fold);
        save_checkpoint(&trained.params, &ckpt)?;
        let mut result = trained.result;
        result.checkpoint = Some(ckpt);
        write_json(&result, &fold_json_path(&cfg.output_dir, fold))?;
        let manifest = RunManifest {
            config: cfg.model.clone(),
            config_hash: result.config_hash.clone(),
            seed,
            input_hash: crate::training::input_hash(recordings),
            recordings: recordings.iter().map(Recording::key).collect(),
            folds: splits.iter().map(|s| s.manifest(seed)).collect(),
        };
        write_json(&manifest, &cfg.output_dir.join("manifest.json"))?;
        println!("fold {fold}: test matrix total {} epochs, results in {}", result.test_matrix.total(), cfg.output_dir.display());
        return Ok(());
    }
    let options = CrossvalOptions { folds: cfg.folds.list(), parallel: cfg.parallel, out_dir: Some(cfg.output_dir.clone()) };
    let result = run_crossvalidation::<T>(recordings, &cfg.model, seed, &options)?;
    for (fold, e) in &result.failures {
        eprintln!("fold {fold} failed: {e}");
    }
    println!("{} folds complete, {} failed; results in {}", result.folds.len(), result.failures.len(), cfg.output_dir.display());
    if result.failures.is_empty() {
        Ok(())
    } else if result.failures.iter().any(|(_, e)| e.contains("non-finite")) {
        Err(Error::Train(TrainError::NonFinite { iteration: 0, provenance: "see fold errors above".into() }))
    } else {
        Err(Error::Usage(format!("{} folds failed", result.failures.len())))
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut block = match &a.config {
        Some(p) => RunConfig::load(p)?.evaluation,
        None => EvaluationBlock::default(),
    };
    if let Some(n) = a.bootstrap {
        block.bootstrap_samples = n;
    }
    if let Some(s) = a.seed {
        block.seed = s;
    }
    if let Some(o) = a.overall {
        block.overall = match o {
            OverallArg::Raw => OverallAccuracy::Raw,
            OverallArg::Balanced => OverallAccuracy::Balanced,
        };
    }
    let options = EvaluationOptions { bootstrap_samples: block.bootstrap_samples, seed: block.seed, overall: block.overall };
    let outcomes: Vec<RecordingOutcome> = match (&a.results, &a.matrix) {
        (_, Some(m)) => {
            let text = std::fs::read_to_string(m).map_err(|e| Error::io(m, e))?;
            let counts: [[u64; 5]; 5] = serde_json::from_str(&text).map_err(|e| Error::json(m, e))?;
            vec![RecordingOutcome {
                recording: "aggregate".into(),
                subject_id: String::new(),
                matrix: ConfusionMatrix::new(counts),
                sleep_efficiency: None,
                transitional_pct: None,
            }]
        }
        (Some(dir), None) => {
            let folds = load_fold_results(dir)?;
            let manifest = dir.join("manifest.json");
            if manifest.exists() {
                let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
                let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(&manifest, e))?;
                let missing: Vec<usize> =
                    m.folds.iter().map(|f| f.fold).filter(|i| !folds.iter().any(|r| r.fold_index == *i)).collect();
                if !missing.is_empty() {
                    return Err(Error::Usage(format!("{}: missing results for folds {missing:?}", dir.display())));
                }
            }
            if folds.is_empty() {
                return Err(Error::Usage(format!("{}: no fold_XX.json files", dir.display())));
            }
            folds.into_iter().flat_map(|f| f.recordings).collect()
        }
        (None, None) => return Err(Error::Usage("pass --results DIR or --matrix FILE".into())),
    };
    let report = evaluate(&outcomes, options)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("somno-eval"));
    write_report(&report, &out)?;
    stamp(&out, "evaluate", serde_json::json!({ "results": a.results, "matrix": a.matrix, "options": options }))?;
    let m = &report.metrics;
    println!(
        "mean F1 {:.1}, worst F1 {:.1}, overall accuracy {:.1}; tables in {}",
        100.0 * m.mean.f1,
        100.0 * m.worst.f1,
        100.0 * m.overall_accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let labels = if a.labels.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        LabelFile::Csv(a.labels.clone())
    } else {
        LabelFile::Hypnogram(a.labels.clone())
    };
    let stem = a.psg.file_stem().and_then(|s| s.to_str()).unwrap_or("recording").trim_end_matches("-PSG").to_string();
    let (subject_id, night) = crate::ingest::corpus::subject_and_night(&stem);
    let files = RecordingFiles { name: stem.clone(), psg: a.psg.clone(), labels, subject_id, night };
    let (recording, _) = load_recording(&files, &a.channel, a.lights_out_s)?;
    match a.precision {
        Precision::F32 => predict_with::<f32>(a, &recording, &stem),
        Precision::F64 => predict_with::<f64>(a, &recording, &stem),
    }
}

fn predict_with<T: Real>(a: &PredictArgs, recording: &Recording, stem: &str) -> Result<()> {
    let params = load_checkpoint::<T>(&a.checkpoint)?;
    let predicted = predict_recording(&params, recording)?;
    let expert = recording.stages();
    create_dir(&a.out)?;
    export_hypnogram(&predicted, &a.out.join(format!("{stem}-predicted.csv")))?;
    let both = render_hypnogram_svg(&[("expert", &expert), ("predicted", &predicted)]);
    let cmp = a.out.join(format!("{stem}-comparison.svg"));
    std::fs::write(&cmp, both).map_err(|e| Error::io(&cmp, e))?;
    let m = confusion(&predicted, &expert)?;
    write_json(&m, &a.out.join(format!("{stem}-confusion.json")))?;
    stamp(
        &a.out,
        "predict",
        serde_json::json!({ "checkpoint": a.checkpoint, "psg": a.psg, "labels": a.labels, "channel": a.channel, "precision": a.precision }),
    )?;
    println!("{} epochs scored, {:.1}% agree with the labels", predicted.len(), 100.0 * m.trace() as f64 / m.total() as f64);
    Ok(())
}

fn cmd_analyze_filters(a: &AnalyzeArgs) -> Result<()> {
    let cfg = base_config(&a.common)?;
    let fold_result = match (&a.results, a.fold) {
        (Some(dir), Some(f)) => {
            let p = fold_json_path(dir, f);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_str::<crate::training::FoldResult>(&text).map_err(|e| Error::json(&p, e))?)
        }
        (Some(_), None) => return Err(Error::Usage("--results needs --fold".into())),
        _ => None,
    };
    let checkpoint = a
        .checkpoint
        .clone()
        .or_else(|| fold_result.as_ref().and_then(|r| r.checkpoint.clone()))
        .ok_or_else(|| Error::Usage("pass --checkpoint or --results with --fold".into()))?;
    let subjects = a
        .subjects
        .clone()
        .or_else(|| fold_result.as_ref().map(|r| r.split.test.clone()))
        .ok_or_else(|| Error::Usage("pass --subjects or --results with --fold".into()))?;
    let recordings = load_recordings(&cfg)?;
    let tap = match a.tap {
        TapArg::PreRelu => ActivationTap::PreRelu,
        TapArg::PostRelu => ActivationTap::PostRelu,
    };
    let norm = match a.norm {
        NormArg::L2 => Norm::L2,
        NormArg::L1 => Norm::L1,
    };
    let out = match a.fold {
        Some(f) => cfg.output_dir.join(format!("filters_fold_{f:02}")),
        None => cfg.output_dir.join("filters"),
    };
    match a.precision {
        Precision::F32 => analyze_with::<f32>(&checkpoint, &recordings, &subjects, tap, norm, a.fold, &out),
        Precision::F64 => analyze_with::<f64>(&checkpoint, &recordings, &subjects, tap, norm, a.fold, &out),
    }
}

fn analyze_with<T: Real>(
    checkpoint: &Path,
    recordings: &[Recording],
    subjects: &[String],
    tap: ActivationTap,
    norm: Norm,
    fold: Option<usize>,
    out: &Path,
) -> Result<()> {
    let params = load_checkpoint::<T>(checkpoint)?;
    let params = if params.config.input_len == crate::WINDOW_SAMPLES {
        params
    } else {
        load_checkpoint_for::<T>(checkpoint, &ModelConfig::default())?
    };
    let corpus = Corpus::new(recordings);
    let keys: Vec<_> = corpus.keys_for_subjects(subjects).into_iter().map(|k| k.0).collect();
    if keys.is_empty() {
        return Err(Error::Usage(format!("no recordings for subjects {subjects:?}")));
    }
    let raw = class_activation_matrix(&params, &corpus, &keys, tap)?;
    let profile = ActivationProfile::from_raw(raw, norm);
    let spectra = filter_spectra(&params, SAMPLING_RATE_HZ);
    let files = export_profile(&profile, &spectra, fold, out)?;
    stamp(
        out,
        "analyze-filters",
        serde_json::json!({ "checkpoint": checkpoint, "subjects": subjects, "tap": format!("{tap:?}"), "norm": format!("{norm:?}") }),
    )?;
    println!("{} windows profiled; wrote {} files to {}", keys.len(), files.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_defaults_and_overrides() {
        let cfg: RunConfig = serde_json::from_str(r#"{"data_dir": "/d", "folds": [1, 2], "model": {"patience": 3}}"#).unwrap();
        assert_eq!(cfg.folds.list(), Some(vec![1, 2]));
        assert_eq!(cfg.model.patience, 3);
        assert_eq!(cfg.channel, DEFAULT_CHANNEL);
        let all: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(all.folds.list(), None);
        assert!(all.data_dir.is_none());
    }

    #[test]
    fn seed_is_required() {
        assert!(Cli::try_parse_from(["somno", "train", "--fold", "1"]).is_err());
        assert!(Cli::try_parse_from(["somno", "crossval"]).is_err());
        assert!(Cli::try_parse_from(["somno", "crossval", "--seed", "3"]).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Usage("x".into())), 2);
        assert_eq!(exit_code(&Error::Train(TrainError::NonFinite { iteration: 1, provenance: String::new() })), 4);
        assert_eq!(exit_code(&crate::ingest::IngestError::NoLightsOut.into()), 3);
    }
}
