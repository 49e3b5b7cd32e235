//! `breathlens` subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use breathlens::evaluation::{EvalError, EvaluationReport};
use breathlens::gradcam::explain_for_prediction;
use breathlens::segmentation::{fixed_length, segment_breaths, segments_to_csv};
use breathlens::synth::{generate_record, RecordProfile, SynthError};
use breathlens::waveform_io::{
    labeled_windows, load_record, split_dataset, write_annotations, write_record, LabeledWindow,
    Partition, SplitManifest, WaveformError, DEFAULT_SAMPLE_RATE_HZ,
};
use breathlens::xcm::{
    classify_all, derive_seed, load_model, save_model, train_with_observer, TrainStage, XcmConfig,
    XcmError,
};

use crate::api::{breath_id, router, ApiExplanationView, AppState};
use crate::data::{annotation_path, load_dir, record_path};

pub const PORT_ENV: &str = "BREATHLENS_PORT";
pub const DEFAULT_PORT: u16 = 8080;
const STREAM_SYNTH_RECORD: u64 = 0x5EED;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<WaveformError> for CliError {
    fn from(e: WaveformError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<XcmError> for CliError {
    fn from(e: XcmError) -> Self {
        match e {
            XcmError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            XcmError::Nn(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "breathlens", version, about = "Breath classification with Grad-CAM explanations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled synthetic records from a profile.
    Synth(SynthArgs),
    /// Write the zero-crossing segments of a record.
    Segment(SegmentArgs),
    /// Train a model on the annotated records of a data directory.
    Train(TrainArgs),
    /// Evaluate a model on annotated records.
    Eval(EvalArgs),
    /// Explain one breath of a record.
    Explain(ExplainArgs),
    /// Serve records, classifications and explanations over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// TOML profile; defaults are used when omitted.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Output directory for `<id>.csv` and `<id>.labels.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 18)]
    pub records: usize,
    #[arg(long, default_value_t = 300.0)]
    pub duration_s: f64,
    /// Overrides the profile seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub record: PathBuf,
    /// Segments CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate: f64,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file; the report and split manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub validation_records: usize,
    #[arg(long, default_value_t = 3)]
    pub test_records: usize,
    #[arg(long, default_value_t = 16)]
    pub filters_2d: usize,
    #[arg(long, default_value_t = 16)]
    pub filters_1d: usize,
    #[arg(long, default_value_t = 32)]
    pub filters_final: usize,
    #[arg(long, default_value_t = breathlens::xcm::DEFAULT_WINDOW_LEN)]
    pub window_len: usize,
    #[arg(long, default_value_t = breathlens::xcm::DEFAULT_KERNEL_SAMPLES)]
    pub kernel: usize,
    /// Weight the loss by inverse class frequency.
    #[arg(long)]
    pub class_weighting: bool,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate: f64,
    /// Suppress per-epoch progress.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split manifest; defaults to the one written next to the model.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Records to evaluate. Without a manifest every record is used.
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    /// Machine-readable report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate: f64,
}

#[derive(Debug, clap::Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub record: PathBuf,
    /// Zero-based breath index within the record's segmentation.
    #[arg(long)]
    pub breath: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate: f64,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to $BREATHLENS_PORT, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    pub sample_rate: f64,
}

/// Report and manifest paths written next to a model file.
pub fn report_path(model: &Path) -> PathBuf {
    model.with_extension("report.json")
}

pub fn manifest_path(model: &Path) -> PathBuf {
    model.with_extension("split.csv")
}

pub fn synth(args: &SynthArgs) -> Result<Vec<String>, CliError> {
    let mut profile = match &args.profile {
        Some(p) => RecordProfile::load(p)?,
        None => RecordProfile::default(),
    };
    if let Some(seed) = args.seed {
        profile.seed = seed;
    }
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    let base = profile.seed;
    let mut ids = Vec::with_capacity(args.records);
    for i in 0..args.records {
        let id = format!("rec{i:02}");
        let p = RecordProfile {
            record_id: id.clone(),
            seed: derive_seed(base, STREAM_SYNTH_RECORD, i as u64),
            ..profile.clone()
        };
        let (record, annotations) = generate_record(&p, args.duration_s)?;
        write_record(&record, &record_path(&args.out, &id))?;
        write_annotations(&annotations, &annotation_path(&args.out, &id))?;
        ids.push(id);
    }
    Ok(ids)
}

fn segment(args: &SegmentArgs) -> Result<(), CliError> {
    let record = load_record(&args.record, args.sample_rate)?;
    let csv = segments_to_csv(&segment_breaths(&record));
    match &args.out {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = XcmConfig {
        window_len: args.window_len,
        kernel_samples: args.kernel,
        filters_2d: args.filters_2d,
        filters_1d: args.filters_1d,
        filters_final: args.filters_final,
        batch_size: args.batch,
        epochs: args.epochs,
        folds: args.folds,
        seed: args.seed,
        lr: args.lr,
        class_weighting: args.class_weighting,
        ..XcmConfig::default()
    };
    config.validate()?;
    let mut labeled = Vec::new();
    for entry in load_dir(&args.data, args.sample_rate)? {
        match entry.annotations {
            Some(a) => labeled.push((entry.record, a)),
            None => eprintln!("skipping {}: no annotations", entry.record.record_id),
        }
    }
    if labeled.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no annotated records",
            args.data.display()
        )));
    }
    let dataset = split_dataset(
        &labeled,
        args.seed,
        args.validation_records,
        args.test_records,
        config.window_len,
    )?;
    let quiet = args.quiet;
    let (model, report) = train_with_observer(&dataset, &config, |e| {
        if !quiet {
            let stage = match e.stage {
                TrainStage::Fold(f) => format!("fold {}/{}", f + 1, config.folds),
                TrainStage::Final => "final".to_string(),
            };
            let acc = e
                .monitor_accuracy
                .map(|a| format!(" held-out accuracy {a:.4}"))
                .unwrap_or_default();
            eprintln!("{stage} epoch {}/{} loss {:.5}{acc}", e.epoch, e.epochs, e.loss);
        }
    })?;
    save_model(&model, &args.out)?;
    write_file(&report_path(&args.out), &report.to_json())?;
    dataset.manifest.save(&manifest_path(&args.out))?;
    if let Some(acc) = report.validation_accuracy {
        println!("validation accuracy {:.2}%", 100.0 * acc);
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

pub fn evaluate(args: &EvalArgs) -> Result<EvaluationReport, CliError> {
    let model = load_model(&args.model)?;
    let manifest_file = args.manifest.clone().unwrap_or_else(|| manifest_path(&args.model));
    let manifest = if manifest_file.is_file() {
        Some(SplitManifest::load(&manifest_file)?)
    } else if args.manifest.is_some() {
        return Err(CliError::Data(format!("{}: not found", manifest_file.display())));
    } else {
        None
    };
    let wanted = match args.partition {
        PartitionArg::Train => Some(Partition::Train),
        PartitionArg::Validation => Some(Partition::Validation),
        PartitionArg::Test => Some(Partition::Test),
        PartitionArg::All => None,
    };
    let mut windows: Vec<LabeledWindow> = Vec::new();
    for entry in load_dir(&args.data, args.sample_rate)? {
        let id = &entry.record.record_id;
        let selected = match (&manifest, wanted) {
            (Some(m), Some(p)) => m.0.get(id) == Some(&p),
            _ => true,
        };
        if let (true, Some(a)) = (selected, &entry.annotations) {
            windows.extend(labeled_windows(&entry.record, a, model.config.window_len));
        }
    }
    if windows.is_empty() {
        return Err(CliError::Data("no annotated windows to evaluate".into()));
    }
    let refs: Vec<&LabeledWindow> = windows.iter().collect();
    let predicted = classify_all(&model, &refs)?;
    let triples: Vec<_> = windows
        .iter()
        .zip(&predicted)
        .map(|(w, p)| {
            let id = w.window.source.as_ref().map(|s| s.record_id.clone()).unwrap_or_default();
            (id, w.label, p.label)
        })
        .collect();
    let report = EvaluationReport::from_predictions(&triples)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        write_file(out, &report.to_json())?;
    }
    Ok(report)
}

pub fn explain_breath(args: &ExplainArgs) -> Result<ApiExplanationView, CliError> {
    let model = load_model(&args.model)?;
    let record = load_record(&args.record, args.sample_rate)?;
    let segments = segment_breaths(&record);
    let segment = segments.get(args.breath).ok_or_else(|| {
        CliError::Data(format!(
            "{}: breath {} out of range ({} breaths)",
            args.record.display(),
            args.breath,
            segments.len()
        ))
    })?;
    let window = fixed_length(segment, model.config.window_len);
    let (classification, explanation) = explain_for_prediction(&model, &window)?;
    let view = ApiExplanationView::new(
        breath_id(&record.record_id, args.breath),
        &window,
        &classification,
        &explanation,
    );
    let json = serde_json::to_string_pretty(&view).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&args.out, &json)?;
    Ok(view)
}

/// Port from the flag, then `$BREATHLENS_PORT`, then the default.
pub fn resolve_port(flag: Option<u16>) -> Result<u16, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{PORT_ENV}={v:?} is not a port number"))),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let data = load_dir(&args.data, args.sample_rate)?;
    let port = resolve_port(args.port)?;
    let addr: SocketAddr = format!("{}:{port}", args.host)
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid host {:?}", args.host)))?;
    let state = Arc::new(AppState::new(model, data)?);
    let breaths: usize = state.records.values().map(|r| r.breaths.len()).sum();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {addr}: {e}")))?;
        eprintln!(
            "serving {} records, {breaths} breaths on http://{addr}",
            state.records.len()
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => {
            let ids = synth(a)?;
            println!("wrote {} records to {}", ids.len(), a.out.display());
            Ok(())
        }
        Command::Segment(a) => segment(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a).map(|_| ()),
        Command::Explain(a) => explain_breath(a).map(|v| {
            println!("{} explained as {} ({:.2}%)", v.breath_id, v.label, 100.0 * v.confidence);
        }),
        Command::Serve(a) => serve(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
