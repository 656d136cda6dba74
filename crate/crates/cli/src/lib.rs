//! Commands behind the `ddmd` binary, callable as plain functions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use ddmd_core::evalkit::{evaluate, split_train_test, ClassificationReport, EvalError};
use ddmd_core::forest::{fit, load_model, save_model, ForestError, ForestModel, Hyperparams};
use ddmd_core::pipeline::{
    extract_batch, extract_file, scan_corpus, verdict, EntryStatus, ExtractConfig, ExtractionFailure, FeatureStore,
    PipelineError, Verdict,
};
use ddmd_core::synth::{render_corpus, CorpusManifest, SynthError};
use ddmd_service::{AppState, ServiceConfig};

/// `User` exits with 1, `Internal` with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Forest(f) => f.into(),
            PipelineError::Batch(ref m) if m.starts_with("all ") => CliError::User(e.to_string()),
            PipelineError::Batch(_) => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

impl From<ForestError> for CliError {
    fn from(e: ForestError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Forest(f) => f.into(),
            other => CliError::User(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => CliError::User(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct ExtractSummary {
    pub rows: usize,
    pub skipped: usize,
    pub failures: Vec<ExtractionFailure>,
}

/// Scans `corpus`, extracts every file and writes the feature CSV.
pub fn cmd_extract(
    corpus: &Path,
    out: &Path,
    workers: usize,
    config: &ExtractConfig,
) -> Result<ExtractSummary, CliError> {
    if workers == 0 {
        return Err(CliError::User("--workers must be at least 1".into()));
    }
    let entries = scan_corpus(corpus)?;
    let skipped = entries.iter().filter(|e| matches!(e.status, EntryStatus::Failed(_))).count();
    let output = extract_batch(&entries, workers, config)?;
    for f in &output.failures {
        log::warn!("{}: {}", f.path.display(), f.reason);
    }
    output.store.save(out)?;
    Ok(ExtractSummary { rows: output.store.rows.len(), skipped, failures: output.failures })
}

/// Where `cmd_train` writes the report: `model.json` → `model.report.json`.
pub fn report_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("report.json")
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub report: ClassificationReport,
    pub report_path: PathBuf,
}

/// Split → fit on the training part → evaluate on the held-out part →
/// save the model and its report. `hp.seed` seeds both split and forest.
pub fn cmd_train(
    features: &Path,
    model_path: &Path,
    hp: &Hyperparams,
    test_fraction: f64,
) -> Result<TrainSummary, CliError> {
    let data = FeatureStore::load(features)?.to_training_set()?;
    let split = split_train_test(data.len(), test_fraction, hp.seed)?;
    let train = data.subset(&split.train_indices);
    let test = data.subset(&split.test_indices);
    let model = fit(&train, hp)?;
    if model.is_degenerate() {
        log::warn!("training data holds a single class; every prediction will be the same");
    }
    let report = evaluate(&model, &test)?;
    save_model(&model, model_path)?;
    let report_path = report_path(model_path);
    std::fs::write(&report_path, report.to_json_pretty())
        .map_err(|e| CliError::User(format!("{}: {e}", report_path.display())))?;
    Ok(TrainSummary { n_train: train.len(), n_test: test.len(), report, report_path })
}

/// Evaluates a saved model on every row of a feature CSV.
pub fn cmd_evaluate(features: &Path, model_path: &Path) -> Result<ClassificationReport, CliError> {
    let data = FeatureStore::load(features)?.to_training_set()?;
    let model = load_model(model_path)?;
    Ok(evaluate(&model, &data)?)
}

pub fn cmd_predict(model_path: &Path, audio: &Path, config: &ExtractConfig) -> Result<Verdict, CliError> {
    let model: ForestModel = load_model(model_path)?;
    let features = extract_file(audio, config)?;
    Ok(verdict(&model, &features)?)
}

/// The line `ddmd predict` prints.
pub struct VerdictLine(pub Verdict);

impl fmt::Display for VerdictLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.4}", self.0.label, self.0.confidence)
    }
}

/// Renders the synthetic corpus and writes `manifest.json` beside it.
pub fn cmd_synth(out: &Path, n_per_class: usize, seed: u64) -> Result<CorpusManifest, CliError> {
    if n_per_class == 0 {
        return Err(CliError::User("--n-per-class must be at least 1".into()));
    }
    let manifest = render_corpus(out, n_per_class, seed)?;
    let path = out.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

/// Blocks serving HTTP on `host:port`.
pub fn cmd_serve(host: &str, port: u16, model: Option<&Path>, config: ServiceConfig) -> Result<(), CliError> {
    let state = Arc::new(AppState::with_model_path(model, config));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::User(format!("binding {host}:{port}: {e}")))?;
        ddmd_service::serve(listener, state).await.map_err(|e| CliError::Internal(e.to_string()))
    })
}
