//! Corpus scanning, parallel batch extraction and the CSV feature store.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::audio_io::{load_audio, supported_extension, AudioError, AudioSource, LoadConfig};
use crate::features::{extract_feature_vector, FeatureConfig, FeatureVector, N_FEATURES};
use crate::forest::{ForestError, ForestModel, TrainingSet};
use crate::label::Label;
use crate::spectral::SpectralError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus layout: {0}")]
    CorpusLayout(String),
    #[error("batch failed: {0}")]
    Batch(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("{path}: {message}")]
    FeatureStore { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Decoding plus analysis settings; together with the input bytes they
/// fully determine a feature vector.
#[derive(Debug, Clone, Default)]
pub struct ExtractConfig {
    pub load: LoadConfig,
    pub features: FeatureConfig,
}

pub fn extract_file(path: &Path, config: &ExtractConfig) -> Result<FeatureVector, PipelineError> {
    let clip = load_audio(AudioSource::Path(path), &config.load)?;
    Ok(extract_feature_vector(&clip, &config.features)?)
}

pub fn extract_bytes(data: &[u8], extension: &str, config: &ExtractConfig) -> Result<FeatureVector, PipelineError> {
    let clip = load_audio(AudioSource::Bytes { data, extension }, &config.load)?;
    Ok(extract_feature_vector(&clip, &config.features)?)
}

/// Predicted label and the vote fraction behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub confidence: f64,
}

pub fn verdict(model: &ForestModel, features: &FeatureVector) -> Result<Verdict, ForestError> {
    let label = model.predict(features.as_slice())?;
    let p_dd = model.predict_proba(features.as_slice())?;
    let confidence = match label {
        Label::Dd => p_dd,
        Label::Ndd => 1.0 - p_dd,
    };
    Ok(Verdict { label, confidence })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub label: Label,
    pub status: EntryStatus,
}

/// Lists `root/DD/*` and `root/NDD/*` in lexicographic path order. Files
/// with an unsupported extension are kept as `Failed` entries.
pub fn scan_corpus(root: &Path) -> Result<Vec<CorpusEntry>, PipelineError> {
    let mut entries = Vec::new();
    for label in [Label::Dd, Label::Ndd] {
        let dir = root.join(label.as_str());
        if !dir.is_dir() {
            return Err(PipelineError::CorpusLayout(format!("missing directory {}", dir.display())));
        }
        let listing = fs::read_dir(&dir).map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
        for item in listing {
            let item = item.map_err(|source| PipelineError::Io { path: dir.clone(), source })?;
            let path = item.path();
            if !path.is_file() {
                continue;
            }
            let status = if supported_extension(&path).is_some() {
                EntryStatus::Ok
            } else {
                log::warn!("skipping {}: unsupported extension", path.display());
                EntryStatus::Failed("unsupported extension".into())
            };
            entries.push(CorpusEntry { path, label, status });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub path: String,
    pub label: Label,
    pub values: [f64; N_FEATURES],
}

/// Rows of `path,label,f0..f33`. The header is fixed; a file whose header
/// differs is rejected on read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    pub rows: Vec<FeatureRow>,
}

impl FeatureStore {
    pub fn header() -> Vec<String> {
        let mut h = vec!["path".to_string(), "label".to_string()];
        h.extend(FeatureVector::column_names());
        h
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header())?;
        for row in &self.rows {
            let mut record = vec![row.path.clone(), row.label.to_string()];
            record.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing CSV to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_csv_bytes()).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
    }

    pub fn read_from<R: Read>(input: R, origin: &Path) -> Result<Self, PipelineError> {
        let err = |message: String| PipelineError::FeatureStore { path: origin.to_path_buf(), message };
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_owned).collect();
        if header != Self::header() {
            return Err(err("unexpected header; expected path,label,f0..f33".into()));
        }
        let mut rows = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| err(e.to_string()))?;
            let at = |m: String| err(format!("row {}: {m}", line + 1));
            let label: Label = record[1].parse().map_err(at)?;
            let mut values = [0.0; N_FEATURES];
            for (i, v) in values.iter_mut().enumerate() {
                let cell = &record[i + 2];
                *v = cell.parse::<f64>().map_err(|_| at(format!("bad number {cell:?} in f{i}")))?;
                if !v.is_finite() {
                    return Err(at(format!("non-finite value in f{i}")));
                }
            }
            rows.push(FeatureRow { path: record[0].to_string(), label, values });
        }
        Ok(FeatureStore { rows })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let file = fs::File::open(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        Self::read_from(file, path)
    }

    pub fn to_training_set(&self) -> Result<TrainingSet, PipelineError> {
        Ok(TrainingSet::new(
            self.rows.iter().map(|r| r.values.to_vec()).collect(),
            self.rows.iter().map(|r| r.label).collect(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionFailure {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    pub store: FeatureStore,
    pub failures: Vec<ExtractionFailure>,
}

/// Extracts every `Ok` entry on a pool of `workers` threads. Rows follow the
/// input order; per-file failures are collected, not fatal, unless every
/// entry fails.
pub fn extract_batch(
    entries: &[CorpusEntry],
    workers: usize,
    config: &ExtractConfig,
) -> Result<BatchOutput, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Batch(e.to_string()))?;
    let results: Vec<Result<FeatureVector, String>> = pool.install(|| {
        entries
            .par_iter()
            .map(|entry| match &entry.status {
                EntryStatus::Failed(reason) => Err(reason.clone()),
                EntryStatus::Ok => extract_file(&entry.path, config).map_err(|e| e.to_string()),
            })
            .collect()
    });

    let mut out = BatchOutput::default();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok(v) => out.store.rows.push(FeatureRow {
                path: entry.path.to_string_lossy().into_owned(),
                label: entry.label,
                values: v.values,
            }),
            Err(reason) => out.failures.push(ExtractionFailure { path: entry.path.clone(), reason }),
        }
    }
    if out.store.rows.is_empty() {
        return Err(PipelineError::Batch(format!("all {} entries failed", entries.len())));
    }
    Ok(out)
}
