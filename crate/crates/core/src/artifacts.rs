//! Trained artifacts on disk: predictor checkpoint, candidate index,
//! vocabulary and run statistics, cross-checked by vocabulary fingerprint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_index::{CandidateIndex, IndexConfig, IndexError};
use crate::eventlog::{ActivityVocabulary, EventLog, EventLogError, KpiMode};
use crate::predictor::{train_log, KpiNormalization, MultiTaskModel, PredictorError, TrainConfig, TrainSummary};
use crate::recommender::{derive_threshold, RecommenderError, Threshold};

pub const MODEL_FILE: &str = "model.json";
pub const INDEX_FILE: &str = "index.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const STATS_FILE: &str = "stats.json";

const STATS_FORMAT: &str = "nextbest-stats";
const VOCABULARY_FORMAT: &str = "nextbest-vocabulary";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("artifact {path} is invalid: {message}")]
    Format { path: String, message: String },
    #[error("artifacts do not belong together: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Recommender(#[from] RecommenderError),
    #[error(transparent)]
    EventLog(#[from] EventLogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub format: String,
    pub version: u32,
    pub vocabulary_fingerprint: String,
    pub kpi_normalization: KpiNormalization,
    pub threshold: Threshold,
    pub kpi_mode: KpiMode,
    pub split: Option<SplitSpec>,
    pub seed: u64,
    pub config_hash: String,
    pub train_traces: usize,
    pub index_records: usize,
    pub summary: TrainSummary,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format: String,
    version: u32,
    fingerprint: String,
    activities: ActivityVocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub model: MultiTaskModel,
    pub index: CandidateIndex,
    pub stats: RunStats,
}

/// Everything the offline side needs besides the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingPlan {
    pub predictor: TrainConfig,
    pub index: IndexConfig,
    /// Expert threshold; derived from the training log when absent.
    pub threshold: Option<f64>,
    pub kpi_mode: KpiMode,
    pub split: Option<SplitSpec>,
    pub seed: u64,
    pub config_hash: String,
}

/// Trains the predictor, indexes the suffixes and fixes the threshold, all
/// from the same (unterminated) training log.
pub fn build_artifacts(train: &EventLog, plan: &TrainingPlan) -> Result<Artifacts, ArtifactError> {
    let threshold = match plan.threshold {
        Some(t) => Threshold::expert(t)?,
        None => derive_threshold(train)?,
    };
    let terminated = train.clone().terminated()?;
    let (mut model, summary) = train_log(&terminated, &plan.predictor, plan.seed)?;
    model.metadata.insert("config_hash".into(), plan.config_hash.clone());
    let index = CandidateIndex::build(&terminated, plan.index)?;
    let stats = RunStats {
        format: STATS_FORMAT.into(),
        version: VERSION,
        vocabulary_fingerprint: model.vocabulary.fingerprint(),
        kpi_normalization: model.kpi_normalization,
        threshold,
        kpi_mode: plan.kpi_mode,
        split: plan.split,
        seed: plan.seed,
        config_hash: plan.config_hash.clone(),
        train_traces: train.len(),
        index_records: index.len(),
        summary,
    };
    Ok(Artifacts { model, index, stats })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn read(dir: &Path, name: &str) -> Result<String, ArtifactError> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn invalid(name: &str, message: impl ToString) -> ArtifactError {
    ArtifactError::Format {
        path: name.to_owned(),
        message: message.to_string(),
    }
}

impl Artifacts {
    pub fn vocabulary(&self) -> &ActivityVocabulary {
        &self.model.vocabulary
    }

    pub fn threshold(&self) -> Threshold {
        self.stats.threshold
    }

    /// Writes the four artifact files, creating `dir` if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ArtifactError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| ArtifactError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let vocab = VocabularyFile {
            format: VOCABULARY_FORMAT.into(),
            version: VERSION,
            fingerprint: self.vocabulary().fingerprint(),
            activities: self.vocabulary().clone(),
        };
        Ok(vec![
            write(dir, MODEL_FILE, &self.model.to_json())?,
            write(dir, INDEX_FILE, &self.index.to_json())?,
            write(
                dir,
                VOCABULARY_FILE,
                &serde_json::to_string_pretty(&vocab).expect("vocabulary serialises"),
            )?,
            write(
                dir,
                STATS_FILE,
                &serde_json::to_string_pretty(&self.stats).expect("stats serialise"),
            )?,
        ])
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let dir = dir.as_ref();
        let model = MultiTaskModel::from_json(&read(dir, MODEL_FILE)?).map_err(|e| invalid(MODEL_FILE, e))?;
        let index = CandidateIndex::from_json(&read(dir, INDEX_FILE)?).map_err(|e| invalid(INDEX_FILE, e))?;
        let vocab: VocabularyFile =
            serde_json::from_str(&read(dir, VOCABULARY_FILE)?).map_err(|e| invalid(VOCABULARY_FILE, e))?;
        let stats: RunStats = serde_json::from_str(&read(dir, STATS_FILE)?).map_err(|e| invalid(STATS_FILE, e))?;
        if vocab.format != VOCABULARY_FORMAT || vocab.version != VERSION {
            return Err(invalid(VOCABULARY_FILE, format!("unsupported {} v{}", vocab.format, vocab.version)));
        }
        if stats.format != STATS_FORMAT || stats.version != VERSION {
            return Err(invalid(STATS_FILE, format!("unsupported {} v{}", stats.format, stats.version)));
        }
        let expected = model.vocabulary.fingerprint();
        let found = [
            (INDEX_FILE, index.vocabulary().fingerprint()),
            (VOCABULARY_FILE, vocab.activities.fingerprint()),
            (VOCABULARY_FILE, vocab.fingerprint.clone()),
            (STATS_FILE, stats.vocabulary_fingerprint.clone()),
        ];
        for (name, fp) in found {
            if fp != expected {
                return Err(ArtifactError::Mismatch(format!(
                    "{name} was built for vocabulary {fp}, the model for {expected}"
                )));
            }
        }
        Ok(Artifacts { model, index, stats })
    }
}
