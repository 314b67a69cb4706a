//! Nearest-neighbour retrieval of historical suffixes.

mod balltree;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{ActivityVocabulary, EventLog, EventLogError};
use crate::predictor::{KpiNormalization, SuffixStep};

pub use balltree::{euclidean, BallTree, Node};

const FORMAT: &str = "nextbest-index";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("the index holds no suffixes")]
    Empty,
    #[error("invalid index configuration: {0}")]
    Config(String),
    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid suffix record: {0}")]
    Record(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Vocabulary(#[from] EventLogError),
    #[error("index file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A historical suffix, ordinal encoded and ending with the termination
/// activity. `support` counts identical suffixes merged into this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffixRecord {
    pub activities: Vec<u32>,
    pub kpi_values: Vec<f64>,
    pub total_kpi: f64,
    pub case_id: String,
    pub support: usize,
}

impl SuffixRecord {
    pub fn new(
        activities: Vec<u32>,
        kpi_values: Vec<f64>,
        case_id: impl Into<String>,
    ) -> Result<Self, IndexError> {
        if activities.len() != kpi_values.len() {
            return Err(IndexError::Record(format!(
                "{} activities but {} KPI values",
                activities.len(),
                kpi_values.len()
            )));
        }
        if activities.contains(&0) {
            return Err(IndexError::Record("ordinal 0 is reserved for padding".into()));
        }
        if kpi_values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::Record("KPI values must be finite".into()));
        }
        Ok(SuffixRecord {
            total_kpi: kpi_values.iter().sum(),
            activities,
            kpi_values,
            case_id: case_id.into(),
            support: 1,
        })
    }

    pub fn from_steps(
        steps: &[SuffixStep],
        vocabulary: &ActivityVocabulary,
        case_id: impl Into<String>,
    ) -> Result<Self, IndexError> {
        let activities = steps
            .iter()
            .map(|s| Ok(vocabulary.require(&s.activity)? as u32 + 1))
            .collect::<Result<Vec<_>, IndexError>>()?;
        Self::new(activities, steps.iter().map(|s| s.kpi).collect(), case_id)
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.is_empty()
    }

    pub fn steps(&self, vocabulary: &ActivityVocabulary) -> Result<Vec<SuffixStep>, IndexError> {
        self.activities
            .iter()
            .zip(&self.kpi_values)
            .map(|(&o, &kpi)| {
                let name = vocabulary
                    .name_of_ordinal(o)
                    .ok_or_else(|| IndexError::Record(format!("ordinal {o} is outside the vocabulary")))?;
                Ok(SuffixStep::new(name, kpi))
            })
            .collect()
    }
}

/// Every non-empty suffix `tl^k` of every terminated trace, `1 <= k < n`.
pub fn suffix_records(log: &EventLog) -> Result<Vec<SuffixRecord>, IndexError> {
    let vocab = log.vocabulary();
    let mut out = Vec::new();
    for trace in log.traces() {
        if !trace.is_terminated() {
            return Err(EventLogError::NotTerminated(trace.case_id().to_owned()).into());
        }
        let ordinals = trace
            .events()
            .iter()
            .map(|e| Ok(vocab.require(&e.activity)? as u32 + 1))
            .collect::<Result<Vec<_>, IndexError>>()?;
        let kpis: Vec<f64> = trace.events().iter().map(|e| e.kpi).collect();
        for k in 1..trace.len() {
            out.push(SuffixRecord::new(
                ordinals[k..].to_vec(),
                kpis[k..].to_vec(),
                trace.case_id(),
            )?);
        }
    }
    Ok(out)
}

/// Merges records with identical activities and KPI values, keeping the
/// first occurrence and summing support.
pub fn deduplicate(records: Vec<SuffixRecord>) -> Vec<SuffixRecord> {
    let mut seen: HashMap<(Vec<u32>, Vec<u64>), usize> = HashMap::new();
    let mut out: Vec<SuffixRecord> = Vec::new();
    for r in records {
        let key = (r.activities.clone(), r.kpi_values.iter().map(|v| v.to_bits()).collect());
        match seen.get(&key) {
            Some(&i) => out[i].support += r.support,
            None => {
                seen.insert(key, out.len());
                out.push(r);
            }
        }
    }
    out
}

/// Fixed-length embedding: `max_len` ordinals then `max_len` scaled KPI
/// values, both zero padded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffixVectorizer {
    pub max_len: usize,
    pub kpi_weight: f64,
    pub scaling: KpiNormalization,
}

impl SuffixVectorizer {
    pub fn dimension(&self) -> usize {
        2 * self.max_len
    }

    pub fn vectorize(&self, activities: &[u32], kpi_values: &[f64]) -> Vec<f64> {
        let n = activities.len().min(kpi_values.len());
        if n > self.max_len {
            log::warn!("suffix of length {n} truncated to {}", self.max_len);
        }
        let mut v = vec![0.0; self.dimension()];
        for j in 0..n.min(self.max_len) {
            v[j] = activities[j] as f64;
            v[self.max_len + j] = self.scaling.normalize(kpi_values[j]) * self.kpi_weight;
        }
        v
    }

    pub fn vectorize_record(&self, record: &SuffixRecord) -> Vec<f64> {
        self.vectorize(&record.activities, &record.kpi_values)
    }

    pub fn vectorize_steps(
        &self,
        steps: &[SuffixStep],
        vocabulary: &ActivityVocabulary,
    ) -> Result<Vec<f64>, IndexError> {
        let r = SuffixRecord::from_steps(steps, vocabulary, "")?;
        Ok(self.vectorize_record(&r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub leaf_size: usize,
    pub kpi_weight: f64,
    pub deduplicate: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            leaf_size: 16,
            kpi_weight: 1.0,
            deduplicate: true,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.leaf_size == 0 {
            return Err(IndexError::Config("leaf_size must be at least 1".into()));
        }
        if !(self.kpi_weight.is_finite() && self.kpi_weight >= 0.0) {
            return Err(IndexError::Config("kpi_weight must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub record: &'a SuffixRecord,
    /// Position of the record in [`CandidateIndex::records`].
    pub position: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    config: IndexConfig,
    vocabulary: ActivityVocabulary,
    vectorizer: SuffixVectorizer,
    records: Vec<SuffixRecord>,
    tree: BallTree,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    vocabulary: ActivityVocabulary,
    vocabulary_fingerprint: String,
    config: IndexConfig,
    vectorizer: SuffixVectorizer,
    records: Vec<SuffixRecord>,
    tree: BallTree,
}

impl CandidateIndex {
    /// Indexes all suffixes of a terminated log.
    pub fn build(log: &EventLog, config: IndexConfig) -> Result<Self, IndexError> {
        Self::from_records(suffix_records(log)?, log.vocabulary().clone(), config)
    }

    /// The KPI scaling is fitted on the records before deduplication.
    pub fn from_records(
        records: Vec<SuffixRecord>,
        vocabulary: ActivityVocabulary,
        config: IndexConfig,
    ) -> Result<Self, IndexError> {
        let scaling = KpiNormalization::fit(records.iter().flat_map(|r| r.kpi_values.iter().copied()));
        Self::with_scaling(records, vocabulary, config, scaling)
    }

    pub fn with_scaling(
        records: Vec<SuffixRecord>,
        vocabulary: ActivityVocabulary,
        config: IndexConfig,
        scaling: KpiNormalization,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        if records.is_empty() {
            return Err(IndexError::Empty);
        }
        if let Some(r) = records
            .iter()
            .find(|r| r.activities.iter().any(|&o| vocabulary.name_of_ordinal(o).is_none()))
        {
            return Err(IndexError::Record(format!(
                "suffix from case {} uses an ordinal outside the vocabulary",
                r.case_id
            )));
        }
        let records = if config.deduplicate { deduplicate(records) } else { records };
        let vectorizer = SuffixVectorizer {
            max_len: records.iter().map(SuffixRecord::len).max().unwrap_or(0).max(1),
            kpi_weight: config.kpi_weight,
            scaling,
        };
        let points = records.iter().map(|r| vectorizer.vectorize_record(r)).collect();
        let tree = BallTree::build(points, config.leaf_size)?;
        Ok(CandidateIndex {
            config,
            vocabulary,
            vectorizer,
            records,
            tree,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &ActivityVocabulary {
        &self.vocabulary
    }

    pub fn vectorizer(&self) -> &SuffixVectorizer {
        &self.vectorizer
    }

    pub fn records(&self) -> &[SuffixRecord] {
        &self.records
    }

    pub fn tree(&self) -> &BallTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn query_vector(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor<'_>>, IndexError> {
        Ok(self
            .tree
            .query(q, k)?
            .into_iter()
            .map(|(position, distance)| Neighbor {
                record: &self.records[position],
                position,
                distance,
            })
            .collect())
    }

    /// The `k` stored suffixes nearest to a (predicted) suffix.
    pub fn query(&self, suffix: &[SuffixStep], k: usize) -> Result<Vec<Neighbor<'_>>, IndexError> {
        let q = self.vectorizer.vectorize_steps(suffix, &self.vocabulary)?;
        self.query_vector(&q, k)
    }

    pub fn to_json(&self) -> String {
        let stored = Stored {
            format: FORMAT.into(),
            version: VERSION,
            vocabulary_fingerprint: self.vocabulary.fingerprint(),
            vocabulary: self.vocabulary.clone(),
            config: self.config,
            vectorizer: self.vectorizer,
            records: self.records.clone(),
            tree: self.tree.clone(),
        };
        serde_json::to_string(&stored).expect("index serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, IndexError> {
        let s: Stored = serde_json::from_str(text)?;
        if s.format != FORMAT || s.version != VERSION {
            return Err(IndexError::Corrupt(format!(
                "unsupported container {} v{}",
                s.format, s.version
            )));
        }
        if s.vocabulary.fingerprint() != s.vocabulary_fingerprint {
            return Err(IndexError::Corrupt("vocabulary fingerprint mismatch".into()));
        }
        s.config.validate()?;
        if s.tree.len() != s.records.len() || s.tree.leaf_size() != s.config.leaf_size {
            return Err(IndexError::Corrupt("tree does not match the records".into()));
        }
        s.tree.validate()?;
        for (r, p) in s.records.iter().zip(s.tree.points()) {
            if s.vectorizer.vectorize_record(r) != *p {
                return Err(IndexError::Corrupt(format!(
                    "stored vector for case {} does not match its suffix",
                    r.case_id
                )));
            }
        }
        Ok(CandidateIndex {
            config: s.config,
            vocabulary: s.vocabulary,
            vectorizer: s.vectorizer,
            records: s.records,
            tree: s.tree,
        })
    }
}
