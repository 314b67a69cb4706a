//! In-memory case sessions with an optional append-only JSONL journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use nextbest::dcr::{ConformanceVerdict, DcrGraph, Marking, MarkingSets};
use nextbest::eventlog::Event;
use nextbest::recommender::{CaseStatus, Recommendation, RunningCase};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    /// Number of events in the case when the recommendation was made.
    pub prefix_len: usize,
    pub k: usize,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone)]
pub struct CaseSession {
    pub case: RunningCase,
    /// Replay of the stored prefix, or the first violation.
    pub marking: Result<Marking, ConformanceVerdict>,
    pub unknown_activities: Vec<String>,
    pub history: Vec<HistoryEntry>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseSnapshot {
    pub schema_version: u32,
    pub case_id: String,
    pub status: CaseStatus,
    pub events: Vec<Event>,
    pub total_kpi: f64,
    pub conformance: ConformanceVerdict,
    pub marking: Option<MarkingSets>,
    pub enabled_activities: Vec<String>,
    pub unknown_activities: Vec<String>,
    pub threshold: f64,
    /// Projection of the latest recommendation, if made for the current prefix.
    pub projected_total_kpi: Option<f64>,
    pub predicted_total_kpi: Option<f64>,
    pub last_recommendation: Option<HistoryEntry>,
    pub recommendation_count: usize,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl CaseSession {
    pub fn new(case_id: &str, graph: &DcrGraph, now: DateTime<Utc>) -> Self {
        CaseSession {
            case: RunningCase::new(case_id),
            marking: Ok(graph.initial_marking()),
            unknown_activities: Vec::new(),
            history: Vec::new(),
            created_at: now,
            updated_at: now,
        }
    }

    pub fn replay(&mut self, graph: &DcrGraph) {
        self.marking = graph.replay(&self.case.activities());
    }

    pub fn snapshot(&self, graph: &DcrGraph, threshold: f64) -> CaseSnapshot {
        let (conformance, marking, enabled) = match &self.marking {
            Ok(m) => (
                ConformanceVerdict::conformant(),
                Some(graph.marking_sets(m)),
                graph.enabled_activities(m).into_iter().map(str::to_owned).collect(),
            ),
            Err(v) => (v.clone(), None, Vec::new()),
        };
        let current = self.history.last().filter(|h| h.prefix_len == self.case.len());
        CaseSnapshot {
            schema_version: SCHEMA_VERSION,
            case_id: self.case.case_id().to_owned(),
            status: self.case.status(),
            events: self.case.events().to_vec(),
            total_kpi: self.case.total_kpi(),
            conformance,
            marking,
            enabled_activities: enabled,
            unknown_activities: self.unknown_activities.clone(),
            threshold,
            projected_total_kpi: current.map(|h| h.recommendation.projected_total_kpi),
            predicted_total_kpi: current.map(|h| h.recommendation.predicted_total_kpi),
            last_recommendation: self.history.last().cloned(),
            recommendation_count: self.history.len(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum JournalEntry {
    Create {
        case_id: String,
        at: DateTime<Utc>,
    },
    Append {
        case_id: String,
        activity: String,
        kpi: f64,
        timestamp: Option<DateTime<Utc>>,
        at: DateTime<Utc>,
    },
}

pub struct Journal {
    path: PathBuf,
    file: std::sync::Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Journal {
            path: path.to_owned(),
            file: std::sync::Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, entry: &JournalEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("journal entries serialise");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<JournalEntry>> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(entry) => entries.push(entry),
                // A torn final line after a crash is dropped.
                Err(e) => log::warn!("journal {} line {}: {e}; skipped", path.display(), n + 1),
            }
        }
        Ok(entries)
    }
}

pub type SharedSession = Arc<Mutex<CaseSession>>;

#[derive(Default)]
pub struct CaseStore {
    cases: RwLock<HashMap<String, SharedSession>>,
}

impl CaseStore {
    /// Rebuilds sessions from journal entries, re-replaying each marking.
    pub fn restore(entries: Vec<JournalEntry>, graph: &DcrGraph, vocabulary_has: impl Fn(&str) -> bool) -> Self {
        let mut cases: HashMap<String, CaseSession> = HashMap::new();
        for entry in entries {
            match entry {
                JournalEntry::Create { case_id, at } => {
                    cases.entry(case_id.clone()).or_insert_with(|| CaseSession::new(&case_id, graph, at));
                }
                JournalEntry::Append {
                    case_id,
                    activity,
                    kpi,
                    timestamp,
                    at,
                } => {
                    let Some(session) = cases.get_mut(&case_id) else {
                        log::warn!("journal appends to unknown case {case_id}; skipped");
                        continue;
                    };
                    if let Err(e) = session.case.push(&activity, kpi, timestamp) {
                        log::warn!("journal append to {case_id} rejected: {e}");
                        continue;
                    }
                    if !vocabulary_has(&activity) {
                        session.unknown_activities.push(activity);
                    }
                    session.updated_at = at;
                }
            }
        }
        let cases = cases
            .into_iter()
            .map(|(id, mut s)| {
                s.replay(graph);
                (id, Arc::new(Mutex::new(s)))
            })
            .collect();
        CaseStore {
            cases: RwLock::new(cases),
        }
    }

    pub async fn get(&self, case_id: &str) -> Option<SharedSession> {
        self.cases.read().await.get(case_id).cloned()
    }

    /// Inserts a new session unless the id is taken.
    pub async fn insert(&self, session: CaseSession) -> Result<SharedSession, SharedSession> {
        let mut cases = self.cases.write().await;
        let id = session.case.case_id().to_owned();
        if let Some(existing) = cases.get(&id) {
            return Err(existing.clone());
        }
        let shared = Arc::new(Mutex::new(session));
        cases.insert(id, shared.clone());
        Ok(shared)
    }

    pub async fn len(&self) -> usize {
        self.cases.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }
}
