use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nextbest::artifacts::{Artifacts, ArtifactError, INDEX_FILE, MODEL_FILE, STATS_FILE, VOCABULARY_FILE};
use nextbest::dcr::{DcrError, DcrGraph};
use nextbest::eventlog::ActivityVocabulary;
use nextbest::recommender::{
    recommend_next, CandidateSource, Recommendation, RecommenderError, RunningCase, SuffixPredictor, Threshold,
};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("process graph: {0}")]
    Graph(#[from] DcrError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Predictor, candidate source, graph and threshold. Built once and shared
/// read-only by every request.
pub struct Engine {
    predictor: Arc<dyn SuffixPredictor + Send + Sync>,
    candidates: Arc<dyn CandidateSource + Send + Sync>,
    graph: DcrGraph,
    threshold: Threshold,
    hashes: BTreeMap<String, String>,
}

impl Engine {
    pub fn new(
        predictor: Arc<dyn SuffixPredictor + Send + Sync>,
        candidates: Arc<dyn CandidateSource + Send + Sync>,
        graph: DcrGraph,
        threshold: Threshold,
    ) -> Self {
        let mut hashes = BTreeMap::new();
        hashes.insert("graph".to_owned(), sha256_hex(graph.to_json().as_bytes()));
        Engine {
            predictor,
            candidates,
            graph,
            threshold,
            hashes,
        }
    }

    pub fn from_artifacts(artifacts: Artifacts, graph: DcrGraph) -> Self {
        let Artifacts { model, index, stats } = artifacts;
        let model_hash = sha256_hex(model.to_json().as_bytes());
        let index_hash = sha256_hex(index.to_json().as_bytes());
        Engine::new(Arc::new(model), Arc::new(index), graph, stats.threshold)
            .with_hash(MODEL_FILE, model_hash)
            .with_hash(INDEX_FILE, index_hash)
    }

    /// Loads an artifact directory and a graph file, recording the SHA-256
    /// of every file as read from disk.
    pub fn load(artifact_dir: &Path, graph_path: &Path) -> Result<Self, EngineError> {
        let artifacts = Artifacts::load(artifact_dir)?;
        let graph = DcrGraph::load(graph_path)?;
        let mut engine = Engine::from_artifacts(artifacts, graph);
        for name in [MODEL_FILE, INDEX_FILE, VOCABULARY_FILE, STATS_FILE] {
            let path = artifact_dir.join(name);
            let bytes = std::fs::read(&path).map_err(|source| EngineError::Io {
                path: path.display().to_string(),
                source,
            })?;
            engine.hashes.insert(name.to_owned(), sha256_hex(&bytes));
        }
        let bytes = std::fs::read(graph_path).map_err(|source| EngineError::Io {
            path: graph_path.display().to_string(),
            source,
        })?;
        engine.hashes.insert("graph".to_owned(), sha256_hex(&bytes));
        Ok(engine)
    }

    pub fn with_hash(mut self, name: &str, hash: String) -> Self {
        self.hashes.insert(name.to_owned(), hash);
        self
    }

    pub fn vocabulary(&self) -> &ActivityVocabulary {
        self.predictor.vocabulary()
    }

    pub fn graph(&self) -> &DcrGraph {
        &self.graph
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    pub fn recommend(&self, case: &RunningCase, k: usize) -> Result<Recommendation, RecommenderError> {
        recommend_next(&*self.predictor, &*self.candidates, &self.graph, case, k, &self.threshold)
    }
}
