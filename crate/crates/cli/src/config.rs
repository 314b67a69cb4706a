//! The run configuration file (TOML).
//!
//! ```toml
//! seed = 42
//! artifacts = "artifacts"
//! graph = "assets/helpdesk.dcr.json"
//! k = 10
//!
//! [log]
//! path = "data/helpdesk.csv"
//! kpi_mode = "inter-event-duration"
//! [log.columns]
//! case_id = "Case ID"
//! activity = "Activity"
//! timestamp = "Complete Timestamp"
//!
//! [split]
//! train_fraction = 0.6667
//!
//! [predictor]
//! hidden_size = 100
//!
//! [threshold]
//! mode = "derived"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use nextbest::candidate_index::IndexConfig;
use nextbest::evaluation::{EvalConfig, ReportFormat};
use nextbest::eventlog::{CsvSchema, KpiMode};
use nextbest::predictor::TrainConfig;
use nextbest::recommender::ThresholdPolicy;
use nextbest_service::ServiceConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory the artifacts are written to and read from.
    pub artifacts: PathBuf,
    pub graph: Option<PathBuf>,
    pub k: usize,
    pub log: Option<LogConfig>,
    pub split: Option<SplitConfig>,
    pub predictor: TrainConfig,
    pub index: IndexConfig,
    pub threshold: ThresholdConfig,
    pub evaluation: EvaluationConfig,
    pub service: ServiceConfig,
    /// Evaluation worker threads.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            artifacts: PathBuf::from("artifacts"),
            graph: None,
            k: 10,
            log: None,
            split: None,
            predictor: TrainConfig::default(),
            index: IndexConfig::default(),
            threshold: ThresholdConfig::default(),
            evaluation: EvaluationConfig::default(),
            service: ServiceConfig::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub kpi_mode: KpiMode,
    #[serde(default)]
    pub columns: CsvSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Defaults to the top-level seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Mean total KPI of the training traces.
    #[default]
    Derived,
    Expert,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    #[default]
    Csv,
    Json,
}

impl From<ReportKind> for ReportFormat {
    fn from(kind: ReportKind) -> Self {
        match kind {
            ReportKind::Csv => ReportFormat::Csv,
            ReportKind::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Separate test log in the same schema; otherwise the held-out split.
    pub test_log: Option<PathBuf>,
    /// Defaults to `report.csv` or `report.json` inside the artifact directory.
    pub report: Option<PathBuf>,
    pub format: ReportKind,
    pub k_values: Vec<usize>,
    pub min_prefix: usize,
    pub max_prefix: usize,
    pub policy: ThresholdPolicy,
    pub boundary_in_time: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let d = EvalConfig::default();
        EvaluationConfig {
            test_log: None,
            report: None,
            format: ReportKind::Csv,
            k_values: d.k_values,
            min_prefix: d.min_prefix,
            max_prefix: d.max_prefix,
            policy: d.policy,
            boundary_in_time: d.boundary_in_time,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.artifacts);
        if let Some(g) = &mut self.graph {
            fix(g);
        }
        if let Some(log) = &mut self.log {
            fix(&mut log.path);
        }
        if let Some(t) = &mut self.evaluation.test_log {
            fix(t);
        }
        if let Some(r) = &mut self.evaluation.report {
            fix(r);
        }
        if let Some(j) = &mut self.service.journal {
            fix(j);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.k = k;
            self.evaluation.k_values = vec![k];
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(out) = &o.out {
            self.artifacts = out.clone();
        }
        self.service.default_k = self.k;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Data(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(split) = self.split {
            if !(split.train_fraction > 0.0 && split.train_fraction < 1.0) {
                return bad(format!(
                    "split.train_fraction = {} must lie strictly between 0 and 1",
                    split.train_fraction
                ));
            }
        }
        match (self.threshold.mode, self.threshold.value) {
            (ThresholdMode::Expert, None) => return bad("threshold.mode = \"expert\" needs threshold.value".into()),
            (ThresholdMode::Expert, Some(v)) if !(v.is_finite() && v >= 0.0) => {
                return bad(format!("threshold.value = {v} must be a non-negative number"))
            }
            (ThresholdMode::Derived, Some(_)) => {
                return bad("threshold.value is only used with threshold.mode = \"expert\"".into())
            }
            _ => {}
        }
        if let Some(log) = &self.log {
            if log.kpi_mode == KpiMode::InterEventDuration && log.columns.kpi.is_some() {
                log::warn!("log.columns.kpi is ignored with kpi_mode = \"inter-event-duration\"");
            }
        }
        self.predictor
            .validate()
            .map_err(|e| CliError::Data(format!("predictor: {e}")))?;
        self.eval_config()
            .validate()
            .map_err(|e| CliError::Data(format!("evaluation: {e}")))?;
        Ok(())
    }

    pub fn expert_threshold(&self) -> Option<f64> {
        match self.threshold.mode {
            ThresholdMode::Expert => self.threshold.value,
            ThresholdMode::Derived => None,
        }
    }

    pub fn split_seed(&self) -> Option<(f64, u64)> {
        self.split.map(|s| (s.train_fraction, s.seed.unwrap_or(self.seed)))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k_values: self.evaluation.k_values.clone(),
            min_prefix: self.evaluation.min_prefix,
            max_prefix: self.evaluation.max_prefix,
            policy: self.evaluation.policy,
            boundary_in_time: self.evaluation.boundary_in_time,
            workers: self.workers,
            seed: self.seed,
        }
    }

    /// The artifact-relevant part of the config: what `train` consumed.
    pub fn training_hash(&self) -> String {
        #[derive(Serialize)]
        struct Training<'a> {
            seed: u64,
            log: Option<(&'a CsvSchema, KpiMode)>,
            split: Option<(f64, u64)>,
            predictor: &'a TrainConfig,
            index: &'a IndexConfig,
            threshold: &'a ThresholdConfig,
        }
        nextbest::evaluation::config_hash(&Training {
            seed: self.seed,
            log: self.log.as_ref().map(|l| (&l.columns, l.kpi_mode)),
            split: self.split_seed(),
            predictor: &self.predictor,
            index: &self.index,
            threshold: &self.threshold,
        })
    }

    pub fn report_path(&self) -> PathBuf {
        self.evaluation.report.clone().unwrap_or_else(|| {
            self.artifacts.join(match self.evaluation.format {
                ReportKind::Csv => "report.csv",
                ReportKind::Json => "report.json",
            })
        })
    }

    pub fn require_log(&self) -> Result<&LogConfig, CliError> {
        let log = self
            .log
            .as_ref()
            .ok_or_else(|| CliError::Data("config has no [log] section with the event log path".into()))?;
        require_file(&log.path, "log.path")?;
        Ok(log)
    }

    pub fn require_graph(&self) -> Result<&Path, CliError> {
        let graph = self
            .graph
            .as_deref()
            .ok_or_else(|| CliError::Data("config has no `graph` entry with the DCR graph path".into()))?;
        require_file(graph, "graph")?;
        Ok(graph)
    }
}

pub fn require_file(path: &Path, key: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{key}: no such file {}", path.display())))
    }
}
