//! Held-out comparison of recommended completions against plain suffix
//! prediction: in-time rates and edit distances per prefix size.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::candidate_index::CandidateIndex;
use crate::dcr::DcrGraph;
use crate::eventlog::{hex_string, prefix, suffix, EventLog, EventLogError, Trace, END_ACTIVITY};
use crate::predictor::{predict_suffix, MultiTaskModel, PredictorError, SuffixStep};
use crate::recommender::{
    roll_out, DecisionPath, RecommenderError, RollOutEnd, RunningCase, Threshold, ThresholdPolicy,
};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Recommender(#[from] RecommenderError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    EventLog(#[from] EventLogError),
}

/// Optimal string alignment distance: insertions, deletions, substitutions
/// and transpositions of adjacent symbols, each substring edited at most once.
pub fn damerau_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// Distance divided by the longer length; 0 for two empty sequences.
pub fn normalized_damerau_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        damerau_levenshtein(a, b) as f64 / longest as f64
    }
}

/// Percentage of totals within the threshold, or `None` for no instances.
pub fn in_time_rate(totals: &[f64], threshold: f64, boundary_in_time: bool) -> Option<f64> {
    if totals.is_empty() {
        return None;
    }
    let hits = totals
        .iter()
        .filter(|&&x| if boundary_in_time { x <= threshold } else { x < threshold })
        .count();
    Some(100.0 * hits as f64 / totals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Recommender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub min_prefix: usize,
    pub max_prefix: usize,
    pub policy: ThresholdPolicy,
    pub boundary_in_time: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_values: vec![5, 10, 15],
            min_prefix: 2,
            max_prefix: 12,
            policy: ThresholdPolicy::EveryStep,
            boundary_in_time: true,
            workers: None,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if self.min_prefix < 2 {
            return Err(EvaluationError::Config("prefix sizes start at 2".into()));
        }
        if self.max_prefix < self.min_prefix {
            return Err(EvaluationError::Config(format!(
                "empty prefix range {}..={}",
                self.min_prefix, self.max_prefix
            )));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(EvaluationError::Config("k values must be a non-empty list of positive integers".into()));
        }
        if self.workers == Some(0) {
            return Err(EvaluationError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One completed prefix for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub case_id: String,
    pub prefix_size: usize,
    pub method: Method,
    pub k: Option<usize>,
    /// Predicted or recommended continuation, termination step included.
    pub completion: Vec<SuffixStep>,
    pub total_kpi: f64,
    pub in_time: bool,
    pub dl: usize,
    pub dl_norm: f64,
    pub decision_paths: Vec<DecisionPath>,
    pub end: RollOutEnd,
    /// The tail after an intervention was filled in by plain prediction.
    pub completed_by_prediction: bool,
    /// Prefix plus completion replays on the graph.
    pub replay_conformant: bool,
}

impl InstanceOutcome {
    pub fn all_optimized(&self) -> bool {
        !self.decision_paths.is_empty()
            && self.decision_paths.iter().all(|d| *d == DecisionPath::OptimizedCandidate)
    }

    pub fn never_above_threshold(&self) -> bool {
        self.decision_paths.iter().all(|d| *d == DecisionPath::BelowThresholdPrediction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub k: Option<usize>,
    pub prefix_size: usize,
    pub in_time_rate: Option<f64>,
    pub mean_dl: Option<f64>,
    pub mean_dl_norm: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    method: Method,
    k: Option<usize>,
    prefix_size: usize,
    in_time_rate: Option<f64>,
    mean_dl: Option<f64>,
    n: usize,
}

pub const CSV_COLUMNS: [&str; 6] = ["method", "k", "prefix_size", "in_time_rate", "mean_dl", "n"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl EvalReport {
    pub fn row(&self, method: Method, k: Option<usize>, prefix_size: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k && r.prefix_size == prefix_size)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.serialize(CsvRow {
                method: r.method,
                k: r.k,
                prefix_size: r.prefix_size,
                in_time_rate: r.in_time_rate,
                mean_dl: r.mean_dl,
                n: r.n,
            })
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Parses the CSV form. The normalised distance and metadata are only
    /// carried by the JSON form.
    pub fn from_csv(text: &str) -> Result<Self, EvaluationError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| EvaluationError::Parse(e.to_string()))?;
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(EvaluationError::Parse(format!(
                "expected columns {}, found {}",
                CSV_COLUMNS.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = r
            .deserialize::<CsvRow>()
            .map(|row| {
                let row = row.map_err(|e| EvaluationError::Parse(e.to_string()))?;
                Ok(ReportRow {
                    method: row.method,
                    k: row.k,
                    prefix_size: row.prefix_size,
                    in_time_rate: row.in_time_rate,
                    mean_dl: row.mean_dl,
                    mean_dl_norm: None,
                    n: row.n,
                })
            })
            .collect::<Result<_, EvaluationError>>()?;
        Ok(EvalReport {
            rows,
            metadata: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, EvaluationError> {
        serde_json::from_str(text).map_err(|e| EvaluationError::Parse(e.to_string()))
    }
}

pub fn export_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<(), EvaluationError> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    std::fs::write(path, text).map_err(|source| EvaluationError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// SHA-256 of the JSON form of a value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serialises");
    hex_string(&Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Sorted by method, k, prefix size and then test-log order.
    pub outcomes: Vec<InstanceOutcome>,
}

struct Context<'a> {
    model: &'a MultiTaskModel,
    index: &'a CandidateIndex,
    graph: &'a DcrGraph,
    threshold: &'a Threshold,
    config: &'a EvalConfig,
}

impl Context<'_> {
    #[allow(clippy::too_many_arguments)]
    fn outcome(
        &self,
        trace: &Trace,
        p: usize,
        method: Method,
        k: Option<usize>,
        completion: Vec<SuffixStep>,
        decision_paths: Vec<DecisionPath>,
        end: RollOutEnd,
        completed_by_prediction: bool,
    ) -> Result<InstanceOutcome, EvaluationError> {
        let head = prefix(trace, p)?;
        let tail = suffix(trace, p)?;
        let truth: Vec<&str> = tail.activities().filter(|a| *a != END_ACTIVITY).collect();
        let got: Vec<&str> = completion
            .iter()
            .map(|s| s.activity.as_str())
            .filter(|a| *a != END_ACTIVITY)
            .collect();
        let total = head.total_kpi() + completion.iter().map(|s| s.kpi).sum::<f64>();
        let full: Vec<&str> = head
            .activities()
            .chain(completion.iter().map(|s| s.activity.as_str()))
            .collect();
        let in_time = if self.config.boundary_in_time {
            total <= self.threshold.value
        } else {
            total < self.threshold.value
        };
        Ok(InstanceOutcome {
            case_id: trace.case_id().to_owned(),
            prefix_size: p,
            method,
            k,
            total_kpi: total,
            in_time,
            dl: damerau_levenshtein(&got, &truth),
            dl_norm: normalized_damerau_levenshtein(&got, &truth),
            decision_paths,
            end,
            completed_by_prediction,
            replay_conformant: self.graph.replay(&full).is_ok(),
            completion,
        })
    }

    fn baseline(&self, trace: &Trace, p: usize) -> Result<InstanceOutcome, EvaluationError> {
        let head = prefix(trace, p)?;
        let predicted = predict_suffix(self.model, &head, self.model.max_suffix_len.max(1))?;
        let end = if predicted.truncated {
            RollOutEnd::Truncated
        } else {
            RollOutEnd::Terminated
        };
        self.outcome(trace, p, Method::Baseline, None, predicted.steps, Vec::new(), end, false)
    }

    fn recommender(&self, trace: &Trace, p: usize, k: usize) -> Result<InstanceOutcome, EvaluationError> {
        let head = prefix(trace, p)?;
        let start = RunningCase::from_trace(&head);
        let max_steps = self.model.max_suffix_len.max(1);
        let run = roll_out(
            self.model,
            self.index,
            self.graph,
            &start,
            k,
            self.threshold,
            max_steps,
            self.config.policy,
        )?;
        let mut completion: Vec<SuffixStep> = run.case.events()[p..]
            .iter()
            .map(|e| SuffixStep::new(e.activity.clone(), e.kpi))
            .collect();
        let mut filled = false;
        if run.end == RollOutEnd::Intervention && completion.len() < max_steps {
            let rest = predict_suffix(self.model, &run.case.prefix()?, max_steps - completion.len())?;
            completion.extend(rest.steps);
            filled = true;
        }
        let paths = run.steps.iter().map(|r| r.decision_path).collect();
        self.outcome(trace, p, Method::Recommender, Some(k), completion, paths, run.end, filled)
    }
}

/// Runs the baseline and the recommender for every test trace, prefix size
/// and k. Traces with at most `p` events are skipped for prefix size `p`.
pub fn evaluate(
    test_log: &EventLog,
    model: &MultiTaskModel,
    index: &CandidateIndex,
    graph: &DcrGraph,
    threshold: &Threshold,
    config: &EvalConfig,
) -> Result<Evaluation, EvaluationError> {
    config.validate()?;
    if let Some(t) = test_log.traces().iter().find(|t| t.is_terminated()) {
        return Err(EvaluationError::Config(format!(
            "test trace {} already carries the termination event",
            t.case_id()
        )));
    }
    let ctx = Context {
        model,
        index,
        graph,
        threshold,
        config,
    };
    let jobs: Vec<(usize, usize)> = test_log
        .traces()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (config.min_prefix..=config.max_prefix).filter(move |&p| t.len() > p).map(move |p| (i, p)))
        .collect();
    let run = || -> Result<Vec<Vec<InstanceOutcome>>, EvaluationError> {
        jobs.par_iter()
            .map(|&(i, p)| {
                let trace = &test_log.traces()[i];
                let mut out = vec![ctx.baseline(trace, p)?];
                for &k in &config.k_values {
                    out.push(ctx.recommender(trace, p, k)?);
                }
                Ok(out)
            })
            .collect()
    };
    let per_job = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| EvaluationError::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let mut outcomes: Vec<InstanceOutcome> = per_job.into_iter().flatten().collect();
    // Stable, so ties keep test-log order.
    outcomes.sort_by_key(|o| (o.method, o.k, o.prefix_size));

    let mut report = EvalReport::default();
    if !test_log.is_empty() {
        let series = std::iter::once((Method::Baseline, None))
            .chain(config.k_values.iter().map(|&k| (Method::Recommender, Some(k))));
        for (method, k) in series {
            for p in config.min_prefix..=config.max_prefix {
                let cell: Vec<&InstanceOutcome> = outcomes
                    .iter()
                    .filter(|o| o.method == method && o.k == k && o.prefix_size == p)
                    .collect();
                report.rows.push(aggregate(method, k, p, &cell, threshold.value, config.boundary_in_time));
            }
        }
    }
    report.metadata.insert("threshold".into(), threshold.value.to_string());
    report.metadata.insert("seed".into(), config.seed.to_string());
    report.metadata.insert("eval_config_hash".into(), config_hash(config));
    report.metadata.insert("test_traces".into(), test_log.len().to_string());
    report.metadata.insert("vocabulary_fingerprint".into(), model.vocabulary.fingerprint());
    Ok(Evaluation { report, outcomes })
}

fn aggregate(
    method: Method,
    k: Option<usize>,
    p: usize,
    cell: &[&InstanceOutcome],
    threshold: f64,
    boundary_in_time: bool,
) -> ReportRow {
    let n = cell.len();
    let totals: Vec<f64> = cell.iter().map(|o| o.total_kpi).collect();
    let mean = |f: &dyn Fn(&InstanceOutcome) -> f64| {
        (n > 0).then(|| cell.iter().map(|o| f(o)).sum::<f64>() / n as f64)
    };
    ReportRow {
        method,
        k,
        prefix_size: p,
        in_time_rate: in_time_rate(&totals, threshold, boundary_in_time),
        mean_dl: mean(&|o| o.dl as f64),
        mean_dl_norm: mean(&|o| o.dl_norm),
        n,
    }
}
