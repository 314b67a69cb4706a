use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use nextbest::artifacts::{build_artifacts, ArtifactError, Artifacts, SplitSpec, TrainingPlan};
use nextbest::dcr::DcrGraph;
use nextbest::evaluation::{config_hash, evaluate as run_evaluation, export_report, EvalReport, Method};
use nextbest::eventlog::{parse_log, split_log, EventLog, KpiMode};
use nextbest::recommender::{recommend_next, Recommendation, RunningCase};
use nextbest_service::{bind, serve as serve_api, shutdown_signal, Engine, EngineError, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::config::{LogConfig, RunConfig};
use crate::CliError;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn artifact_error(e: ArtifactError) -> CliError {
    CliError::Artifact(e.to_string())
}

fn read_log(log: &LogConfig, path: &Path) -> Result<EventLog, CliError> {
    let mut schema = log.columns.clone();
    if log.kpi_mode == KpiMode::InterEventDuration {
        schema.kpi = None;
    } else if schema.kpi.is_none() {
        log::warn!("no KPI column configured; every event gets KPI 0");
    }
    let parsed = parse_log(path, &schema).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(parsed.derive_kpi(log.kpi_mode))
}

fn load_graph(config: &RunConfig) -> Result<DcrGraph, CliError> {
    let path = config.require_graph()?;
    DcrGraph::load(path).map_err(|e| CliError::Data(format!("graph {}: {e}", path.display())))
}

fn load_artifacts(config: &RunConfig) -> Result<Artifacts, CliError> {
    let art = Artifacts::load(&config.artifacts).map_err(artifact_error)?;
    if art.stats.config_hash != config.training_hash() {
        log::warn!(
            "artifacts in {} were trained with a different configuration ({})",
            config.artifacts.display(),
            art.stats.config_hash
        );
    }
    Ok(art)
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let log_config = config.require_log()?;
    let log = read_log(log_config, &log_config.path)?;
    let (train_log, split) = match config.split_seed() {
        Some((fraction, seed)) => {
            let parts = split_log(&log, fraction, seed).map_err(data)?;
            (
                parts.train,
                Some(SplitSpec {
                    train_fraction: fraction,
                    seed,
                }),
            )
        }
        None => (log, None),
    };
    let plan = TrainingPlan {
        predictor: config.predictor.clone(),
        index: config.index,
        threshold: config.expert_threshold(),
        kpi_mode: log_config.kpi_mode,
        split,
        seed: config.seed,
        config_hash: config.training_hash(),
    };
    let art = build_artifacts(&train_log, &plan).map_err(data)?;
    let files = art.save(&config.artifacts).map_err(artifact_error)?;

    let summary = &art.stats.summary;
    println!("trained on {} traces", art.stats.train_traces);
    if let Some(last) = summary.epochs.last() {
        println!(
            "epochs: {} (best {}), final training loss {:.4}",
            summary.epochs.len(),
            summary.best_epoch,
            last.train_loss
        );
    }
    println!("indexed suffixes: {}", art.stats.index_records);
    println!("threshold: {} ({:?})", art.threshold().value, art.threshold().origin);
    println!("config hash: {}", art.stats.config_hash);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn test_log(config: &RunConfig, art: &Artifacts) -> Result<EventLog, CliError> {
    let vocab = art.vocabulary();
    if let Some(path) = &config.evaluation.test_log {
        crate::config::require_file(path, "evaluation.test_log")?;
        let log_config = config.log.clone().unwrap_or_else(|| LogConfig {
            path: path.clone(),
            kpi_mode: art.stats.kpi_mode,
            columns: Default::default(),
        });
        let parsed = read_log(&log_config, path)?;
        let total = parsed.len();
        let known: Vec<_> = parsed
            .into_traces()
            .into_iter()
            .filter(|t| t.activities().all(|a| vocab.contains(a)))
            .collect();
        if known.len() < total {
            log::warn!("dropped {} test trace(s) with activities unseen in training", total - known.len());
        }
        return EventLog::with_vocabulary(known, vocab.clone()).map_err(data);
    }
    let (fraction, seed) = config.split_seed().ok_or_else(|| {
        CliError::Data("nothing to evaluate: set evaluation.test_log or a [split] section".into())
    })?;
    let log_config = config.require_log()?;
    let parts = split_log(&read_log(log_config, &log_config.path)?, fraction, seed).map_err(data)?;
    if parts.train.vocabulary().fingerprint() != vocab.fingerprint() {
        return Err(CliError::Artifact(
            "the training split of the configured log does not match the artifacts; retrain".into(),
        ));
    }
    Ok(parts.test)
}

fn pooled(report: &EvalReport, method: Method, k: Option<usize>) -> Option<(f64, usize)> {
    let rows: Vec<_> = report.rows.iter().filter(|r| r.method == method && r.k == k && r.n > 0).collect();
    let n: usize = rows.iter().map(|r| r.n).sum();
    let in_time: f64 = rows.iter().filter_map(|r| r.in_time_rate.map(|x| x * r.n as f64)).sum();
    (n > 0).then(|| (in_time / n as f64, n))
}

pub fn evaluate(config: &RunConfig) -> Result<(), CliError> {
    let art = load_artifacts(config)?;
    let graph = load_graph(config)?;
    let test = test_log(config, &art)?;
    let eval_config = config.eval_config();
    let mut eval = run_evaluation(&test, &art.model, &art.index, &graph, &art.threshold(), &eval_config).map_err(data)?;
    let report = &mut eval.report;
    report.metadata.insert("run_config_hash".into(), config_hash(config));
    report.metadata.insert("training_config_hash".into(), art.stats.config_hash.clone());
    let path = config.report_path();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    export_report(report, &path, config.evaluation.format.into()).map_err(data)?;

    println!("test traces: {}, threshold {}", test.len(), art.threshold().value);
    let series = std::iter::once((Method::Baseline, None))
        .chain(eval_config.k_values.iter().map(|&k| (Method::Recommender, Some(k))));
    for (method, k) in series {
        let label = match k {
            Some(k) => format!("{method:?} k={k}"),
            None => format!("{method:?}"),
        };
        match pooled(report, method, k) {
            Some((rate, n)) => println!("{label}: {rate:.1}% in time over {n} instances"),
            None => println!("{label}: no instances"),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputEvent {
    activity: String,
    kpi: Option<f64>,
    timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RecommendInput {
    Events(Vec<InputEvent>),
    Case {
        #[serde(default)]
        case_id: Option<String>,
        events: Vec<InputEvent>,
    },
}

#[derive(Serialize)]
struct RecommendOutput<'a> {
    schema_version: u32,
    case_id: &'a str,
    k: usize,
    prefix_len: usize,
    threshold: f64,
    #[serde(flatten)]
    recommendation: &'a Recommendation,
}

fn running_case(input: RecommendInput, kpi_mode: KpiMode) -> Result<RunningCase, CliError> {
    let (case_id, events) = match input {
        RecommendInput::Events(events) => (None, events),
        RecommendInput::Case { case_id, events } => (case_id, events),
    };
    let mut case = RunningCase::new(case_id.unwrap_or_else(|| "stdin".into()));
    let mut previous: Option<DateTime<Utc>> = None;
    for e in events {
        let kpi = match (e.kpi, kpi_mode, e.timestamp, previous) {
            (Some(k), ..) => k,
            (None, KpiMode::InterEventDuration, Some(now), Some(before)) => {
                ((now - before).num_milliseconds() as f64 / 1000.0).max(0.0)
            }
            _ => 0.0,
        };
        previous = e.timestamp.or(previous);
        case.push(&e.activity, kpi, e.timestamp).map_err(data)?;
    }
    Ok(case)
}

pub fn recommend(config: &RunConfig, mut input: impl Read) -> Result<(), CliError> {
    let art = load_artifacts(config)?;
    let graph = load_graph(config)?;
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| CliError::Data(format!("cannot read case events from stdin: {e}")))?;
    let parsed: RecommendInput = serde_json::from_str(&text).map_err(|e| {
        CliError::Data(format!(
            "stdin must hold a JSON list of events {{\"activity\", \"kpi\"?, \"timestamp\"?}} or {{\"case_id\", \"events\"}}: {e}"
        ))
    })?;
    let case = running_case(parsed, art.stats.kpi_mode)?;
    let rec = recommend_next(&art.model, &art.index, &graph, &case, config.k, &art.threshold()).map_err(data)?;
    let out = RecommendOutput {
        schema_version: SCHEMA_VERSION,
        case_id: case.case_id(),
        k: config.k,
        prefix_len: case.len(),
        threshold: art.threshold().value,
        recommendation: &rec,
    };
    let text = serde_json::to_string_pretty(&out).map_err(data)?;
    println!("{text}");
    Ok(())
}

pub fn serve(config: &RunConfig) -> Result<(), CliError> {
    let graph = config.require_graph()?;
    let engine = Engine::load(&config.artifacts, graph).map_err(|e| match e {
        EngineError::Graph(e) => CliError::Data(format!("graph {}: {e}", graph.display())),
        other => CliError::Artifact(other.to_string()),
    })?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("cannot start the runtime: {e}")))?;
    runtime.block_on(async {
        let listener = bind(&config.service.bind).await.map_err(data)?;
        if let Ok(addr) = listener.local_addr() {
            println!("listening on http://{addr}");
            let _ = std::io::stdout().flush();
        }
        serve_api(listener, Arc::new(engine), config.service.clone(), shutdown_signal())
            .await
            .map_err(data)
    })
}
