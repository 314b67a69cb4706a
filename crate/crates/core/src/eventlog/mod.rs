//! Event logs: events grouped into traces, termination events, prefix and
//! suffix cropping, activity codecs, train/test splitting and the prefix
//! samples the predictor trains on.

mod parse;
mod vocab;

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_log, parse_reader, CsvSchema};
pub use vocab::ActivityVocabulary;
pub(crate) use vocab::hex_string;

/// Activity name of the termination event appended to every trace.
pub const END_ACTIVITY: &str = "End";

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("cannot read event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Parse { row: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("trace {case_id:?}: {message}")]
    InvalidTrace { case_id: String, message: String },
    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),
    #[error("trace {0:?} already ends with a termination event")]
    AlreadyTerminated(String),
    #[error("trace {0:?} has no termination event")]
    NotTerminated(String),
    #[error("trace {0:?} is empty")]
    EmptyTrace(String),
    #[error("k = {k} is outside 1..{len}")]
    OutOfBounds { k: usize, len: usize },
    #[error("activity {0:?} is not in the vocabulary")]
    UnknownActivity(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("cannot split log: {0}")]
    Split(String),
}

/// A single executed activity of a case.
///
/// `timestamp` is `None` only for events that have been recommended but not
/// yet observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub case_id: String,
    pub activity: String,
    pub timestamp: Option<DateTime<Utc>>,
    pub kpi: f64,
}

impl Event {
    pub fn new(
        case_id: impl Into<String>,
        activity: impl Into<String>,
        timestamp: Option<DateTime<Utc>>,
        kpi: f64,
    ) -> Self {
        Event {
            case_id: case_id.into(),
            activity: activity.into(),
            timestamp,
            kpi,
        }
    }

    pub fn is_end(&self) -> bool {
        self.activity == END_ACTIVITY
    }
}

/// Events of one case ordered by timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    case_id: String,
    events: Vec<Event>,
}

impl Trace {
    pub fn new(case_id: impl Into<String>, events: Vec<Event>) -> Result<Self, EventLogError> {
        let case_id = case_id.into();
        let invalid = |message: String| EventLogError::InvalidTrace {
            case_id: case_id.clone(),
            message,
        };
        let mut last_ts: Option<DateTime<Utc>> = None;
        for (i, e) in events.iter().enumerate() {
            if e.case_id != case_id {
                return Err(invalid(format!("event {i} belongs to case {:?}", e.case_id)));
            }
            if e.activity.is_empty() {
                return Err(invalid(format!("event {i} has an empty activity")));
            }
            if !e.kpi.is_finite() || e.kpi < 0.0 {
                return Err(invalid(format!("event {i} has KPI value {}", e.kpi)));
            }
            if e.is_end() && i + 1 != events.len() {
                return Err(invalid(format!("termination event at position {i} is not last")));
            }
            if let Some(ts) = e.timestamp {
                if last_ts.is_some_and(|prev| ts < prev) {
                    return Err(invalid(format!("event {i} is earlier than its predecessor")));
                }
                last_ts = Some(ts);
            }
        }
        Ok(Trace { case_id, events })
    }

    /// Builds a trace from events already known to satisfy the invariants.
    pub(crate) fn from_valid(case_id: String, events: Vec<Event>) -> Self {
        Trace { case_id, events }
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn activities(&self) -> impl Iterator<Item = &str> + '_ {
        self.events.iter().map(|e| e.activity.as_str())
    }

    pub fn is_terminated(&self) -> bool {
        self.events.last().is_some_and(Event::is_end)
    }

    pub fn total_kpi(&self) -> f64 {
        self.events.iter().map(|e| e.kpi).sum()
    }

    /// The trace without its termination event, if it has one.
    pub fn without_termination(&self) -> Trace {
        let mut events = self.events.clone();
        if self.is_terminated() {
            events.pop();
        }
        Trace::from_valid(self.case_id.clone(), events)
    }
}

/// A set of traces with unique case ids and the vocabulary over them.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    traces: Vec<Trace>,
    vocabulary: ActivityVocabulary,
}

impl EventLog {
    /// Builds the vocabulary from the traces in order of first appearance.
    pub fn new(traces: Vec<Trace>) -> Result<Self, EventLogError> {
        let vocabulary =
            ActivityVocabulary::from_activities(traces.iter().flat_map(|t| t.activities()));
        Self::with_vocabulary(traces, vocabulary)
    }

    /// Every activity of every trace must be in `vocabulary`.
    pub fn with_vocabulary(
        traces: Vec<Trace>,
        vocabulary: ActivityVocabulary,
    ) -> Result<Self, EventLogError> {
        let mut seen = HashSet::new();
        for t in &traces {
            if !seen.insert(t.case_id.as_str()) {
                return Err(EventLogError::DuplicateCase(t.case_id.clone()));
            }
            for a in t.activities() {
                vocabulary.require(a)?;
            }
        }
        Ok(EventLog { traces, vocabulary })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }

    pub fn vocabulary(&self) -> &ActivityVocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    pub fn max_trace_len(&self) -> usize {
        self.traces.iter().map(Trace::len).max().unwrap_or(0)
    }

    /// Applies `f` to every trace, keeping the vocabulary.
    pub fn map_traces<F>(self, f: F) -> Result<Self, EventLogError>
    where
        F: FnMut(Trace) -> Result<Trace, EventLogError>,
    {
        let traces = self.traces.into_iter().map(f).collect::<Result<_, _>>()?;
        Self::with_vocabulary(traces, self.vocabulary)
    }

    pub fn derive_kpi(self, mode: KpiMode) -> Self {
        let traces = self.traces.iter().map(|t| derive_kpi(t, mode)).collect();
        EventLog {
            traces,
            vocabulary: self.vocabulary,
        }
    }

    pub fn terminated(self) -> Result<Self, EventLogError> {
        self.map_traces(|t| append_termination(&t))
    }
}

/// Where per-event KPI values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KpiMode {
    /// Values read from the KPI column are kept.
    #[default]
    ExplicitColumn,
    /// Each event's KPI is the seconds elapsed since the previous event.
    InterEventDuration,
}

pub fn derive_kpi(trace: &Trace, mode: KpiMode) -> Trace {
    match mode {
        KpiMode::ExplicitColumn => trace.clone(),
        KpiMode::InterEventDuration => {
            let mut events = trace.events.clone();
            let mut prev: Option<DateTime<Utc>> = None;
            for e in &mut events {
                e.kpi = match (prev, e.timestamp) {
                    (Some(p), Some(t)) => (t - p).num_seconds().max(0) as f64,
                    _ => 0.0,
                };
                if e.timestamp.is_some() {
                    prev = e.timestamp;
                }
            }
            Trace::from_valid(trace.case_id.clone(), events)
        }
    }
}

/// Appends the termination event, copying the last timestamp, with KPI 0.
pub fn append_termination(trace: &Trace) -> Result<Trace, EventLogError> {
    let last = trace
        .events
        .last()
        .ok_or_else(|| EventLogError::EmptyTrace(trace.case_id.clone()))?;
    if trace.is_terminated() {
        return Err(EventLogError::AlreadyTerminated(trace.case_id.clone()));
    }
    let end = Event::new(trace.case_id.clone(), END_ACTIVITY, last.timestamp, 0.0);
    let mut events = trace.events.clone();
    events.push(end);
    Ok(Trace::from_valid(trace.case_id.clone(), events))
}

fn check_crop(trace: &Trace, k: usize) -> Result<(), EventLogError> {
    if k == 0 || k >= trace.len() {
        return Err(EventLogError::OutOfBounds { k, len: trace.len() });
    }
    Ok(())
}

/// The first `k` events, `1 <= k < len`.
pub fn prefix(trace: &Trace, k: usize) -> Result<Trace, EventLogError> {
    check_crop(trace, k)?;
    Ok(Trace::from_valid(
        trace.case_id.clone(),
        trace.events[..k].to_vec(),
    ))
}

/// The events after position `k`, `1 <= k < len`.
pub fn suffix(trace: &Trace, k: usize) -> Result<Trace, EventLogError> {
    check_crop(trace, k)?;
    Ok(Trace::from_valid(
        trace.case_id.clone(),
        trace.events[k..].to_vec(),
    ))
}

pub fn onehot_row(index: usize, vocab: &ActivityVocabulary) -> Vec<f64> {
    let mut row = vec![0.0; vocab.len()];
    row[vocab.onehot_column(index)] = 1.0;
    row
}

pub fn onehot_encode(trace: &Trace, vocab: &ActivityVocabulary) -> Result<Vec<Vec<f64>>, EventLogError> {
    trace
        .activities()
        .map(|a| vocab.require(a).map(|i| onehot_row(i, vocab)))
        .collect()
}

pub fn onehot_decode(
    rows: &[Vec<f64>],
    vocab: &ActivityVocabulary,
) -> Result<Vec<String>, EventLogError> {
    rows.iter()
        .map(|row| {
            let hot: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(c, _)| c)
                .collect();
            match (hot.as_slice(), row.len() == vocab.len()) {
                ([col], true) => Ok(vocab.names()[vocab.index_of_onehot_column(*col)].clone()),
                _ => Err(EventLogError::Vocabulary(format!("not a one-hot row: {row:?}"))),
            }
        })
        .collect()
}

/// 1-based ordinals; 0 is reserved for padding.
pub fn ordinal_encode(trace: &Trace, vocab: &ActivityVocabulary) -> Result<Vec<u32>, EventLogError> {
    trace
        .activities()
        .map(|a| {
            vocab
                .ordinal_of(a)
                .ok_or_else(|| EventLogError::UnknownActivity(a.to_owned()))
        })
        .collect()
}

pub fn ordinal_decode(ordinals: &[u32], vocab: &ActivityVocabulary) -> Result<Vec<String>, EventLogError> {
    ordinals
        .iter()
        .map(|&o| {
            vocab
                .name_of_ordinal(o)
                .map(str::to_owned)
                .ok_or_else(|| EventLogError::Vocabulary(format!("no activity with ordinal {o}")))
        })
        .collect()
}

/// Training and test partitions of a log.
#[derive(Debug, Clone)]
pub struct LogSplit {
    pub train: EventLog,
    /// Shares the training vocabulary.
    pub test: EventLog,
    /// Test traces dropped because they contain activities never seen in training.
    pub dropped_unseen: usize,
}

/// Random case-level split. The vocabulary is rebuilt from the training
/// partition; test traces with unseen activities are dropped and counted.
pub fn split_log(log: &EventLog, train_fraction: f64, seed: u64) -> Result<LogSplit, EventLogError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EventLogError::Split(format!(
            "train fraction {train_fraction} is not in (0, 1)"
        )));
    }
    let n = log.len();
    if n < 2 {
        return Err(EventLogError::Split(format!("{n} trace(s), need at least 2")));
    }
    let n_train = ((n as f64 * train_fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let train_traces: Vec<Trace> = train_idx.iter().map(|&i| log.traces[i].clone()).collect();
    let train = EventLog::new(train_traces)?;
    let vocab = train.vocabulary.clone();
    let mut dropped_unseen = 0;
    let test_traces: Vec<Trace> = test_idx
        .iter()
        .map(|&i| &log.traces[i])
        .filter(|t| {
            let known = t.activities().all(|a| vocab.contains(a));
            if !known {
                dropped_unseen += 1;
            }
            known
        })
        .cloned()
        .collect();
    if dropped_unseen > 0 {
        log::warn!("dropped {dropped_unseen} test trace(s) with activities unseen in training");
    }
    let test = EventLog::with_vocabulary(test_traces, vocab)?;
    Ok(LogSplit {
        train,
        test,
        dropped_unseen,
    })
}

/// Keeps traces of at most `max_len` events, then a random `fraction` of them.
pub fn subsample_log(
    log: &EventLog,
    fraction: f64,
    max_len: Option<usize>,
    seed: u64,
) -> Result<EventLog, EventLogError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EventLogError::Split(format!(
            "sample fraction {fraction} is not in (0, 1]"
        )));
    }
    let mut keep: Vec<usize> = (0..log.len())
        .filter(|&i| max_len.is_none_or(|m| log.traces[i].len() <= m))
        .collect();
    if fraction < 1.0 {
        keep.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        keep.truncate((keep.len() as f64 * fraction + 1e-9).floor() as usize);
        keep.sort_unstable();
    }
    EventLog::new(keep.into_iter().map(|i| log.traces[i].clone()).collect())
}

/// One training example for the predictor: a one-hot prefix and the next
/// event's activity and KPI value.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSample {
    pub prefix: Vec<Vec<f64>>,
    pub label_activity: Vec<f64>,
    pub label_kpi: f64,
}

impl PrefixSample {
    /// Vocabulary index of the label activity.
    pub fn label_index(&self) -> usize {
        let col = self
            .label_activity
            .iter()
            .position(|&v| v == 1.0)
            .expect("label is one-hot");
        self.label_activity.len() - 1 - col
    }

    /// Vocabulary indices of the prefix rows.
    pub fn prefix_indices(&self) -> Vec<usize> {
        self.prefix
            .iter()
            .map(|row| {
                let col = row.iter().position(|&v| v == 1.0).expect("row is one-hot");
                row.len() - 1 - col
            })
            .collect()
    }
}

/// One sample per prefix length `1..n` of every (terminated) trace.
pub fn build_prediction_samples(log: &EventLog) -> Result<Vec<PrefixSample>, EventLogError> {
    let vocab = &log.vocabulary;
    let mut samples = Vec::new();
    for trace in &log.traces {
        if !trace.is_terminated() {
            return Err(EventLogError::NotTerminated(trace.case_id.clone()));
        }
        let rows = onehot_encode(trace, vocab)?;
        for k in 1..trace.len() {
            samples.push(PrefixSample {
                prefix: rows[..k].to_vec(),
                label_activity: rows[k].clone(),
                label_kpi: trace.events[k].kpi,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use chrono::TimeZone;

    pub fn ts(y: i32, mo: u32, d: u32, h: u32, mi: u32) -> Option<DateTime<Utc>> {
        Some(Utc.with_ymd_and_hms(y, mo, d, h, mi, 0).unwrap())
    }

    /// The four-event loan application instance used throughout the tests.
    pub fn sigma1() -> Trace {
        let e = |a: &str, h, m, kpi| Event::new("1", a, ts(2011, 9, 30, h, m), kpi);
        Trace::new(
            "1",
            vec![
                e("Create Application", 16, 20, 0.0),
                e("Concept", 17, 30, 10.0),
                e("Accepted", 18, 50, 20.0),
                e("Validating", 19, 10, 40.0),
            ],
        )
        .unwrap()
    }

    pub fn simple_trace(case: &str, activities: &[&str]) -> Trace {
        let events = activities
            .iter()
            .map(|a| Event::new(case, *a, None, 1.0))
            .collect();
        Trace::new(case, events).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn termination_copies_timestamp_and_zero_kpi() {
        let t = append_termination(&sigma1()).unwrap();
        assert_eq!(t.len(), 5);
        let last = t.events().last().unwrap();
        assert_eq!(last.case_id, "1");
        assert_eq!(last.activity, "End");
        assert_eq!(last.timestamp, ts(2011, 9, 30, 19, 10));
        assert_eq!(last.kpi, 0.0);
        assert_eq!(&t.events()[..4], sigma1().events());
    }

    #[test]
    fn termination_is_not_idempotent() {
        let t = append_termination(&sigma1()).unwrap();
        assert!(matches!(
            append_termination(&t),
            Err(EventLogError::AlreadyTerminated(_))
        ));
        let empty = Trace::new("x", vec![]).unwrap();
        assert!(matches!(append_termination(&empty), Err(EventLogError::EmptyTrace(_))));
    }

    #[test]
    fn inter_event_duration() {
        let t = derive_kpi(&sigma1(), KpiMode::InterEventDuration);
        let kpis: Vec<f64> = t.events().iter().map(|e| e.kpi).collect();
        assert_eq!(kpis, vec![0.0, 4200.0, 4800.0, 1200.0]);

        let single = prefix(&sigma1(), 1).unwrap();
        let single = derive_kpi(&single, KpiMode::InterEventDuration);
        assert_eq!(single.events()[0].kpi, 0.0);

        let explicit = derive_kpi(&sigma1(), KpiMode::ExplicitColumn);
        let kpis: Vec<f64> = explicit.events().iter().map(|e| e.kpi).collect();
        assert_eq!(kpis, vec![0.0, 10.0, 20.0, 40.0]);
    }

    #[test]
    fn onehot_matches_worked_example() {
        let t = append_termination(&sigma1()).unwrap();
        let log = EventLog::new(vec![t.clone()]).unwrap();
        let rows = onehot_encode(&t, log.vocabulary()).unwrap();
        assert_eq!(rows[0], vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(rows[1], vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(rows[3], vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(rows[4], vec![1.0, 0.0, 0.0, 0.0, 0.0]);

        let hd3 = onehot_encode(&prefix(&t, 3).unwrap(), log.vocabulary()).unwrap();
        assert_eq!(hd3[2], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(hd3.len(), 3);
    }

    #[test]
    fn ordinal_matches_worked_example() {
        let t = append_termination(&sigma1()).unwrap();
        let log = EventLog::new(vec![t.clone()]).unwrap();
        let v = log.vocabulary();
        assert_eq!(ordinal_encode(&t, v).unwrap(), vec![1, 2, 3, 4, 5]);
        let tl3 = suffix(&t, 3).unwrap();
        assert_eq!(ordinal_encode(&tl3, v).unwrap(), vec![4, 5]);
    }

    #[test]
    fn unknown_activity_is_rejected() {
        let v = ActivityVocabulary::from_activities(["A"]);
        let t = simple_trace("c", &["A", "B"]);
        assert!(matches!(onehot_encode(&t, &v), Err(EventLogError::UnknownActivity(a)) if a == "B"));
        assert!(ordinal_encode(&t, &v).is_err());
    }

    #[test]
    fn crop_bounds() {
        let t = sigma1();
        assert!(matches!(prefix(&t, 0), Err(EventLogError::OutOfBounds { .. })));
        assert!(matches!(suffix(&t, 4), Err(EventLogError::OutOfBounds { k: 4, len: 4 })));
        assert_eq!(prefix(&t, 3).unwrap().len(), 3);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let traces: Vec<Trace> = (0..3)
            .map(|i| simple_trace(&i.to_string(), &["A", "B"]))
            .collect();
        let log = EventLog::new(traces).unwrap();
        let s = split_log(&log, 2.0 / 3.0, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (2, 1));
        let again = split_log(&log, 2.0 / 3.0, 7).unwrap();
        assert_eq!(s.train.traces(), again.train.traces());

        let traces: Vec<Trace> = (0..4580)
            .map(|i| simple_trace(&i.to_string(), &["A"]))
            .collect();
        let big = EventLog::new(traces).unwrap();
        let s = split_log(&big, 2.0 / 3.0, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3053, 1527));
    }

    #[test]
    fn split_errors() {
        let log = EventLog::new(vec![simple_trace("a", &["A"])]).unwrap();
        assert!(matches!(split_log(&log, 0.5, 0), Err(EventLogError::Split(_))));
        let log = EventLog::new(vec![simple_trace("a", &["A"]), simple_trace("b", &["A"])]).unwrap();
        assert!(split_log(&log, 1.0, 0).is_err());
        assert!(split_log(&log, 0.0, 0).is_err());
    }

    #[test]
    fn split_drops_test_traces_with_unseen_activities() {
        let mut traces: Vec<Trace> = (0..20)
            .map(|i| simple_trace(&i.to_string(), &["A", "B"]))
            .collect();
        traces.push(simple_trace("odd", &["A", "Z"]));
        let log = EventLog::new(traces).unwrap();
        let mut total_dropped = 0;
        for seed in 0..10 {
            let s = split_log(&log, 0.5, seed).unwrap();
            let in_train = s.train.traces().iter().any(|t| t.case_id() == "odd");
            assert_eq!(s.dropped_unseen, usize::from(!in_train));
            assert_eq!(s.train.len() + s.test.len() + s.dropped_unseen, log.len());
            total_dropped += s.dropped_unseen;
        }
        assert!(total_dropped > 0);
    }

    #[test]
    fn samples_of_worked_example() {
        let log = EventLog::new(vec![sigma1()]).unwrap().terminated().unwrap();
        let samples = build_prediction_samples(&log).unwrap();
        assert_eq!(samples.len(), 4);
        let k3 = &samples[2];
        assert_eq!(k3.prefix.len(), 3);
        assert_eq!(log.vocabulary().name(k3.label_index()), Some("Validating"));
        assert_eq!(k3.label_kpi, 40.0);
        assert_eq!(samples[3].label_index(), log.vocabulary().end_index());
        assert_eq!(samples[3].label_kpi, 0.0);
        assert_eq!(k3.prefix_indices(), vec![0, 1, 2]);
    }

    #[test]
    fn samples_require_termination() {
        let log = EventLog::new(vec![sigma1()]).unwrap();
        assert!(matches!(
            build_prediction_samples(&log),
            Err(EventLogError::NotTerminated(_))
        ));
    }

    #[test]
    fn subsample_respects_length_cap() {
        let traces: Vec<Trace> = (0..100)
            .map(|i| {
                let acts: Vec<&str> = std::iter::repeat_n("A", 1 + i % 5).collect();
                simple_trace(&i.to_string(), &acts)
            })
            .collect();
        let log = EventLog::new(traces).unwrap();
        let s = subsample_log(&log, 0.5, Some(3), 3).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.traces().iter().all(|t| t.len() <= 3));
    }

    #[test]
    fn trace_invariants() {
        let bad_ts = vec![
            Event::new("1", "A", ts(2020, 1, 2, 0, 0), 0.0),
            Event::new("1", "B", ts(2020, 1, 1, 0, 0), 0.0),
        ];
        assert!(Trace::new("1", bad_ts).is_err());
        assert!(Trace::new("1", vec![Event::new("2", "A", None, 0.0)]).is_err());
        assert!(Trace::new("1", vec![Event::new("1", "", None, 0.0)]).is_err());
        assert!(Trace::new("1", vec![Event::new("1", "A", None, -1.0)]).is_err());
        let dup = vec![simple_trace("a", &["A"]), simple_trace("a", &["B"])];
        assert!(matches!(EventLog::new(dup), Err(EventLogError::DuplicateCase(_))));
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        prop::collection::vec(0usize..4, 2..12).prop_map(|acts| {
            let names = ["A", "B", "C", "D"];
            let events = acts
                .iter()
                .enumerate()
                .map(|(i, &a)| Event::new("p", names[a], None, i as f64))
                .collect();
            Trace::new("p", events).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prefix_and_suffix_partition(t in arb_trace(), k in 1usize..12) {
            prop_assume!(k < t.len());
            let mut joined = prefix(&t, k).unwrap().events().to_vec();
            joined.extend_from_slice(suffix(&t, k).unwrap().events());
            prop_assert_eq!(joined, t.events().to_vec());
        }

        #[test]
        fn codecs_round_trip_and_agree(t in arb_trace()) {
            let t = append_termination(&t).unwrap();
            let v = ActivityVocabulary::from_activities(t.activities());
            let rows = onehot_encode(&t, &v).unwrap();
            let ords = ordinal_encode(&t, &v).unwrap();
            let names: Vec<String> = t.activities().map(str::to_owned).collect();
            for (row, &o) in rows.iter().zip(&ords) {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(row[v.onehot_column(o as usize - 1)], 1.0);
            }
            prop_assert_eq!(onehot_decode(&rows, &v).unwrap(), names.clone());
            prop_assert_eq!(ordinal_decode(&ords, &v).unwrap(), names);
        }

        #[test]
        fn termination_grows_by_one(t in arb_trace()) {
            let e = append_termination(&t).unwrap();
            prop_assert_eq!(e.len(), t.len() + 1);
            prop_assert_eq!(&e.events()[..t.len()], t.events());
        }

        #[test]
        fn split_is_a_partition(n in 2usize..40, seed in 0u64..1000, frac in 0.1f64..0.9) {
            let traces: Vec<Trace> = (0..n).map(|i| simple_trace(&i.to_string(), &["A"])).collect();
            let log = EventLog::new(traces).unwrap();
            let s = split_log(&log, frac, seed).unwrap();
            let mut ids: Vec<&str> = s.train.traces().iter().chain(s.test.traces()).map(|t| t.case_id()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn sample_count_is_sum_of_lengths_minus_one(lens in prop::collection::vec(1usize..8, 1..10)) {
            let traces: Vec<Trace> = lens.iter().enumerate().map(|(i, &l)| {
                let acts: Vec<&str> = std::iter::repeat_n("A", l).collect();
                append_termination(&simple_trace(&i.to_string(), &acts)).unwrap()
            }).collect();
            let expected: usize = traces.iter().map(|t| t.len() - 1).sum();
            let log = EventLog::new(traces).unwrap();
            prop_assert_eq!(build_prediction_samples(&log).unwrap().len(), expected);
        }
    }
}
