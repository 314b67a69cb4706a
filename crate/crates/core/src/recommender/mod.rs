//! The online loop: predict a continuation, test it against the KPI
//! threshold and, when it is too expensive, pick the cheapest retrieved
//! suffix that the process model accepts.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_index::{CandidateIndex, IndexError};
use crate::dcr::{ConformanceVerdict, DcrError, DcrGraph};
use crate::eventlog::{ActivityVocabulary, Event, EventLog, EventLogError, Trace};
use crate::predictor::{predict_suffix, MultiTaskModel, PredictedSuffix, PredictorError, SuffixStep};

#[derive(Debug, Error)]
pub enum RecommenderError {
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    State(String),
    #[error("invalid threshold: {0}")]
    Threshold(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Dcr(#[from] DcrError),
    #[error(transparent)]
    EventLog(#[from] EventLogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdOrigin {
    Expert,
    DerivedFromLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub origin: ThresholdOrigin,
}

impl Threshold {
    pub fn new(value: f64, origin: ThresholdOrigin) -> Result<Self, RecommenderError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(RecommenderError::Threshold(format!(
                "the threshold must be a positive number, got {value}"
            )));
        }
        Ok(Threshold { value, origin })
    }

    pub fn expert(value: f64) -> Result<Self, RecommenderError> {
        Self::new(value, ThresholdOrigin::Expert)
    }

    /// Totals equal to the threshold count as in time.
    pub fn exceeded_by(&self, total: f64) -> bool {
        total > self.value
    }
}

/// Mean total KPI per trace. Termination events carry no KPI, so terminated
/// and raw logs give the same value.
pub fn derive_threshold(log: &EventLog) -> Result<Threshold, RecommenderError> {
    if log.is_empty() {
        return Err(RecommenderError::Threshold("cannot derive a threshold from an empty log".into()));
    }
    let mean = log.traces().iter().map(Trace::total_kpi).sum::<f64>() / log.len() as f64;
    Threshold::new(mean, ThresholdOrigin::DerivedFromLog)
}

pub fn total_kpi(prefix: &[Event], suffix: &[SuffixStep]) -> f64 {
    prefix.iter().map(|e| e.kpi).sum::<f64>() + suffix.iter().map(|s| s.kpi).sum::<f64>()
}

/// Source of suffix predictions (the multi-task model in production).
pub trait SuffixPredictor {
    fn vocabulary(&self) -> &ActivityVocabulary;
    fn max_suffix_len(&self) -> usize;
    fn predict(&self, prefix: &Trace, max_len: usize) -> Result<PredictedSuffix, RecommenderError>;
}

impl SuffixPredictor for MultiTaskModel {
    fn vocabulary(&self) -> &ActivityVocabulary {
        &self.vocabulary
    }

    fn max_suffix_len(&self) -> usize {
        self.max_suffix_len
    }

    fn predict(&self, prefix: &Trace, max_len: usize) -> Result<PredictedSuffix, RecommenderError> {
        Ok(predict_suffix(self, prefix, max_len)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub steps: Vec<SuffixStep>,
    pub distance: f64,
}

impl Candidate {
    pub fn total_kpi(&self) -> f64 {
        self.steps.iter().map(|s| s.kpi).sum()
    }
}

/// Source of historical suffixes near a predicted one, nearest first.
pub trait CandidateSource {
    fn candidates(&self, predicted: &[SuffixStep], k: usize) -> Result<Vec<Candidate>, RecommenderError>;
}

impl CandidateSource for CandidateIndex {
    fn candidates(&self, predicted: &[SuffixStep], k: usize) -> Result<Vec<Candidate>, RecommenderError> {
        self.query(predicted, k)?
            .into_iter()
            .map(|n| {
                Ok(Candidate {
                    steps: n.record.steps(self.vocabulary())?,
                    distance: n.distance,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionPath {
    BelowThresholdPrediction,
    OptimizedCandidate,
    FallbackPredictedActivity,
    Intervention,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDiagnostics {
    pub retrieved: usize,
    pub simulated: usize,
    pub simulated_out: usize,
    /// Rank of the chosen candidate after sorting by total KPI.
    pub selected_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub action: Option<String>,
    pub projected_suffix: Vec<SuffixStep>,
    pub projected_total_kpi: f64,
    pub predicted_suffix: Vec<SuffixStep>,
    pub predicted_total_kpi: f64,
    pub prediction_truncated: bool,
    pub decision_path: DecisionPath,
    pub diagnostics: CandidateDiagnostics,
    /// Why the running prefix itself does not conform, for interventions.
    pub violation: Option<ConformanceVerdict>,
}

impl Recommendation {
    pub fn action_kpi(&self) -> Option<f64> {
        self.action.as_ref().and(self.projected_suffix.first().map(|s| s.kpi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseStatus {
    Open,
    Terminated,
}

/// A case in progress. Recommended events carry no timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningCase {
    case_id: String,
    events: Vec<Event>,
}

impl RunningCase {
    pub fn new(case_id: impl Into<String>) -> Self {
        RunningCase {
            case_id: case_id.into(),
            events: Vec::new(),
        }
    }

    pub fn from_trace(trace: &Trace) -> Self {
        RunningCase {
            case_id: trace.case_id().to_owned(),
            events: trace.events().to_vec(),
        }
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

    pub fn activities(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.activity.as_str()).collect()
    }

    pub fn status(&self) -> CaseStatus {
        if self.events.last().is_some_and(Event::is_end) {
            CaseStatus::Terminated
        } else {
            CaseStatus::Open
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.status() == CaseStatus::Terminated
    }

    pub fn total_kpi(&self) -> f64 {
        self.events.iter().map(|e| e.kpi).sum()
    }

    pub fn prefix(&self) -> Result<Trace, RecommenderError> {
        Ok(Trace::new(self.case_id.clone(), self.events.clone())?)
    }

    /// Appends an observed or recommended event.
    pub fn push(
        &mut self,
        activity: &str,
        kpi: f64,
        timestamp: Option<DateTime<Utc>>,
    ) -> Result<(), RecommenderError> {
        if self.is_terminated() {
            return Err(RecommenderError::State(format!(
                "case {} is already terminated",
                self.case_id
            )));
        }
        let mut events = self.events.clone();
        events.push(Event::new(self.case_id.clone(), activity, timestamp, kpi));
        Trace::new(self.case_id.clone(), events.clone())?;
        self.events = events;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// Re-evaluate the gate before every step.
    #[default]
    EveryStep,
    /// Decide once on the first step and keep that path.
    Once,
}

pub fn recommend_next<P, C>(
    model: &P,
    index: &C,
    graph: &DcrGraph,
    case: &RunningCase,
    k: usize,
    threshold: &Threshold,
) -> Result<Recommendation, RecommenderError>
where
    P: SuffixPredictor + ?Sized,
    C: CandidateSource + ?Sized,
{
    recommend_with_gate(model, index, graph, case, k, Gate::Threshold(threshold))
}

#[derive(Clone, Copy)]
enum Gate<'a> {
    Threshold(&'a Threshold),
    Prescriptive,
    PredictOnly,
}

fn recommend_with_gate<P, C>(
    model: &P,
    index: &C,
    graph: &DcrGraph,
    case: &RunningCase,
    k: usize,
    gate: Gate<'_>,
) -> Result<Recommendation, RecommenderError>
where
    P: SuffixPredictor + ?Sized,
    C: CandidateSource + ?Sized,
{
    if case.is_terminated() {
        return Err(RecommenderError::State(format!(
            "case {} is already terminated",
            case.case_id()
        )));
    }
    if case.len() < 2 {
        return Err(RecommenderError::Precondition(format!(
            "recommendations need a prefix of at least 2 events, case {} has {}",
            case.case_id(),
            case.len()
        )));
    }
    if k == 0 {
        return Err(RecommenderError::Precondition("k must be at least 1".into()));
    }
    let prefix = case.prefix()?;
    let predicted = model.predict(&prefix, model.max_suffix_len().max(1))?;
    let predicted_total = total_kpi(case.events(), &predicted.steps);
    let mut rec = Recommendation {
        action: predicted.steps.first().map(|s| s.activity.clone()),
        projected_suffix: predicted.steps.clone(),
        projected_total_kpi: predicted_total,
        predicted_suffix: predicted.steps.clone(),
        predicted_total_kpi: predicted_total,
        prediction_truncated: predicted.truncated,
        decision_path: DecisionPath::BelowThresholdPrediction,
        diagnostics: CandidateDiagnostics::default(),
        violation: None,
    };
    let prescriptive = match gate {
        Gate::Threshold(t) => t.exceeded_by(predicted_total),
        Gate::Prescriptive => true,
        Gate::PredictOnly => false,
    };
    if !prescriptive {
        return Ok(rec);
    }

    let marking = match graph.replay(&case.activities()) {
        Ok(m) => m,
        Err(verdict) => {
            rec.action = None;
            rec.decision_path = DecisionPath::Intervention;
            rec.violation = Some(verdict);
            return Ok(rec);
        }
    };

    let mut ranked = index.candidates(&predicted.steps, k)?;
    rec.diagnostics.retrieved = ranked.len();
    let prefix_total = case.total_kpi();
    // Stable: equal totals keep retrieval order.
    ranked.sort_by(|a, b| (prefix_total + a.total_kpi()).total_cmp(&(prefix_total + b.total_kpi())));
    for (rank, cand) in ranked.iter().enumerate() {
        if cand.steps.is_empty() {
            continue;
        }
        rec.diagnostics.simulated += 1;
        let activities: Vec<&str> = cand.steps.iter().map(|s| s.activity.as_str()).collect();
        if graph.simulate_suffix(&marking, &activities).conformant {
            rec.action = Some(cand.steps[0].activity.clone());
            rec.projected_total_kpi = prefix_total + cand.total_kpi();
            rec.projected_suffix = cand.steps.clone();
            rec.decision_path = DecisionPath::OptimizedCandidate;
            rec.diagnostics.selected_rank = Some(rank);
            return Ok(rec);
        }
        rec.diagnostics.simulated_out += 1;
    }
    rec.decision_path = DecisionPath::FallbackPredictedActivity;
    Ok(rec)
}

/// Appends the recommended action with the KPI of the projected first step.
pub fn apply_action(case: &RunningCase, rec: &Recommendation) -> Result<RunningCase, RecommenderError> {
    let (Some(action), Some(kpi)) = (&rec.action, rec.action_kpi()) else {
        return Err(RecommenderError::State(
            "an intervention carries no action to apply".into(),
        ));
    };
    let mut next = case.clone();
    next.push(action, kpi, None)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RollOutEnd {
    Terminated,
    Intervention,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollOut {
    pub case: RunningCase,
    pub steps: Vec<Recommendation>,
    pub end: RollOutEnd,
}

/// Repeats recommend and apply until the case terminates, an intervention
/// is raised or `max_steps` actions have been applied.
#[allow(clippy::too_many_arguments)]
pub fn roll_out<P, C>(
    model: &P,
    index: &C,
    graph: &DcrGraph,
    case: &RunningCase,
    k: usize,
    threshold: &Threshold,
    max_steps: usize,
    policy: ThresholdPolicy,
) -> Result<RollOut, RecommenderError>
where
    P: SuffixPredictor + ?Sized,
    C: CandidateSource + ?Sized,
{
    let mut current = case.clone();
    let mut steps: Vec<Recommendation> = Vec::new();
    let mut prescriptive: Option<bool> = None;
    while steps.len() < max_steps {
        let gate = match (policy, prescriptive) {
            (ThresholdPolicy::Once, Some(true)) => Gate::Prescriptive,
            (ThresholdPolicy::Once, Some(false)) => Gate::PredictOnly,
            _ => Gate::Threshold(threshold),
        };
        let rec = recommend_with_gate(model, index, graph, &current, k, gate)?;
        prescriptive.get_or_insert(rec.decision_path != DecisionPath::BelowThresholdPrediction);
        if rec.decision_path == DecisionPath::Intervention {
            steps.push(rec);
            return Ok(RollOut {
                case: current,
                steps,
                end: RollOutEnd::Intervention,
            });
        }
        current = apply_action(&current, &rec)?;
        steps.push(rec);
        if current.is_terminated() {
            return Ok(RollOut {
                case: current,
                steps,
                end: RollOutEnd::Terminated,
            });
        }
    }
    Ok(RollOut {
        case: current,
        steps,
        end: RollOutEnd::Truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcr::{Relation, RelationKind};
    use crate::eventlog::fixtures::ts;
    use crate::eventlog::END_ACTIVITY as END;
    use proptest::prelude::*;

    struct FixedPredictor {
        vocab: ActivityVocabulary,
        suffix: Vec<SuffixStep>,
    }

    impl SuffixPredictor for FixedPredictor {
        fn vocabulary(&self) -> &ActivityVocabulary {
            &self.vocab
        }
        fn max_suffix_len(&self) -> usize {
            10
        }
        fn predict(&self, _: &Trace, max_len: usize) -> Result<PredictedSuffix, RecommenderError> {
            let steps: Vec<SuffixStep> = self.suffix.iter().take(max_len).cloned().collect();
            Ok(PredictedSuffix {
                truncated: steps.len() < self.suffix.len(),
                steps,
            })
        }
    }

    /// Predicts the unique continuation of a single-path process.
    struct PathPredictor {
        vocab: ActivityVocabulary,
        path: Vec<SuffixStep>,
    }

    impl SuffixPredictor for PathPredictor {
        fn vocabulary(&self) -> &ActivityVocabulary {
            &self.vocab
        }
        fn max_suffix_len(&self) -> usize {
            self.path.len()
        }
        fn predict(&self, prefix: &Trace, max_len: usize) -> Result<PredictedSuffix, RecommenderError> {
            let rest = self.path.get(prefix.len()..).unwrap_or(&[]);
            let steps: Vec<SuffixStep> = rest.iter().take(max_len).cloned().collect();
            Ok(PredictedSuffix { truncated: false, steps })
        }
    }

    struct FixedCandidates(Vec<Candidate>);

    impl CandidateSource for FixedCandidates {
        fn candidates(&self, _: &[SuffixStep], k: usize) -> Result<Vec<Candidate>, RecommenderError> {
            Ok(self.0.iter().take(k).cloned().collect())
        }
    }

    fn steps(s: &[(&str, f64)]) -> Vec<SuffixStep> {
        s.iter().map(|(a, k)| SuffixStep::new(*a, *k)).collect()
    }

    fn cand(s: &[(&str, f64)]) -> Candidate {
        Candidate {
            steps: steps(s),
            distance: 0.0,
        }
    }

    fn loan_vocab() -> ActivityVocabulary {
        ActivityVocabulary::from_activities(["Create Application", "Concept", "Accepted", "Validating"])
    }

    fn sigma2() -> RunningCase {
        let mut case = RunningCase::new("2");
        case.push("Create Application", 20.0, ts(2012, 9, 30, 18, 0)).unwrap();
        case.push("Concept", 20.0, ts(2012, 9, 30, 18, 30)).unwrap();
        case
    }

    fn predicted_sigma2() -> FixedPredictor {
        FixedPredictor {
            vocab: loan_vocab(),
            suffix: steps(&[("Accepted", 20.0), ("Validating", 40.0), (END, 10.0)]),
        }
    }

    fn three_alternatives() -> FixedCandidates {
        FixedCandidates(vec![
            cand(&[(END, 10.0)]),
            cand(&[("Accepted", 20.0), ("Validating", 40.0), (END, 10.0)]),
            cand(&[("Validating", 20.0), ("Accepted", 10.0), ("Validating", 10.0), (END, 10.0)]),
        ])
    }

    /// Validation must precede acceptance and must follow the concept.
    fn loan_graph() -> DcrGraph {
        DcrGraph::new(
            &["Create Application", "Concept", "Accepted", "Validating"],
            vec![
                Relation::new(RelationKind::Condition, "Validating", "Accepted"),
                Relation::new(RelationKind::Response, "Concept", "Validating"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn totals_of_the_running_example() {
        let case = sigma2();
        assert_eq!(total_kpi(case.events(), &predicted_sigma2().suffix), 110.0);
        let c = three_alternatives().0;
        assert_eq!(c[0].total_kpi() + 40.0, 50.0);
        assert_eq!(c[2].total_kpi() + 40.0, 90.0);
        assert_eq!(total_kpi(case.events(), &[]), 40.0);
    }

    #[test]
    fn worked_example_selects_third_candidate() {
        let graph = loan_graph();
        let case = sigma2();
        let t = Threshold::expert(100.0).unwrap();
        let rec = recommend_next(&predicted_sigma2(), &three_alternatives(), &graph, &case, 3, &t).unwrap();
        assert_eq!(rec.predicted_total_kpi, 110.0);
        assert_eq!(rec.decision_path, DecisionPath::OptimizedCandidate);
        assert_eq!(rec.action.as_deref(), Some("Validating"));
        assert_eq!(rec.action_kpi(), Some(20.0));
        assert_eq!(rec.projected_total_kpi, 90.0);
        assert_eq!(rec.diagnostics.retrieved, 3);
        assert_eq!(rec.diagnostics.simulated_out, 1);
        assert_eq!(rec.diagnostics.selected_rank, Some(1));

        let m = graph.replay(&case.activities()).unwrap();
        assert!(!graph.simulate_suffix(&m, &[END]).conformant);
        assert!(!graph.simulate_suffix(&m, &["Accepted", "Validating", END]).conformant);

        let next = apply_action(&case, &rec).unwrap();
        assert_eq!(next.len(), 3);
        let e = &next.events()[2];
        assert_eq!((e.case_id.as_str(), e.activity.as_str(), e.timestamp, e.kpi), ("2", "Validating", None, 20.0));
        assert_eq!(&next.events()[..2], case.events());
    }

    #[test]
    fn below_threshold_returns_prediction() {
        let t = Threshold::expert(110.0).unwrap();
        let rec = recommend_next(&predicted_sigma2(), &three_alternatives(), &loan_graph(), &sigma2(), 3, &t).unwrap();
        assert_eq!(rec.decision_path, DecisionPath::BelowThresholdPrediction);
        assert_eq!(rec.action.as_deref(), Some("Accepted"));
        assert_eq!(rec.diagnostics, CandidateDiagnostics::default());
    }

    #[test]
    fn unconstrained_graph_takes_cheapest() {
        let graph = DcrGraph::new(&["Create Application", "Concept", "Accepted", "Validating"], vec![]).unwrap();
        let t = Threshold::expert(100.0).unwrap();
        let rec = recommend_next(&predicted_sigma2(), &three_alternatives(), &graph, &sigma2(), 3, &t).unwrap();
        assert_eq!(rec.action.as_deref(), Some(END));
        assert_eq!(rec.projected_total_kpi, 50.0);
        assert!(apply_action(&sigma2(), &rec).unwrap().is_terminated());
    }

    #[test]
    fn all_candidates_rejected_falls_back() {
        let graph = loan_graph();
        let only_bad = FixedCandidates(vec![cand(&[(END, 1.0)]), cand(&[("Accepted", 1.0), (END, 0.0)])]);
        let t = Threshold::expert(100.0).unwrap();
        let rec = recommend_next(&predicted_sigma2(), &only_bad, &graph, &sigma2(), 5, &t).unwrap();
        assert_eq!(rec.decision_path, DecisionPath::FallbackPredictedActivity);
        assert_eq!(rec.action.as_deref(), Some("Accepted"));
        assert_eq!(rec.diagnostics.simulated_out, 2);
    }

    #[test]
    fn non_conformant_prefix_triggers_intervention() {
        let graph = DcrGraph::new(
            &["Create Application", "Concept"],
            vec![Relation::new(RelationKind::Condition, "Concept", "Create Application")],
        )
        .unwrap();
        let t = Threshold::expert(100.0).unwrap();
        let rec = recommend_next(&predicted_sigma2(), &three_alternatives(), &graph, &sigma2(), 3, &t).unwrap();
        assert_eq!(rec.decision_path, DecisionPath::Intervention);
        assert!(rec.action.is_none());
        assert_eq!(rec.violation.as_ref().unwrap().failing_step, Some(0));
        assert!(apply_action(&sigma2(), &rec).is_err());
    }

    #[test]
    fn preconditions() {
        let t = Threshold::expert(100.0).unwrap();
        let mut short = RunningCase::new("x");
        short.push("Concept", 1.0, None).unwrap();
        let err = recommend_next(&predicted_sigma2(), &three_alternatives(), &loan_graph(), &short, 3, &t).unwrap_err();
        assert!(matches!(err, RecommenderError::Precondition(_)));
        let mut done = sigma2();
        done.push(END, 0.0, None).unwrap();
        assert!(done.is_terminated());
        assert!(done.push("Concept", 1.0, None).is_err());
        let err = recommend_next(&predicted_sigma2(), &three_alternatives(), &loan_graph(), &done, 3, &t).unwrap_err();
        assert!(matches!(err, RecommenderError::State(_)));
        assert!(Threshold::expert(0.0).is_err());
        assert!(Threshold::expert(f64::NAN).is_err());
    }

    #[test]
    fn threshold_is_mean_trace_total() {
        let mk = |id: &str, kpis: &[f64]| {
            let events = kpis.iter().map(|&k| Event::new(id, "A", None, k)).collect();
            Trace::new(id, events).unwrap()
        };
        let log = EventLog::new(vec![mk("a", &[20.0, 40.0]), mk("b", &[100.0, 40.0])]).unwrap();
        let t = derive_threshold(&log).unwrap();
        assert_eq!(t.value, 100.0);
        assert_eq!(t.origin, ThresholdOrigin::DerivedFromLog);
        assert_eq!(derive_threshold(&log.clone().terminated().unwrap()).unwrap().value, 100.0);
        let single = EventLog::new(vec![mk("a", &[3.0, 4.5])]).unwrap();
        assert_eq!(derive_threshold(&single).unwrap().value, 7.5);
    }

    #[test]
    fn roll_out_of_a_single_path_reproduces_it() {
        let path = steps(&[("A", 5.0), ("B", 5.0), ("C", 7.0), ("D", 1.0), (END, 0.0)]);
        let model = PathPredictor {
            vocab: ActivityVocabulary::from_activities(["A", "B", "C", "D"]),
            path: path.clone(),
        };
        let events = path[..4].iter().map(|s| Event::new("p", &s.activity, None, s.kpi)).collect();
        let log = EventLog::new(vec![Trace::new("p", events).unwrap()]).unwrap().terminated().unwrap();
        let index = CandidateIndex::build(&log, Default::default()).unwrap();
        let graph = DcrGraph::new(&["A", "B", "C", "D"], vec![]).unwrap();
        let mut case = RunningCase::new("p");
        case.push("A", 5.0, None).unwrap();
        case.push("B", 5.0, None).unwrap();
        let t = Threshold::expert(1.0).unwrap();
        let out = roll_out(&model, &index, &graph, &case, 1, &t, 10, ThresholdPolicy::EveryStep).unwrap();
        assert_eq!(out.end, RollOutEnd::Terminated);
        let got: Vec<(String, f64)> = out.case.events().iter().map(|e| (e.activity.clone(), e.kpi)).collect();
        let want: Vec<(String, f64)> = path.iter().map(|s| (s.activity.clone(), s.kpi)).collect();
        assert_eq!(got, want);
        assert_eq!(out.steps.len(), 3);
    }

    #[test]
    fn roll_out_stops_at_end_and_respects_bound() {
        let model = FixedPredictor {
            vocab: ActivityVocabulary::from_activities(["A"]),
            suffix: steps(&[(END, 0.0)]),
        };
        let index = FixedCandidates(vec![]);
        let graph = DcrGraph::new(&["A"], vec![]).unwrap();
        let mut case = RunningCase::new("c");
        case.push("A", 1.0, None).unwrap();
        case.push("A", 1.0, None).unwrap();
        let t = Threshold::expert(100.0).unwrap();
        let out = roll_out(&model, &index, &graph, &case, 3, &t, 5, ThresholdPolicy::EveryStep).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.end, RollOutEnd::Terminated);

        let looping = FixedPredictor {
            vocab: ActivityVocabulary::from_activities(["A"]),
            suffix: steps(&[("A", 50.0), (END, 0.0)]),
        };
        let out = roll_out(&looping, &index, &graph, &case, 3, &t, 4, ThresholdPolicy::EveryStep).unwrap();
        assert_eq!(out.end, RollOutEnd::Truncated);
        assert_eq!(out.steps.len(), 4);
        assert_eq!(out.case.len(), 6);
    }

    #[test]
    fn check_once_keeps_the_first_decision() {
        // Totals start above the threshold; after one cheap step the
        // re-checking policy would fall back to plain prediction.
        let model = FixedPredictor {
            vocab: loan_vocab(),
            suffix: steps(&[("Accepted", 20.0), ("Validating", 40.0), (END, 10.0)]),
        };
        let graph = DcrGraph::new(&["Create Application", "Concept", "Accepted", "Validating"], vec![]).unwrap();
        let index = FixedCandidates(vec![cand(&[("Validating", 1.0), ("Validating", 1.0), (END, 0.0)])]);
        let t = Threshold::expert(100.0).unwrap();
        let once = roll_out(&model, &index, &graph, &sigma2(), 1, &t, 3, ThresholdPolicy::Once).unwrap();
        assert!(once.steps.iter().all(|r| r.decision_path == DecisionPath::OptimizedCandidate));
        let t = Threshold::expert(200.0).unwrap();
        let once = roll_out(&model, &index, &graph, &sigma2(), 1, &t, 3, ThresholdPolicy::Once).unwrap();
        assert!(once.steps.iter().all(|r| r.decision_path == DecisionPath::BelowThresholdPrediction));
    }

    fn arb_candidates() -> impl Strategy<Value = Vec<Candidate>> {
        let step = (prop::sample::select(vec!["Accepted", "Validating", "Concept", END]), 0.0f64..50.0);
        prop::collection::vec(prop::collection::vec(step, 1..5), 0..8).prop_map(|cs| {
            cs.into_iter()
                .map(|s| Candidate {
                    steps: s.into_iter().map(|(a, k)| SuffixStep::new(a, k.round())).collect(),
                    distance: 0.0,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn chosen_candidate_is_cheapest_conformant(cands in arb_candidates(), t in 1.0f64..200.0) {
            let graph = loan_graph();
            let case = sigma2();
            let threshold = Threshold::expert(t).unwrap();
            let source = FixedCandidates(cands.clone());
            let rec = recommend_next(&predicted_sigma2(), &source, &graph, &case, 8, &threshold).unwrap();
            let marking = graph.replay(&case.activities()).unwrap();
            let conformant = |c: &Candidate| {
                let acts: Vec<&str> = c.steps.iter().map(|s| s.activity.as_str()).collect();
                graph.simulate_suffix(&marking, &acts).conformant
            };
            if t >= 110.0 {
                prop_assert_eq!(rec.decision_path, DecisionPath::BelowThresholdPrediction);
                prop_assert_eq!(rec.action.as_deref(), Some("Accepted"));
            } else if let Some(rank) = rec.diagnostics.selected_rank {
                prop_assert_eq!(rec.decision_path, DecisionPath::OptimizedCandidate);
                let chosen = rec.projected_total_kpi - 40.0;
                for c in cands.iter().filter(|c| conformant(c)) {
                    prop_assert!(c.total_kpi() >= chosen - 1e-9);
                }
                let action = rec.action.clone().unwrap();
                prop_assert!(graph.enabled(&marking, &action).unwrap());
                prop_assert!(rank < cands.len());
            } else {
                prop_assert_eq!(rec.decision_path, DecisionPath::FallbackPredictedActivity);
                prop_assert!(cands.iter().all(|c| !conformant(c)));
            }
        }
    }
}
