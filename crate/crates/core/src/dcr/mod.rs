//! DCR graphs: markings, enabledness, execution, replay and short-term
//! simulation of candidate continuations.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::END_ACTIVITY;

#[derive(Debug, Error)]
pub enum DcrError {
    #[error("cannot read DCR graph {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed DCR document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("DCR schema error: {0}")]
    Schema(String),
    #[error("activity {0:?} is not declared in the graph")]
    Undeclared(String),
    #[error("activity {activity:?} cannot be executed: {reason}")]
    NotEnabled {
        activity: String,
        reason: ViolationReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Condition,
    Response,
    Include,
    Exclude,
    Milestone,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    #[serde(rename = "type")]
    pub kind: RelationKind,
    pub source: String,
    pub target: String,
}

impl Relation {
    pub fn new(kind: RelationKind, source: impl Into<String>, target: impl Into<String>) -> Self {
        Relation {
            kind,
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Which effect applies when one execution both includes and excludes the
/// same activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncludeExcludeConflict {
    #[default]
    IncludeWins,
    ExcludeWins,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcrOptions {
    /// Undeclared activities are violations instead of unconstrained no-ops.
    pub strict: bool,
    pub conflict: IncludeExcludeConflict,
}

/// Executed, included and pending activities, by graph index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Marking {
    executed: Vec<bool>,
    included: Vec<bool>,
    pending: Vec<bool>,
}

impl Marking {
    /// No included activity is pending.
    pub fn is_accepting(&self) -> bool {
        !self.pending.iter().zip(&self.included).any(|(&p, &i)| p && i)
    }

    pub fn is_executed(&self, index: usize) -> bool {
        self.executed[index]
    }

    pub fn is_included(&self, index: usize) -> bool {
        self.included[index]
    }

    pub fn is_pending(&self, index: usize) -> bool {
        self.pending[index]
    }
}

pub fn is_accepting(marking: &Marking) -> bool {
    marking.is_accepting()
}

/// A marking expressed with activity names, sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkingSets {
    pub executed: BTreeSet<String>,
    pub included: BTreeSet<String>,
    pub pending: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationReason {
    NotEnabled,
    NotAccepting,
}

impl std::fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ViolationReason::NotEnabled => "not enabled",
            ViolationReason::NotAccepting => "not accepting",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceVerdict {
    pub conformant: bool,
    pub failing_step: Option<usize>,
    pub reason: Option<ViolationReason>,
    pub activity: Option<String>,
}

impl ConformanceVerdict {
    pub fn conformant() -> Self {
        ConformanceVerdict {
            conformant: true,
            failing_step: None,
            reason: None,
            activity: None,
        }
    }

    pub fn violation(step: usize, activity: &str, reason: ViolationReason) -> Self {
        ConformanceVerdict {
            conformant: false,
            failing_step: Some(step),
            reason: Some(reason),
            activity: Some(activity.to_owned()),
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Document {
    activities: Vec<String>,
    #[serde(default)]
    relations: Vec<Relation>,
    #[serde(default)]
    initial_marking: Option<PartialMarking>,
    #[serde(default)]
    options: Option<DcrOptions>,
}

#[derive(Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct PartialMarking {
    #[serde(default)]
    executed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    included: Option<Vec<String>>,
    #[serde(default)]
    pending: Vec<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DocumentOut<'a> {
    activities: &'a [String],
    relations: &'a [Relation],
    initial_marking: PartialMarking,
    options: DcrOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcrGraph {
    activities: Vec<String>,
    index: HashMap<String, usize>,
    relations: Vec<Relation>,
    conditions_of: Vec<Vec<usize>>,
    milestones_of: Vec<Vec<usize>>,
    responses: Vec<Vec<usize>>,
    includes: Vec<Vec<usize>>,
    excludes: Vec<Vec<usize>>,
    initial: Marking,
    options: DcrOptions,
}

impl DcrGraph {
    /// Builds a graph with the default initial marking: everything included,
    /// nothing executed or pending. The termination activity is declared
    /// automatically.
    pub fn new(activities: &[&str], relations: Vec<Relation>) -> Result<Self, DcrError> {
        let names: Vec<String> = activities.iter().map(|s| s.to_string()).collect();
        Self::build(names, relations, None, DcrOptions::default())
    }

    fn build(
        mut activities: Vec<String>,
        relations: Vec<Relation>,
        initial: Option<PartialMarking>,
        options: DcrOptions,
    ) -> Result<Self, DcrError> {
        if !activities.iter().any(|a| a == END_ACTIVITY) {
            activities.push(END_ACTIVITY.to_owned());
        }
        let mut index = HashMap::new();
        for (i, a) in activities.iter().enumerate() {
            if a.is_empty() {
                return Err(DcrError::Schema("activity names must not be empty".into()));
            }
            if index.insert(a.clone(), i).is_some() {
                return Err(DcrError::Schema(format!("activity {a:?} is declared twice")));
            }
        }
        let n = activities.len();
        let lookup = |name: &str, what: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| DcrError::Schema(format!("{what} {name:?} is not a declared activity")))
        };
        let mut by = vec![vec![Vec::new(); n]; 5];
        for r in &relations {
            let s = lookup(&r.source, "relation source")?;
            let t = lookup(&r.target, "relation target")?;
            match r.kind {
                RelationKind::Condition => by[0][t].push(s),
                RelationKind::Milestone => by[1][t].push(s),
                RelationKind::Response => by[2][s].push(t),
                RelationKind::Include => by[3][s].push(t),
                RelationKind::Exclude => by[4][s].push(t),
            }
        }
        let mut marking = Marking {
            executed: vec![false; n],
            included: vec![true; n],
            pending: vec![false; n],
        };
        if let Some(m) = initial {
            for a in &m.executed {
                marking.executed[lookup(a, "executed activity")?] = true;
            }
            for a in &m.pending {
                marking.pending[lookup(a, "pending activity")?] = true;
            }
            if let Some(included) = &m.included {
                marking.included = vec![false; n];
                for a in included {
                    marking.included[lookup(a, "included activity")?] = true;
                }
            }
        }
        let mut by = by.into_iter();
        let mut next = || by.next().expect("five relation tables");
        Ok(DcrGraph {
            conditions_of: next(),
            milestones_of: next(),
            responses: next(),
            includes: next(),
            excludes: next(),
            activities,
            index,
            relations,
            initial: marking,
            options,
        })
    }

    pub fn with_options(mut self, options: DcrOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_initial_marking(mut self, sets: &MarkingSets) -> Result<Self, DcrError> {
        self.initial = self.marking_from_sets(sets)?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, DcrError> {
        let doc: Document = serde_json::from_str(text)?;
        Self::build(
            doc.activities,
            doc.relations,
            doc.initial_marking,
            doc.options.unwrap_or_default(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DcrError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DcrError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let sets = self.marking_sets(&self.initial);
        let doc = DocumentOut {
            activities: &self.activities,
            relations: &self.relations,
            initial_marking: PartialMarking {
                executed: sets.executed.into_iter().collect(),
                included: Some(sets.included.into_iter().collect()),
                pending: sets.pending.into_iter().collect(),
            },
            options: self.options,
        };
        serde_json::to_string_pretty(&doc).expect("graph serialises")
    }

    pub fn activities(&self) -> &[String] {
        &self.activities
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn options(&self) -> DcrOptions {
        self.options
    }

    pub fn index_of(&self, activity: &str) -> Option<usize> {
        self.index.get(activity).copied()
    }

    pub fn contains(&self, activity: &str) -> bool {
        self.index.contains_key(activity)
    }

    pub fn initial_marking(&self) -> Marking {
        self.initial.clone()
    }

    fn require(&self, activity: &str) -> Result<usize, DcrError> {
        self.index_of(activity)
            .ok_or_else(|| DcrError::Undeclared(activity.to_owned()))
    }

    pub fn marking_sets(&self, m: &Marking) -> MarkingSets {
        let pick = |flags: &[bool]| {
            flags
                .iter()
                .zip(&self.activities)
                .filter(|(&f, _)| f)
                .map(|(_, a)| a.clone())
                .collect()
        };
        MarkingSets {
            executed: pick(&m.executed),
            included: pick(&m.included),
            pending: pick(&m.pending),
        }
    }

    pub fn marking_from_sets(&self, sets: &MarkingSets) -> Result<Marking, DcrError> {
        let n = self.activities.len();
        let mut m = Marking {
            executed: vec![false; n],
            included: vec![false; n],
            pending: vec![false; n],
        };
        for (set, flags) in [
            (&sets.executed, &mut m.executed),
            (&sets.included, &mut m.included),
            (&sets.pending, &mut m.pending),
        ] {
            for a in set {
                flags[self.require(a)?] = true;
            }
        }
        Ok(m)
    }

    fn is_terminal(&self, m: &Marking) -> bool {
        m.executed[self.end_index()]
    }

    fn end_index(&self) -> usize {
        self.index[END_ACTIVITY]
    }

    fn why_disabled(&self, m: &Marking, t: usize) -> Option<ViolationReason> {
        if self.is_terminal(m) || !m.included[t] {
            return Some(ViolationReason::NotEnabled);
        }
        let blocked_condition = self.conditions_of[t]
            .iter()
            .any(|&s| m.included[s] && !m.executed[s]);
        let blocked_milestone = self.milestones_of[t]
            .iter()
            .any(|&s| m.included[s] && m.pending[s]);
        if blocked_condition || blocked_milestone {
            return Some(ViolationReason::NotEnabled);
        }
        if t == self.end_index() && !m.is_accepting() {
            return Some(ViolationReason::NotAccepting);
        }
        None
    }

    pub fn enabled(&self, m: &Marking, activity: &str) -> Result<bool, DcrError> {
        let t = self.require(activity)?;
        Ok(self.why_disabled(m, t).is_none())
    }

    pub fn enabled_activities(&self, m: &Marking) -> Vec<&str> {
        (0..self.activities.len())
            .filter(|&t| self.why_disabled(m, t).is_none())
            .map(|t| self.activities[t].as_str())
            .collect()
    }

    pub fn execute(&self, m: &Marking, activity: &str) -> Result<Marking, DcrError> {
        let t = self.require(activity)?;
        if let Some(reason) = self.why_disabled(m, t) {
            return Err(DcrError::NotEnabled {
                activity: activity.to_owned(),
                reason,
            });
        }
        let mut next = m.clone();
        next.executed[t] = true;
        next.pending[t] = false;
        for &r in &self.responses[t] {
            next.pending[r] = true;
        }
        let (first, last, value_last) = match self.options.conflict {
            IncludeExcludeConflict::IncludeWins => (&self.excludes[t], &self.includes[t], true),
            IncludeExcludeConflict::ExcludeWins => (&self.includes[t], &self.excludes[t], false),
        };
        for &x in first {
            next.included[x] = !value_last;
        }
        for &x in last {
            next.included[x] = value_last;
        }
        Ok(next)
    }

    /// Folds `execute` over `steps` from `from`. Undeclared activities are
    /// skipped unless the graph is strict.
    fn run<S: AsRef<str>>(&self, from: &Marking, steps: &[S]) -> Result<Marking, ConformanceVerdict> {
        let mut m = from.clone();
        for (i, step) in steps.iter().enumerate() {
            let a = step.as_ref();
            let Some(t) = self.index_of(a) else {
                if self.options.strict {
                    return Err(ConformanceVerdict::violation(i, a, ViolationReason::NotEnabled));
                }
                if self.is_terminal(&m) {
                    return Err(ConformanceVerdict::violation(i, a, ViolationReason::NotEnabled));
                }
                continue;
            };
            if let Some(reason) = self.why_disabled(&m, t) {
                return Err(ConformanceVerdict::violation(i, a, reason));
            }
            m = self.execute(&m, a).expect("enabled activity executes");
        }
        Ok(m)
    }

    /// The marking reached by a prefix from the initial marking, or the first
    /// violating step.
    pub fn replay<S: AsRef<str>>(&self, prefix: &[S]) -> Result<Marking, ConformanceVerdict> {
        self.run(&self.initial, prefix)
    }

    /// Checks a candidate continuation from `marking`. A trailing
    /// termination step requires the reached marking to be accepting.
    pub fn simulate_suffix<S: AsRef<str>>(&self, marking: &Marking, suffix: &[S]) -> ConformanceVerdict {
        match self.run(marking, suffix) {
            Ok(_) => ConformanceVerdict::conformant(),
            Err(v) => v,
        }
    }
}

pub fn parse_dcr(document: &str) -> Result<DcrGraph, DcrError> {
    DcrGraph::from_json(document)
}
