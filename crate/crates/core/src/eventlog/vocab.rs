use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{EventLogError, END_ACTIVITY};

/// Bijection between activity names and dense indices `0..len()`.
///
/// Indices follow first appearance; the termination symbol always takes the
/// last index. Ordinals (used by the candidate index) are `index + 1`, which
/// leaves `0` free as a padding value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ActivityVocabulary {
    /// Builds a vocabulary from activity names in order of first appearance.
    /// Occurrences of the termination symbol are ignored; it is appended last.
    pub fn from_activities<'a, I>(activities: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut names = Vec::new();
        let mut index = HashMap::new();
        for name in activities {
            if name == END_ACTIVITY || index.contains_key(name) {
                continue;
            }
            index.insert(name.to_owned(), names.len());
            names.push(name.to_owned());
        }
        index.insert(END_ACTIVITY.to_owned(), names.len());
        names.push(END_ACTIVITY.to_owned());
        ActivityVocabulary { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// Always false: the termination symbol is present in every vocabulary.
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, activity: &str) -> Option<usize> {
        self.index.get(activity).copied()
    }

    pub fn contains(&self, activity: &str) -> bool {
        self.index.contains_key(activity)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn end_index(&self) -> usize {
        self.names.len() - 1
    }

    pub fn ordinal_of(&self, activity: &str) -> Option<u32> {
        self.index_of(activity).map(|i| i as u32 + 1)
    }

    pub fn name_of_ordinal(&self, ordinal: u32) -> Option<&str> {
        if ordinal == 0 {
            return None;
        }
        self.name(ordinal as usize - 1)
    }

    /// Column of the one-hot feature vector that encodes `index`.
    ///
    /// Columns run in descending index order: the first-seen activity sets the
    /// last column and the termination symbol sets the first.
    pub fn onehot_column(&self, index: usize) -> usize {
        self.names.len() - 1 - index
    }

    pub fn index_of_onehot_column(&self, column: usize) -> usize {
        self.names.len() - 1 - column
    }

    pub fn require(&self, activity: &str) -> Result<usize, EventLogError> {
        self.index_of(activity)
            .ok_or_else(|| EventLogError::UnknownActivity(activity.to_owned()))
    }

    /// The `{activity -> index}` mapping.
    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.index.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self, EventLogError> {
        let mut names = vec![None; map.len()];
        for (name, &idx) in map {
            if name.is_empty() {
                return Err(EventLogError::Vocabulary("empty activity name".into()));
            }
            let slot = names.get_mut(idx).ok_or_else(|| {
                EventLogError::Vocabulary(format!("index {idx} of {name:?} out of range"))
            })?;
            if slot.is_some() {
                return Err(EventLogError::Vocabulary(format!("index {idx} used twice")));
            }
            *slot = Some(name.clone());
        }
        let names: Vec<String> = names.into_iter().map(Option::unwrap).collect();
        if names.last().map(String::as_str) != Some(END_ACTIVITY) {
            return Err(EventLogError::Vocabulary(format!(
                "{END_ACTIVITY:?} must hold the last index"
            )));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(ActivityVocabulary { names, index })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EventLogError> {
        let map: BTreeMap<String, usize> =
            serde_json::from_str(text).map_err(|e| EventLogError::Vocabulary(e.to_string()))?;
        Self::from_map(&map)
    }

    /// Hex SHA-256 over the names in index order.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Serialize for ActivityVocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ActivityVocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(deserializer)?;
        ActivityVocabulary::from_map(&map).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ActivityVocabulary {
        ActivityVocabulary::from_activities([
            "Create Application",
            "Concept",
            "Accepted",
            "Concept",
            "Validating",
        ])
    }

    #[test]
    fn first_appearance_order_with_end_last() {
        let v = sample();
        assert_eq!(v.len(), 5);
        assert_eq!(v.index_of("Create Application"), Some(0));
        assert_eq!(v.index_of("Validating"), Some(3));
        assert_eq!(v.end_index(), 4);
        assert_eq!(v.ordinal_of(END_ACTIVITY), Some(5));
        assert_eq!(v.name_of_ordinal(0), None);
    }

    #[test]
    fn end_is_never_duplicated() {
        let v = ActivityVocabulary::from_activities(["End", "A", "End"]);
        assert_eq!(v.names(), &["A".to_string(), "End".to_string()]);
    }

    #[test]
    fn json_round_trip() {
        let v = sample();
        let back = ActivityVocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn rejects_broken_maps() {
        assert!(ActivityVocabulary::from_json(r#"{"A":0,"B":0}"#).is_err());
        assert!(ActivityVocabulary::from_json(r#"{"A":0,"End":2}"#).is_err());
        assert!(ActivityVocabulary::from_json(r#"{"End":0,"A":1}"#).is_err());
    }
}
