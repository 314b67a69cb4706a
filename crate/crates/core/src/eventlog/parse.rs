use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::{Event, EventLog, EventLogError, Trace};

/// Maps CSV columns onto event fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub case_id: String,
    pub activity: String,
    pub timestamp: String,
    /// Without a KPI column every event starts with KPI 0.
    pub kpi: Option<String>,
    pub delimiter: char,
    /// chrono format string; ISO-8601 variants are tried when unset.
    pub timestamp_format: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            case_id: "case_id".into(),
            activity: "activity".into(),
            timestamp: "timestamp".into(),
            kpi: None,
            delimiter: ',',
            timestamp_format: None,
        }
    }
}

const NAIVE_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y/%m/%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

fn parse_timestamp(raw: &str, format: Option<&str>) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    let parsed = match format {
        Some(f) => DateTime::parse_from_str(raw, f)
            .map(|d| d.with_timezone(&Utc))
            .ok()
            .or_else(|| NaiveDateTime::parse_from_str(raw, f).ok().map(|n| n.and_utc())),
        None => DateTime::parse_from_rfc3339(raw)
            .map(|d| d.with_timezone(&Utc))
            .ok()
            .or_else(|| {
                NAIVE_FORMATS
                    .iter()
                    .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
                    .map(|n| n.and_utc())
            }),
    }?;
    parsed.with_nanosecond(0)
}

pub fn parse_log(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<EventLog, EventLogError> {
    parse_reader(File::open(path)?, schema)
}

/// Groups rows by case id (in order of first appearance) and stable-sorts
/// each case's events by timestamp.
pub fn parse_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<EventLog, EventLogError> {
    if !schema.delimiter.is_ascii() {
        return Err(EventLogError::Schema(format!(
            "delimiter {:?} is not a single byte",
            schema.delimiter
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EventLogError::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| EventLogError::Schema(format!("missing column {name:?}")))
    };
    let case_col = column(&schema.case_id)?;
    let act_col = column(&schema.activity)?;
    let ts_col = column(&schema.timestamp)?;
    let kpi_col = schema.kpi.as_deref().map(column).transpose()?;

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Event>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| EventLogError::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |col: usize| record.get(col).map(str::trim).unwrap_or("");
        let fail = |message: String| EventLogError::Parse { row, message };

        let case_id = field(case_col);
        if case_id.is_empty() {
            return Err(fail("empty case id".into()));
        }
        let activity = field(act_col);
        if activity.is_empty() {
            return Err(fail("empty activity".into()));
        }
        let raw_ts = field(ts_col);
        let timestamp = parse_timestamp(raw_ts, schema.timestamp_format.as_deref())
            .ok_or_else(|| fail(format!("malformed timestamp {raw_ts:?}")))?;
        let kpi = match kpi_col {
            Some(col) => {
                let raw = field(col);
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 0.0 => v,
                    _ => return Err(fail(format!("KPI value {raw:?} is not a non-negative number"))),
                }
            }
            None => 0.0,
        };
        let events = grouped.entry(case_id.to_owned()).or_insert_with(|| {
            order.push(case_id.to_owned());
            Vec::new()
        });
        events.push(Event::new(case_id, activity, Some(timestamp), kpi));
    }

    let traces = order
        .into_iter()
        .map(|case_id| {
            let mut events = grouped.remove(&case_id).unwrap_or_default();
            events.sort_by_key(|e| e.timestamp);
            Trace::new(case_id, events)
        })
        .collect::<Result<Vec<_>, _>>()?;
    EventLog::new(traces)
}
