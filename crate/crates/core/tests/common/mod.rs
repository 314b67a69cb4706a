#![allow(dead_code)]

use chrono::{Duration, TimeZone, Utc};
use nextbest::dcr::{DcrGraph, Relation, RelationKind};
use nextbest::eventlog::{Event, EventLog, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHEAP: [(&str, f64); 4] = [("Start", 10.0), ("Register", 10.0), ("Check", 20.0), ("Approve", 10.0)];
pub const EXPENSIVE: [(&str, f64); 6] = [
    ("Start", 10.0),
    ("Register", 10.0),
    ("Check", 20.0),
    ("Rework", 150.0),
    ("Recheck", 40.0),
    ("Approve", 10.0),
];

/// Loan-style log with a cheap path (total 50) and an expensive rework
/// loop (total 240); the expensive variant is the majority.
pub fn two_variant_log(n: usize, cheap_share: f64, seed: u64) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 8, 0, 0).unwrap();
    let traces = (0..n)
        .map(|i| {
            let id = format!("c{i:04}");
            let path: &[(&str, f64)] = if rng.gen_bool(cheap_share) { &CHEAP } else { &EXPENSIVE };
            let mut at = t0 + Duration::hours(i as i64);
            let events = path
                .iter()
                .map(|&(a, kpi)| {
                    at += Duration::minutes(kpi as i64);
                    Event::new(id.clone(), a, Some(at), kpi)
                })
                .collect();
            Trace::new(id, events).unwrap()
        })
        .collect();
    EventLog::new(traces).unwrap()
}

/// Approval needs a check, registration obliges an eventual approval, and
/// rework blocks approval until the recheck is done.
pub fn two_variant_graph() -> DcrGraph {
    use RelationKind::*;
    DcrGraph::new(
        &["Start", "Register", "Check", "Approve", "Rework", "Recheck"],
        vec![
            Relation::new(Condition, "Start", "Register"),
            Relation::new(Condition, "Register", "Check"),
            Relation::new(Condition, "Check", "Approve"),
            Relation::new(Response, "Register", "Approve"),
            Relation::new(Condition, "Check", "Rework"),
            Relation::new(Response, "Rework", "Recheck"),
            Relation::new(Exclude, "Rework", "Approve"),
            Relation::new(Include, "Recheck", "Approve"),
        ],
    )
    .unwrap()
}

/// Prints one verdict line per criterion and fails the test on `Err`.
pub fn criterion(name: &str, body: impl FnOnce() -> Result<String, String>) {
    let start = std::time::Instant::now();
    let outcome = body();
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("[acceptance] PASS {name} ({secs:.1}s): {detail}"),
        Err(why) => {
            println!("[acceptance] FAIL {name} ({secs:.1}s): {why}");
            panic!("{name} failed: {why}");
        }
    }
}
