use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const GRAPH: &str = r#"{
  "activities": ["Create Application", "Concept", "Accepted", "Validating"],
  "relations": [
    {"type": "condition", "source": "Validating", "target": "Accepted"},
    {"type": "response", "source": "Concept", "target": "Validating"}
  ]
}"#;

const VARIANTS: [&[(&str, f64)]; 3] = [
    &[("Create Application", 20.0), ("Concept", 20.0), ("Accepted", 20.0), ("Validating", 40.0)],
    &[("Create Application", 20.0), ("Concept", 20.0), ("Validating", 20.0), ("Accepted", 10.0)],
    &[("Create Application", 10.0), ("Concept", 30.0), ("Validating", 10.0), ("Accepted", 10.0), ("Validating", 10.0)],
];

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// A log with a `cost` KPI column, a graph and a config pointing at both.
    fn new(extra_config: &str) -> Workspace {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let mut csv = String::from("Case ID,Activity,Complete Timestamp,cost\n");
        for case in 0..30 {
            for (i, (activity, cost)) in VARIANTS[case % 3].iter().enumerate() {
                csv.push_str(&format!("c{case},{activity},2012/10/{:02} {:02}:00:00,{cost}\n", 1 + case % 28, 8 + i));
            }
        }
        ws.write("log.csv", &csv);
        ws.write("graph.json", GRAPH);
        ws.write(
            "run.toml",
            &format!(
                r#"seed = 5
graph = "graph.json"
artifacts = "out"
k = 3
{extra_config}
"#
            ),
        );
        ws
    }

    fn with_default_sections(extra: &str) -> Workspace {
        Workspace::new(&format!(
            r#"{extra}
[log]
path = "log.csv"
[log.columns]
case_id = "Case ID"
activity = "Activity"
timestamp = "Complete Timestamp"
kpi = "cost"

[split]
train_fraction = 0.7

[predictor]
hidden_size = 8
epochs = 3
batch_size = 16

[evaluation]
k_values = [3]
max_prefix = 4
"#
        ))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) {
        std::fs::write(self.path(name), text).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with_stdin(args, "")
    }

    fn run_with_stdin(&self, args: &[&str], stdin: &str) -> Output {
        let mut child = self.command(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
        // The process may exit before reading stdin (e.g. on an artifact error).
        let _ = child.stdin.take().unwrap().write_all(stdin.as_bytes());
        child.wait_with_output().unwrap()
    }

    fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nextbest"));
        cmd.args(args).arg("--config").arg(self.path("run.toml"));
        cmd
    }

    fn trained(self) -> Self {
        let out = self.run(&["train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        self
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn train_writes_four_artifacts() {
    let ws = Workspace::with_default_sections("");
    let out = ws.run(&["train"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(files_in(&ws.path("out")), ["index.json", "model.json", "stats.json", "vocabulary.json"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("trained on 21 traces"), "{stdout}");
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("out/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["split"]["train_fraction"], 0.7);
    assert_eq!(stats["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn inter_event_kpi_needs_no_kpi_column() {
    let ws = Workspace::new(
        r#"[log]
path = "plain.csv"
kpi_mode = "inter-event-duration"
[log.columns]
case_id = "case"
activity = "activity"
timestamp = "time"
[predictor]
hidden_size = 4
epochs = 2
"#,
    );
    let mut csv = String::from("case,activity,time\n");
    for case in 0..6 {
        for (i, (a, _)) in VARIANTS[case % 3].iter().enumerate() {
            csv.push_str(&format!("{case},{a},2012-10-01T{:02}:{:02}:00\n", 8 + i, case));
        }
    }
    ws.write("plain.csv", &csv);
    let out = ws.run(&["train", "--out", ws.path("alt").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(files_in(&ws.path("alt")).len(), 4);
    let stats = std::fs::read_to_string(ws.path("alt/stats.json")).unwrap();
    assert!(stats.contains("inter-event-duration"));
}

#[test]
fn invalid_split_fraction_is_rejected() {
    let ws = Workspace::new("[log]\npath = \"log.csv\"\n[split]\ntrain_fraction = 1.5\n");
    let out = ws.run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train_fraction"), "{}", stderr(&out));
    assert!(!ws.path("out").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let ws = Workspace::new("");
    let out = Command::new(env!("CARGO_BIN_EXE_nextbest")).arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = ws.run(&["launch"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ws.run(&["train", "--k", "many"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_writes_report() {
    let ws = Workspace::with_default_sections("").trained();
    let out = ws.run(&["evaluate", "--workers", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(ws.path("out/report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("method,k,prefix_size,in_time_rate,mean_dl,n"));
    // baseline and k=3, prefix sizes 2..=4
    assert_eq!(lines.count(), 6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Recommender k=3"));

    // Same config and seed, same report.
    assert!(ws.run(&["evaluate", "--workers", "1"]).status.success());
    assert_eq!(std::fs::read_to_string(ws.path("out/report.csv")).unwrap(), report);
}

#[test]
fn evaluate_empty_test_log_gives_header_only() {
    let ws = Workspace::with_default_sections("").trained();
    ws.write("empty.csv", "Case ID,Activity,Complete Timestamp,cost\n");
    let config = std::fs::read_to_string(ws.path("run.toml"))
        .unwrap()
        .replace("[evaluation]", "[evaluation]\ntest_log = \"empty.csv\"");
    ws.write("run.toml", &config);
    let out = ws.run(&["evaluate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(ws.path("out/report.csv")).unwrap();
    assert_eq!(report.trim_end(), "method,k,prefix_size,in_time_rate,mean_dl,n");
}

#[test]
fn evaluate_with_bad_graph_path_fails() {
    let ws = Workspace::with_default_sections("").trained();
    let config = std::fs::read_to_string(ws.path("run.toml")).unwrap().replace("graph.json", "missing.json");
    ws.write("run.toml", &config);
    let out = ws.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.json"));
}

#[test]
fn missing_or_mismatched_artifacts_exit_with_three() {
    let ws = Workspace::with_default_sections("");
    let out = ws.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let ws = ws.trained();
    let vocab = r#"{"format":"nextbest-vocabulary","version":1,"fingerprint":"00","activities":{"X":0,"End":1}}"#;
    ws.write("out/vocabulary.json", vocab);
    let out = ws.run_with_stdin(&["recommend"], "[]");
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn recommend_from_stdin() {
    let ws = Workspace::with_default_sections("").trained();
    let two = r#"[{"activity": "Create Application", "kpi": 20}, {"activity": "Concept", "kpi": 20}]"#;
    let out = ws.run_with_stdin(&["recommend"], two);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["action"].is_string(), "{json}");
    assert!(json["decision_path"].is_string());
    assert!(json["diagnostics"].is_object());
    assert_eq!(json["prefix_len"], 2);
    assert_eq!(json["k"], 3);

    let wrapped = format!(r#"{{"case_id": "2", "events": {two}}}"#);
    let out = ws.run_with_stdin(&["recommend", "--k", "5"], &wrapped);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((json["case_id"].as_str(), json["k"].as_u64()), (Some("2"), Some(5)));

    let out = ws.run_with_stdin(&["recommend"], r#"[{"activity": "Create Application", "kpi": 20}]"#);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 2 events"), "{}", stderr(&out));

    let ended = r#"[{"activity": "Create Application"}, {"activity": "Concept"}, {"activity": "End"}]"#;
    let out = ws.run_with_stdin(&["recommend"], ended);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("terminated"), "{}", stderr(&out));

    let out = ws.run_with_stdin(&["recommend"], "not json");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_reports_busy_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let ws = Workspace::with_default_sections(&format!("[service]\nbind = \"{addr}\"")).trained();
    let out = ws.run(&["serve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cannot bind"), "{}", stderr(&out));
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn serve_answers_health_and_stops_on_sigterm() {
    let ws = Workspace::with_default_sections("[service]\nbind = \"127.0.0.1:0\"").trained();
    let mut child = ws.command(&["serve"]).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on http://").expect(&first).to_owned();

    let health = http_get(&addr, "/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"status\":\"ok\""));
    let meta = http_get(&addr, "/meta");
    assert!(meta.contains("model.json") && meta.contains("vocabulary_fingerprint"), "{meta}");

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
}
