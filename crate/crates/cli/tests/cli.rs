use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chatter-atlas"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    log: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("chat.jsonl");
    let out = run(&["synth", "--seed", "3", "--output", s(&log)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Fixture { dir, log }
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn run_reports_three_clusters() {
    let f = fixture();
    let out_dir = f.path("out");
    let out = run(&["run", "--input", s(&f.log), "--output", s(&out_dir), "--auto-merge"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("3 clusters"), "{stdout}");
    for file in ["clustering.json", "report.md", "pipeline.json", "profiles.jsonl", "embeddings.jsonl", "centroid_similarity.csv"] {
        assert!(out_dir.join(file).is_file(), "{file} missing");
    }
    let c: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("clustering.json")).unwrap()).unwrap();
    assert_eq!(c["clustering"]["converged"], true);
    assert_eq!(c["users"].as_array().unwrap().len(), 45);
}

#[test]
fn nobody_above_threshold_exits_2() {
    let f = fixture();
    let out = run(&["run", "--input", s(&f.log), "--output", s(&f.path("out")), "--min-messages", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no chatters above threshold"));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--input", s(&dir.path().join("nope.jsonl")), "--output", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unparseable_log_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("junk.jsonl");
    std::fs::write(&log, "not json\n{\"also\": \"wrong\"}\n").unwrap();
    let out = run(&["stats", "--input", s(&log)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_merge_spec_exits_5() {
    let f = fixture();
    let spec = f.path("spec.json");
    std::fs::write(&spec, r#"{"groups": [{"name": "x", "members": [0, 99]}]}"#).unwrap();
    let out = run(&["run", "--input", s(&f.log), "--output", s(&f.path("out")), "--merge-spec", s(&spec)]);
    assert_eq!(out.status.code(), Some(5));

    std::fs::write(&spec, "{ not json").unwrap();
    let out = run(&["run", "--input", s(&f.log), "--output", s(&f.path("out")), "--merge-spec", s(&spec)]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn unreachable_embedding_service_exits_3() {
    let f = fixture();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/embed", listener.local_addr().unwrap());
    drop(listener);
    let out = bin()
        .args(["run", "--input", s(&f.log), "--output", s(&f.path("out"))])
        .args(["--embedder", "remote", "--endpoint", &url, "--retries", "0"])
        .env("CHATTER_ATLAS_API_KEY", "test-key")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_equals_composed_steps() {
    let f = fixture();
    let spec = f.path("spec.json");
    std::fs::write(&spec, r#"{"groups": [{"name": "first two", "members": [0, 1]}]}"#).unwrap();
    let whole = f.path("whole");
    let out = run(&["run", "--input", s(&f.log), "--output", s(&whole), "--merge-spec", s(&spec)]);
    assert!(out.status.success());

    let (profiles, embeddings, clustered, merged, report) =
        (f.path("p.jsonl"), f.path("e.jsonl"), f.path("c.json"), f.path("m.json"), f.path("r.md"));
    let steps: [Vec<&str>; 5] = [
        vec!["profiles", "--input", s(&f.log), "--output", s(&profiles)],
        vec!["embed", "--profiles", s(&profiles), "--output", s(&embeddings)],
        vec!["cluster", "--embeddings", s(&embeddings), "--output", s(&clustered)],
        vec!["merge", "--clustering", s(&clustered), "--merge-spec", s(&spec), "--output", s(&merged)],
        vec![
            "report", "--input", s(&f.log), "--clustering", s(&merged), "--profiles", s(&profiles), "--embeddings",
            s(&embeddings), "--output", s(&report),
        ],
    ];
    for args in &steps {
        let out = run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(whole.join("profiles.jsonl")), read(profiles));
    assert_eq!(read(whole.join("embeddings.jsonl")), read(embeddings));
    assert_eq!(read(whole.join("clustering.json")), read(merged.clone()));
    assert_eq!(read(whole.join("report.md")), read(report));
    let m: Value = serde_json::from_slice(&read(merged)).unwrap();
    assert_eq!(m["clustering"]["clusters"][0]["name"], "first two");
    assert_eq!(m["clustering"]["lineage"][0]["kind"], "manual");
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let cfg = f.path("atlas.toml");
    let out_dir = f.path("from-config");
    std::fs::write(
        &cfg,
        format!(
            "input_path = {:?}\noutput_path = {:?}\noutput_format = \"json\"\nmin_messages = 1000\n",
            s(&f.log),
            s(&out_dir)
        ),
    )
    .unwrap();
    // config alone filters everybody out
    let out = run(&["--config", s(&cfg), "run"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["--config", s(&cfg), "run", "--min-messages", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.json").is_file());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("pipeline.json")).unwrap()).unwrap();
    assert_eq!(meta["min_messages"], 20);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "min_messages = \"many\"\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "stats"]).status.code(), Some(2));
    std::fs::write(&cfg, "[ap]\ndamping = 0.2\n").unwrap();
    let f = fixture();
    let out = run(&["--config", s(&cfg), "run", "--input", s(&f.log), "--output", s(&f.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exclusion_list_is_recorded() {
    let f = fixture();
    let out_dir = f.path("out");
    let out = run(&[
        "run", "--input", s(&f.log), "--output", s(&out_dir), "--exclude-users", "viewer0x00,Viewer1x01",
    ]);
    assert!(out.status.success());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("pipeline.json")).unwrap()).unwrap();
    assert_eq!(meta["excluded_users"], serde_json::json!(["Viewer0x00", "Viewer1x01"]));
    assert_eq!(meta["retained"].as_array().unwrap().len(), 43);
}

#[test]
fn stats_json_and_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("chat.csv");
    std::fs::write(
        &log,
        "ts,user,text\n2024-05-01T20:00:00Z,Ann,hello\n2024-05-01T20:05:00Z,bo,hi\n2024-05-01T20:10:00Z,ann,gg\n",
    )
    .unwrap();
    let out = run(&["stats", "--input", s(&log), "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["summary"]["messages"], 3);
    assert_eq!(v["summary"]["chatters"], 2);
    assert_eq!(v["summary"]["length_ms"], 600_000);
    assert_eq!(v["histogram"]["buckets"][0]["chatters"], 2);
    let text = String::from_utf8(run(&["stats", "--input", s(&log)]).stdout).unwrap();
    assert!(text.starts_with("3 messages from 2 chatters over 10m"), "{text}");
}

#[test]
fn cluster_subcommand_exits_4_without_convergence() {
    let f = fixture();
    let (profiles, embeddings, clustered) = (f.path("p.jsonl"), f.path("e.jsonl"), f.path("c.json"));
    assert!(run(&["profiles", "--input", s(&f.log), "--output", s(&profiles)]).status.success());
    assert!(run(&["embed", "--profiles", s(&profiles), "--output", s(&embeddings)]).status.success());
    let out = run(&["cluster", "--embeddings", s(&embeddings), "--output", s(&clustered), "--max-iter", "2"]);
    assert_eq!(out.status.code(), Some(4));
    let c: Value = serde_json::from_str(&std::fs::read_to_string(&clustered).unwrap()).unwrap();
    assert_eq!(c["clustering"]["converged"], false);
}
