//! Shared fixture helpers for pipeline tests: a deterministic mock corpus,
//! an eval set with answer files, and config writing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TOPICS: [&str; 12] = [
    "sorting algorithms",
    "travel planning",
    "tax forms",
    "poetry in iambic meter",
    "gradient descent",
    "sourdough baking",
    "chess openings",
    "birdwatching",
    "career advice",
    "database indexing",
    "garden irrigation",
    "movie trivia",
];

/// A deterministic n-sample instruction corpus with varied texts.
pub fn corpus_jsonl(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let topic = TOPICS[i % TOPICS.len()];
        let words = 2 + (i * 5 + 1) % 11;
        let response: Vec<String> = (0..words)
            .map(|w| format!("term{}", (i * 13 + w * 7) % 29))
            .collect();
        if i % 5 == 0 {
            writeln!(
                out,
                r#"{{"instruction":"Task {i}: outline {topic} step {x}.","input":"payload {i} alpha","output":"{r}"}}"#,
                x = i % 7,
                r = response.join(" ")
            )
            .unwrap();
        } else {
            writeln!(
                out,
                r#"{{"instruction":"Task {i}: explain {topic} variant {x}.","output":"{r}"}}"#,
                x = i % 9,
                r = response.join(" ")
            )
            .unwrap();
        }
    }
    out
}

pub fn eval_jsonl(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        writeln!(
            out,
            r#"{{"id":"e{i:02}","instruction":"Eval question {i} about {topic}?","output":"reference {i}"}}"#,
            topic = TOPICS[(i * 3) % TOPICS.len()]
        )
        .unwrap();
    }
    out
}

pub fn answers_jsonl(n: usize, label: &str) -> String {
    let mut out = String::new();
    for i in 0..n {
        writeln!(
            out,
            r#"{{"id":"e{i:02}","answer":"{label} answer {i} covering details {}"}}"#,
            "d ".repeat((i * 3 + label.len()) % 9)
        )
        .unwrap();
    }
    out
}

pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
}

/// Lay out corpus + eval + answers + config under `root`, with the output
/// and cache dirs named by `tag` so one fixture can host several runs.
pub fn write_fixture(root: &Path, n: usize, seed: u64, tag: &str) -> Fixture {
    write_fixture_tau(root, n, seed, tag, 0.9)
}

pub fn write_fixture_tau(root: &Path, n: usize, seed: u64, tag: &str, tau: f64) -> Fixture {
    let corpus = root.join("train.jsonl");
    if !corpus.exists() {
        std::fs::write(&corpus, corpus_jsonl(n)).unwrap();
        std::fs::write(root.join("eval.jsonl"), eval_jsonl(16)).unwrap();
        std::fs::write(root.join("answers_a.jsonl"), answers_jsonl(16, "subset")).unwrap();
        std::fs::write(root.join("answers_b.jsonl"), answers_jsonl(16, "full")).unwrap();
    }
    let output_dir = root.join(format!("out-{tag}"));
    let cache_dir = root.join(format!("cache-{tag}"));
    let config = root.join(format!("config-{tag}.toml"));
    let text = format!(
        r#"corpus = "train.jsonl"
seed = {seed}
output_dir = "out-{tag}"
cache_dir = "cache-{tag}"
tau = {tau}
max_in_flight = 2

[budget]
fraction = 0.10

[judge]
eval_corpus = "eval.jsonl"
answers_a = "answers_a.jsonl"
answers_b = "answers_b.jsonl"
"#
    );
    std::fs::write(&config, text).unwrap();
    Fixture {
        dir: root.to_path_buf(),
        config,
        corpus,
        output_dir,
        cache_dir,
    }
}

pub fn curate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curate"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "curate failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file under `dir`, relative path -> content bytes.
pub fn tree_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

pub fn summary(output_dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(output_dir.join("run_summary.json")).unwrap()).unwrap()
}

/// Total fresh backend calls (cache misses) across all stages of the run.
pub fn total_misses(summary: &serde_json::Value) -> u64 {
    summary["stages"]
        .as_object()
        .unwrap()
        .values()
        .filter_map(|s| s.get("calls").and_then(|c| c.as_object()))
        .flat_map(|calls| calls.values())
        .filter_map(|c| c["misses"].as_u64())
        .sum()
}
