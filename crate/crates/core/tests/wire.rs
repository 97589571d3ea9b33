//! Wire-contract tests for the HTTP adapters against a minimal in-process
//! HTTP/1.1 server serving canned responses.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use curate_core::backends::http::{
    EmbeddingWire, HttpComplexity, HttpEmbedding, HttpJudge, HttpLogprob, HttpNumeralLogits,
    LogprobWire,
};
use curate_core::backends::{
    EmbeddingBackend, ComplexityBackend, ExpectedScoreComplexity, JudgeBackend, LogprobBackend,
    NumeralLogitSource,
};
use curate_core::error::Error;

/// Serve the given (status, body) responses one connection at a time and
/// record the request bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
    let seen_clone = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers.
            while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
                match stream.read(&mut chunk) {
                    Ok(0) => break,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                    Err(_) => break,
                }
            }
            let header_end = buf
                .windows(4)
                .position(|w| w == b"\r\n\r\n")
                .map(|p| p + 4)
                .unwrap_or(buf.len());
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    let l = l.to_ascii_lowercase();
                    l.strip_prefix("content-length:")
                        .map(|v| v.trim().parse().unwrap_or(0))
                })
                .unwrap_or(0);
            while buf.len() < header_end + content_length {
                match stream.read(&mut chunk) {
                    Ok(0) => break,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                    Err(_) => break,
                }
            }
            let body_bytes = &buf[header_end..(header_end + content_length).min(buf.len())];
            seen_clone
                .lock()
                .unwrap()
                .push(String::from_utf8_lossy(body_bytes).to_string());

            let reason = if status == 200 { "OK" } else { "ERR" };
            let resp = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (url, seen)
}

#[test]
fn embedding_native_wire() {
    let (url, seen) = serve(vec![(
        200,
        r#"{"vectors": [[1.0, 2.0], [3.0, 4.0]]}"#.to_string(),
    )]);
    let be = HttpEmbedding::new(&url, "test-model", EmbeddingWire::Native);
    let out = be
        .embed(&["alpha".to_string(), "beta".to_string()])
        .unwrap();
    assert_eq!(out, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req["model"], "test-model");
    assert_eq!(req["texts"][1], "beta");
}

#[test]
fn embedding_api_shape_sorts_by_index() {
    let (url, _) = serve(vec![(
        200,
        r#"{"object":"list","data":[{"index":1,"embedding":[9.0]},{"index":0,"embedding":[7.0]}]}"#
            .to_string(),
    )]);
    let be = HttpEmbedding::new(&url, "m", EmbeddingWire::EmbeddingsApi);
    let out = be.embed(&["a".to_string(), "b".to_string()]).unwrap();
    assert_eq!(out, vec![vec![7.0], vec![9.0]]);
}

#[test]
fn embedding_retries_transient_failures() {
    let (url, seen) = serve(vec![
        (500, r#"{"error":"transient"}"#.to_string()),
        (200, r#"{"vectors": [[1.5]]}"#.to_string()),
    ]);
    let be = HttpEmbedding::new(&url, "m", EmbeddingWire::Native);
    let out = be.embed(&["x".to_string()]).unwrap();
    assert_eq!(out, vec![vec![1.5]]);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_do_not_retry() {
    let (url, seen) = serve(vec![(404, "{}".to_string())]);
    let be = HttpEmbedding::new(&url, "m", EmbeddingWire::Native);
    assert!(matches!(
        be.embed(&["x".to_string()]),
        Err(Error::Backend { .. })
    ));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn complexity_native_wire() {
    let (url, seen) = serve(vec![(200, r#"{"score": 4.25}"#.to_string())]);
    let be = HttpComplexity::new(&url, "scorer-model");
    assert_eq!(be.complexity("how hard is this?").unwrap(), 4.25);
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req["instruction"], "how hard is this?");
}

#[test]
fn numeral_logit_endpoint_with_expected_score_decoding() {
    let (url, seen) = serve(vec![(
        200,
        r#"{"logits": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}"#.to_string(),
    )]);
    let source = HttpNumeralLogits::new(&url, "reward-model");
    let be = ExpectedScoreComplexity::new(source);
    let score = be.complexity("rate me").unwrap();
    assert!((score - 3.5).abs() < 1e-12);
    // The adapter sends the rendered reward-model prompt.
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    let prompt = req["prompt"].as_str().unwrap();
    assert!(prompt.starts_with("##Query:\nrate me"));
    assert!(prompt.ends_with("##Complexity:"));
}

#[test]
fn logprob_native_wire() {
    let (url, seen) = serve(vec![(
        200,
        r#"{"tokens": ["Hi", " there"], "logprobs": [-0.5, -1.25]}"#.to_string(),
    )]);
    let be = HttpLogprob::new(&url, "lm", LogprobWire::Native, None);
    let out = be.score("context text", "Hi there").unwrap();
    assert_eq!(out.tokens, vec!["Hi", " there"]);
    assert_eq!(out.logprobs, vec![-0.5, -1.25]);
    assert!(!out.truncated);
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req["context"], "context text");
    assert_eq!(req["continuation"], "Hi there");
}

#[test]
fn logprob_completions_echo_selects_continuation_tokens() {
    // Context "AB" (2 bytes); tokens echoed across the whole prompt with
    // byte offsets; only offsets >= 2 belong to the continuation.
    let (url, seen) = serve(vec![(
        200,
        r#"{"choices":[{"logprobs":{"tokens":["A","B","cd","ef"],"token_logprobs":[null,-9.0,-0.25,-0.75],"text_offset":[0,1,2,4]}}]}"#
            .to_string(),
    )]);
    let be = HttpLogprob::new(&url, "lm", LogprobWire::CompletionsEcho, None);
    let out = be.score("AB", "cdef").unwrap();
    assert_eq!(out.tokens, vec!["cd", "ef"]);
    assert_eq!(out.logprobs, vec![-0.25, -0.75]);
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req["prompt"], "ABcdef");
    assert_eq!(req["echo"], true);
    assert_eq!(req["max_tokens"], 0);
}

#[test]
fn logprob_truncates_context_from_the_left() {
    let (url, seen) = serve(vec![(
        200,
        r#"{"tokens": ["x"], "logprobs": [-1.0]}"#.to_string(),
    )]);
    let be = HttpLogprob::new(&url, "lm", LogprobWire::Native, Some(5));
    let out = be.score("0123456789", "x").unwrap();
    assert!(out.truncated);
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    // Only the rightmost five context chars survive.
    assert_eq!(req["context"], "56789");
}

#[test]
fn judge_happy_path() {
    let (url, seen) = serve(vec![(
        200,
        r#"{"choices":[{"message":{"content":"8 6\nAssistant 1 explained more clearly."}}]}"#
            .to_string(),
    )]);
    let be = HttpJudge::new(&url, "judge-model");
    let reply = be.judge("Why is the sky blue?", "answer one", "answer two").unwrap();
    assert_eq!(reply.score_first, 8.0);
    assert_eq!(reply.score_second, 6.0);
    assert!(reply.rationale.contains("clearly"));
    let req: serde_json::Value =
        serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(req["messages"][0]["role"], "system");
    assert_eq!(
        req["messages"][0]["content"],
        "You are a helpful and precise assistant for checking the quality of the answer."
    );
    let user = req["messages"][1]["content"].as_str().unwrap();
    assert!(user.starts_with("[Question]\nWhy is the sky blue?"));
    assert!(user.contains("[The Start of Assistant 1's Answer]\nanswer one\n"));
    assert!(user.contains("[The Start of Assistant 2's Answer]\nanswer two\n"));
}

#[test]
fn judge_reprompts_once_then_parses() {
    let (url, seen) = serve(vec![
        (
            200,
            r#"{"choices":[{"message":{"content":"They are both great!"}}]}"#.to_string(),
        ),
        (
            200,
            r#"{"choices":[{"message":{"content":"7 9\nSecond answer wins."}}]}"#.to_string(),
        ),
    ]);
    let be = HttpJudge::new(&url, "judge-model");
    let reply = be.judge("q", "a", "b").unwrap();
    assert_eq!((reply.score_first, reply.score_second), (7.0, 9.0));
    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 2);
    assert!(bodies[1].contains("could not be parsed"));
}

#[test]
fn judge_gives_up_after_one_reprompt() {
    let (url, _) = serve(vec![
        (
            200,
            r#"{"choices":[{"message":{"content":"no numbers here"}}]}"#.to_string(),
        ),
        (
            200,
            r#"{"choices":[{"message":{"content":"still no numbers"}}]}"#.to_string(),
        ),
    ]);
    let be = HttpJudge::new(&url, "judge-model");
    assert!(matches!(
        be.judge("q", "a", "b"),
        Err(Error::JudgeUnparsable { .. })
    ));
}
