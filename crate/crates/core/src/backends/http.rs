//! HTTP clients for the backend wire contracts, with bounded retries.
//!
//! Each service has a native JSON shape plus an adapter for the common
//! public-API shape of the same capability (embeddings API, completions API
//! with echoed prompt logprobs, chat-style judge).

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::backends::{
    EmbeddingBackend, ComplexityBackend, JudgeBackend, JudgeReply, LogprobBackend,
    NumeralLogitSource, ScoredTokens,
};
use crate::error::{Error, Result};

const ATTEMPTS: usize = 3;

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into()
}

/// POST a JSON payload, retrying transport failures and 5xx responses.
fn post_json(
    agent: &ureq::Agent,
    endpoint: &str,
    backend_id: &str,
    payload: &Value,
) -> Result<Value> {
    let mut last: Option<String> = None;
    for attempt in 0..ATTEMPTS {
        match agent.post(endpoint).send_json(payload) {
            Ok(mut resp) => {
                return resp.body_mut().read_json::<Value>().map_err(|e| {
                    Error::backend(backend_id, format!("invalid JSON response: {e}"))
                });
            }
            Err(ureq::Error::StatusCode(code)) if code < 500 => {
                return Err(Error::backend(
                    backend_id,
                    format!("{endpoint} returned status {code}"),
                ));
            }
            Err(e) => {
                last = Some(e.to_string());
                if attempt + 1 < ATTEMPTS {
                    std::thread::sleep(Duration::from_millis(50 * (attempt as u64 + 1)));
                }
            }
        }
    }
    Err(Error::backend(
        backend_id,
        format!(
            "{endpoint} failed after {ATTEMPTS} attempts: {}",
            last.unwrap_or_default()
        ),
    ))
}

fn field_error(backend_id: &str, what: &str) -> Error {
    Error::backend(backend_id, format!("response missing {what}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingWire {
    /// {"model", "texts"} -> {"vectors": [[..]]}
    Native,
    /// {"model", "input"} -> {"data": [{"embedding", "index"}]}
    EmbeddingsApi,
}

pub struct HttpEmbedding {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    wire: EmbeddingWire,
    id: String,
}

impl HttpEmbedding {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, wire: EmbeddingWire) -> Self {
        let model = model.into();
        HttpEmbedding {
            agent: agent(),
            endpoint: endpoint.into(),
            id: format!("embed-http:{model}"),
            model,
            wire,
        }
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let payload = match self.wire {
            EmbeddingWire::Native => json!({"model": self.model, "texts": texts}),
            EmbeddingWire::EmbeddingsApi => json!({"model": self.model, "input": texts}),
        };
        let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
        match self.wire {
            EmbeddingWire::Native => {
                let vectors: Vec<Vec<f64>> = serde_json::from_value(
                    resp.get("vectors")
                        .cloned()
                        .ok_or_else(|| field_error(&self.id, "\"vectors\""))?,
                )?;
                Ok(vectors)
            }
            EmbeddingWire::EmbeddingsApi => {
                #[derive(Deserialize)]
                struct Item {
                    embedding: Vec<f64>,
                    index: usize,
                }
                let mut items: Vec<Item> = serde_json::from_value(
                    resp.get("data")
                        .cloned()
                        .ok_or_else(|| field_error(&self.id, "\"data\""))?,
                )?;
                items.sort_by_key(|i| i.index);
                Ok(items.into_iter().map(|i| i.embedding).collect())
            }
        }
    }
}

/// Native complexity service: {"model", "instruction"} -> {"score"}.
pub struct HttpComplexity {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    id: String,
}

impl HttpComplexity {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        HttpComplexity {
            agent: agent(),
            endpoint: endpoint.into(),
            id: format!("complexity-http:{model}"),
            model,
        }
    }
}

impl ComplexityBackend for HttpComplexity {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complexity(&self, instruction: &str) -> Result<f64> {
        let payload = json!({"model": self.model, "instruction": instruction});
        let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
        resp.get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| field_error(&self.id, "numeric \"score\""))
    }
}

/// Numeral-logit endpoint: {"model", "prompt"} -> {"logits": [6 numbers]}.
/// Wrap in [`super::ExpectedScoreComplexity`] to obtain a ComplexityBackend.
pub struct HttpNumeralLogits {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    id: String,
}

impl HttpNumeralLogits {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        HttpNumeralLogits {
            agent: agent(),
            endpoint: endpoint.into(),
            id: format!("numeral-logits-http:{model}"),
            model,
        }
    }
}

impl NumeralLogitSource for HttpNumeralLogits {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn logits(&self, prompt: &str) -> Result<[f64; 6]> {
        let payload = json!({"model": self.model, "prompt": prompt});
        let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
        let v: Vec<f64> = serde_json::from_value(
            resp.get("logits")
                .cloned()
                .ok_or_else(|| field_error(&self.id, "\"logits\""))?,
        )?;
        v.try_into().map_err(|v: Vec<f64>| {
            Error::backend(&self.id, format!("expected 6 logits, got {}", v.len()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogprobWire {
    /// {"model", "context", "continuation"} -> {"tokens", "logprobs"}
    Native,
    /// Completions API with echoed prompt logprobs; continuation tokens are
    /// those whose text offset falls at or beyond the context length.
    CompletionsEcho,
}

pub struct HttpLogprob {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    wire: LogprobWire,
    /// Proxy for the backend's token budget: contexts longer than this are
    /// truncated from the left, never the continuation.
    max_context_chars: Option<usize>,
    id: String,
}

impl HttpLogprob {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        wire: LogprobWire,
        max_context_chars: Option<usize>,
    ) -> Self {
        let model = model.into();
        HttpLogprob {
            agent: agent(),
            endpoint: endpoint.into(),
            id: format!("logprob-http:{model}"),
            model,
            wire,
            max_context_chars,
        }
    }
}

impl LogprobBackend for HttpLogprob {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn score(&self, context: &str, continuation: &str) -> Result<ScoredTokens> {
        let (context, truncated) = match self.max_context_chars {
            Some(budget) if context.chars().count() > budget => {
                let keep_from = context
                    .char_indices()
                    .rev()
                    .nth(budget - 1)
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (&context[keep_from..], true)
            }
            _ => (context, false),
        };
        match self.wire {
            LogprobWire::Native => {
                let payload = json!({
                    "model": self.model,
                    "context": context,
                    "continuation": continuation,
                });
                let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
                let tokens: Vec<String> = serde_json::from_value(
                    resp.get("tokens")
                        .cloned()
                        .ok_or_else(|| field_error(&self.id, "\"tokens\""))?,
                )?;
                let logprobs: Vec<f64> = serde_json::from_value(
                    resp.get("logprobs")
                        .cloned()
                        .ok_or_else(|| field_error(&self.id, "\"logprobs\""))?,
                )?;
                if tokens.len() != logprobs.len() {
                    return Err(Error::backend(
                        &self.id,
                        "tokens and logprobs have different lengths",
                    ));
                }
                Ok(ScoredTokens {
                    tokens,
                    logprobs,
                    truncated,
                })
            }
            LogprobWire::CompletionsEcho => {
                let prompt = format!("{context}{continuation}");
                let payload = json!({
                    "model": self.model,
                    "prompt": prompt,
                    "max_tokens": 0,
                    "echo": true,
                    "logprobs": 0,
                });
                let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
                #[derive(Deserialize)]
                struct Logprobs {
                    tokens: Vec<String>,
                    token_logprobs: Vec<Option<f64>>,
                    text_offset: Vec<usize>,
                }
                #[derive(Deserialize)]
                struct Choice {
                    logprobs: Logprobs,
                }
                #[derive(Deserialize)]
                struct Resp {
                    choices: Vec<Choice>,
                }
                let parsed: Resp = serde_json::from_value(resp)?;
                let choice = parsed
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| field_error(&self.id, "\"choices\""))?;
                let lp = choice.logprobs;
                let cut = context.len();
                let mut tokens = Vec::new();
                let mut logprobs = Vec::new();
                for ((tok, maybe_lp), off) in lp
                    .tokens
                    .iter()
                    .zip(&lp.token_logprobs)
                    .zip(&lp.text_offset)
                {
                    if *off >= cut {
                        let v = maybe_lp.ok_or_else(|| {
                            Error::backend(
                                &self.id,
                                format!("null logprob for continuation token {tok:?}"),
                            )
                        })?;
                        tokens.push(tok.clone());
                        logprobs.push(v);
                    }
                }
                Ok(ScoredTokens {
                    tokens,
                    logprobs,
                    truncated,
                })
            }
        }
    }
}

pub const JUDGE_SYSTEM_PROMPT: &str =
    "You are a helpful and precise assistant for checking the quality of the answer.";

/// The pairwise-evaluation prompt. The judge must put the two scores alone on
/// the first line, separated by a space.
pub fn judge_user_prompt(question: &str, answer_first: &str, answer_second: &str) -> String {
    format!(
        "[Question]\n{question}\n\n\
         [The Start of Assistant 1's Answer]\n{answer_first}\n[The End of Assistant 1's Answer]\n\n\
         [The Start of Assistant 2's Answer]\n{answer_second}\n[The End of Assistant 2's Answer]\n\n\
         [System]\n\
         We would like to request your feedback on the performance of two AI assistants in \
         response to the user question displayed above. Please rate the helpfulness, relevance, \
         accuracy, level of details of their responses. Each assistant receives an overall score \
         on a scale of 1 to 10, where a higher score indicates better overall performance. \
         Please first output a single line containing only two values indicating the scores for \
         Assistant 1 and 2, respectively. The two scores are separated by a space. In the \
         subsequent line, please provide a comprehensive explanation of your evaluation, \
         avoiding any potential bias and ensuring that the order in which the responses were \
         presented does not affect your judgment."
    )
}

/// Parse "s1 s2" from the first line; the rest is the rationale.
pub fn parse_judge_reply(text: &str) -> Option<JudgeReply> {
    let mut lines = text.lines();
    let first = lines.next()?.trim();
    let mut nums = first.split_whitespace();
    let s1: f64 = nums.next()?.parse().ok()?;
    let s2: f64 = nums.next()?.parse().ok()?;
    if nums.next().is_some() {
        return None;
    }
    Some(JudgeReply {
        score_first: s1,
        score_second: s2,
        rationale: lines.collect::<Vec<_>>().join("\n").trim().to_string(),
    })
}

/// Chat-style judge client. On an unparsable reply it reprompts once with a
/// format reminder, then gives up so the caller can record a flagged tie.
pub struct HttpJudge {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    id: String,
}

impl HttpJudge {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        HttpJudge {
            agent: agent(),
            endpoint: endpoint.into(),
            id: format!("judge-http:{model}"),
            model,
        }
    }

    fn chat(&self, user: &str) -> Result<String> {
        let payload = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": JUDGE_SYSTEM_PROMPT},
                {"role": "user", "content": user},
            ],
        });
        let resp = post_json(&self.agent, &self.endpoint, &self.id, &payload)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| field_error(&self.id, "chat message content"))
    }
}

impl JudgeBackend for HttpJudge {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn judge(&self, question: &str, answer_first: &str, answer_second: &str) -> Result<JudgeReply> {
        let user = judge_user_prompt(question, answer_first, answer_second);
        let text = self.chat(&user)?;
        if let Some(reply) = parse_judge_reply(&text) {
            return Ok(reply);
        }
        let retry_user = format!(
            "{user}\n\nYour previous reply could not be parsed. Reply again, and make sure the \
             first line contains only the two numeric scores separated by a single space."
        );
        let text2 = self.chat(&retry_user)?;
        parse_judge_reply(&text2).ok_or(Error::JudgeUnparsable { raw: text2 })
    }
}
