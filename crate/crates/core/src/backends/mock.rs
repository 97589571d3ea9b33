//! Deterministic offline backends for tests and mock-mode pipeline runs.
//!
//! Every mock counts its calls so tests can assert cache behavior and call
//! budgets against the backend itself rather than the cache's bookkeeping.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::backends::{
    EmbeddingBackend, ComplexityBackend, JudgeBackend, JudgeReply, LogprobBackend,
    NumeralLogitSource, ScoredTokens,
};
use crate::error::{Error, Result};
use crate::hash::{seed_from_parts, unit_from_parts};

/// Shared invocation counter; clone a handle before boxing a mock to keep
/// observing its calls.
#[derive(Debug, Default, Clone)]
pub struct CallCounter(std::sync::Arc<AtomicU64>);

impl CallCounter {
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Embedding mock: the text hash seeds a pseudo-random unit vector.
/// Offline, reproducible, and collision-improbable.
pub struct HashEmbedding {
    dim: usize,
    id: String,
    pub calls: CallCounter,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        HashEmbedding {
            dim,
            id: format!("mock-embed-{dim}"),
            calls: CallCounter::default(),
        }
    }

    /// The spec'd 16-dimensional test backend.
    pub fn default_dim() -> Self {
        Self::new(16)
    }

    pub fn vector_for(&self, text: &str) -> Vec<f64> {
        let seed = seed_from_parts(&[self.id.as_bytes(), text.as_bytes()]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    }
}

impl EmbeddingBackend for HashEmbedding {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.calls.bump();
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Complexity mock: 1 + 5 * (chars mod 97) / 96 — deterministic and spanning
/// the full [1, 6] range.
pub struct LengthComplexity {
    pub calls: CallCounter,
}

impl LengthComplexity {
    pub fn new() -> Self {
        LengthComplexity {
            calls: CallCounter::default(),
        }
    }
}

impl Default for LengthComplexity {
    fn default() -> Self {
        Self::new()
    }
}

impl ComplexityBackend for LengthComplexity {
    fn backend_id(&self) -> &str {
        "mock-complexity-length"
    }

    fn complexity(&self, instruction: &str) -> Result<f64> {
        self.calls.bump();
        let len = instruction.chars().count() as u64;
        Ok(1.0 + 5.0 * ((len % 97) as f64) / 96.0)
    }
}

/// Complexity scores scripted per instruction text.
pub struct ScriptedComplexity {
    scores: HashMap<String, f64>,
    pub calls: CallCounter,
}

impl ScriptedComplexity {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        ScriptedComplexity {
            scores: entries.into_iter().collect(),
            calls: CallCounter::default(),
        }
    }
}

impl ComplexityBackend for ScriptedComplexity {
    fn backend_id(&self) -> &str {
        "mock-complexity-scripted"
    }

    fn complexity(&self, instruction: &str) -> Result<f64> {
        self.calls.bump();
        self.scores.get(instruction).copied().ok_or_else(|| {
            Error::backend(
                "mock-complexity-scripted",
                format!("no script for {instruction:?}"),
            )
        })
    }
}

/// Numeral-logit mocks for the expected-score decoder.
pub struct UniformLogits;

impl NumeralLogitSource for UniformLogits {
    fn backend_id(&self) -> &str {
        "mock-logits-uniform"
    }

    fn logits(&self, _prompt: &str) -> Result<[f64; 6]> {
        Ok([0.0; 6])
    }
}

/// All probability mass on one numeral (1-based).
pub struct PointMassLogits(pub usize);

impl NumeralLogitSource for PointMassLogits {
    fn backend_id(&self) -> &str {
        "mock-logits-pointmass"
    }

    fn logits(&self, _prompt: &str) -> Result<[f64; 6]> {
        let mut l = [-1e9; 6];
        l[self.0 - 1] = 0.0;
        Ok(l)
    }
}

/// Prompt-hash logits: varied but deterministic scores.
pub struct HashLogits;

impl NumeralLogitSource for HashLogits {
    fn backend_id(&self) -> &str {
        "mock-logits-hash"
    }

    fn logits(&self, prompt: &str) -> Result<[f64; 6]> {
        let mut l = [0.0; 6];
        for (i, slot) in l.iter_mut().enumerate() {
            *slot = 4.0 * unit_from_parts(&[b"logit", prompt.as_bytes(), &[i as u8]]) - 2.0;
        }
        Ok(l)
    }
}

/// Whether the mock's logprobs depend on the conditioning context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextSensitivity {
    /// Logprobs depend only on the continuation: a demonstration changes
    /// nothing, so every ICI is exactly zero.
    Free,
    /// Logprobs depend on (context, continuation).
    Aware,
}

/// Logprob mock: per-token pseudo-random logprobs in (-2.5, -0.05], hashed
/// from the request. Tokenization is whitespace splitting.
pub struct HashLogprob {
    sensitivity: ContextSensitivity,
    id: String,
    pub calls: CallCounter,
}

impl HashLogprob {
    pub fn new(sensitivity: ContextSensitivity) -> Self {
        let id = match sensitivity {
            ContextSensitivity::Free => "mock-logprob-ctxfree",
            ContextSensitivity::Aware => "mock-logprob-ctxaware",
        };
        HashLogprob {
            sensitivity,
            id: id.to_string(),
            calls: CallCounter::default(),
        }
    }
}

impl LogprobBackend for HashLogprob {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn score(&self, context: &str, continuation: &str) -> Result<ScoredTokens> {
        self.calls.bump();
        let tokens: Vec<String> = continuation.split_whitespace().map(str::to_string).collect();
        let ctx: &[u8] = match self.sensitivity {
            ContextSensitivity::Free => b"",
            ContextSensitivity::Aware => context.as_bytes(),
        };
        let logprobs = tokens
            .iter()
            .enumerate()
            .map(|(j, tok)| {
                let u = unit_from_parts(&[
                    self.id.as_bytes(),
                    ctx,
                    continuation.as_bytes(),
                    tok.as_bytes(),
                    &(j as u64).to_le_bytes(),
                ]);
                -(0.05 + 2.45 * u)
            })
            .collect();
        Ok(ScoredTokens {
            tokens,
            logprobs,
            truncated: false,
        })
    }
}

/// One rule of a table-driven logprob fixture.
#[derive(Debug, Clone, Deserialize)]
pub struct TableRule {
    pub name: String,
    /// Matches the empty context when set.
    #[serde(default)]
    pub context_empty: bool,
    /// Matches contexts containing this substring.
    #[serde(default)]
    pub context_contains: Option<String>,
    /// Additionally requires the continuation to contain this substring.
    #[serde(default)]
    pub continuation_contains: Option<String>,
    /// Per-token logprobs, applied cyclically over the continuation tokens.
    pub logprobs: Vec<f64>,
}

impl TableRule {
    fn matches(&self, context: &str, continuation: &str) -> bool {
        if self.context_empty && !context.is_empty() {
            return false;
        }
        if let Some(sub) = &self.context_contains {
            if !context.contains(sub.as_str()) {
                return false;
            }
        }
        if let Some(sub) = &self.continuation_contains {
            if !continuation.contains(sub.as_str()) {
                return false;
            }
        }
        true
    }
}

/// Table-driven logprob backend loaded from a fixture file: the first rule
/// matching (context, continuation) supplies the per-token logprobs.
pub struct TableLogprob {
    rules: Vec<TableRule>,
    id: String,
    pub calls: CallCounter,
}

impl TableLogprob {
    pub fn new(rules: Vec<TableRule>) -> Self {
        TableLogprob {
            rules,
            id: "mock-logprob-table".to_string(),
            calls: CallCounter::default(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let rules: Vec<TableRule> = serde_json::from_slice(&bytes)?;
        Ok(Self::new(rules))
    }
}

impl LogprobBackend for TableLogprob {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn score(&self, context: &str, continuation: &str) -> Result<ScoredTokens> {
        self.calls.bump();
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(context, continuation))
            .ok_or_else(|| {
                Error::backend(&self.id, "no table rule matches the request")
            })?;
        if rule.logprobs.is_empty() {
            return Err(Error::backend(
                &self.id,
                format!("rule {:?} has an empty logprob row", rule.name),
            ));
        }
        let tokens: Vec<String> = continuation.split_whitespace().map(str::to_string).collect();
        let logprobs = (0..tokens.len())
            .map(|j| rule.logprobs[j % rule.logprobs.len()])
            .collect();
        Ok(ScoredTokens {
            tokens,
            logprobs,
            truncated: false,
        })
    }
}

/// Judge that always scores by position, regardless of content. Pure position
/// bias: the two-order protocol must cancel it into ties.
pub struct PositionJudge {
    pub first_score: f64,
    pub second_score: f64,
    pub calls: CallCounter,
}

impl PositionJudge {
    pub fn new(first_score: f64, second_score: f64) -> Self {
        PositionJudge {
            first_score,
            second_score,
            calls: CallCounter::default(),
        }
    }
}

impl JudgeBackend for PositionJudge {
    fn backend_id(&self) -> &str {
        "mock-judge-position"
    }

    fn judge(&self, _q: &str, _a: &str, _b: &str) -> Result<JudgeReply> {
        self.calls.bump();
        Ok(JudgeReply {
            score_first: self.first_score,
            score_second: self.second_score,
            rationale: "position preference".to_string(),
        })
    }
}

/// Judge that scores each answer by its length, independent of position.
pub struct LengthJudge {
    pub calls: CallCounter,
}

impl LengthJudge {
    pub fn new() -> Self {
        LengthJudge {
            calls: CallCounter::default(),
        }
    }

    fn score(answer: &str) -> f64 {
        1.0 + 9.0 * (answer.chars().count().min(900) as f64) / 900.0
    }
}

impl Default for LengthJudge {
    fn default() -> Self {
        Self::new()
    }
}

impl JudgeBackend for LengthJudge {
    fn backend_id(&self) -> &str {
        "mock-judge-length"
    }

    fn judge(&self, _q: &str, a: &str, b: &str) -> Result<JudgeReply> {
        self.calls.bump();
        Ok(JudgeReply {
            score_first: Self::score(a),
            score_second: Self::score(b),
            rationale: "longer is better".to_string(),
        })
    }
}

/// Judge scoring each answer by a content hash of (question, answer):
/// position-independent, deterministic, and varied. Identical answer pairs
/// therefore always tie.
pub struct HashJudge {
    pub calls: CallCounter,
}

impl HashJudge {
    pub fn new() -> Self {
        HashJudge {
            calls: CallCounter::default(),
        }
    }

    fn score(question: &str, answer: &str) -> f64 {
        let u = unit_from_parts(&[b"judge", question.as_bytes(), answer.as_bytes()]);
        1.0 + (u * 10.0).floor().min(9.0)
    }
}

impl Default for HashJudge {
    fn default() -> Self {
        Self::new()
    }
}

impl JudgeBackend for HashJudge {
    fn backend_id(&self) -> &str {
        "mock-judge-hash"
    }

    fn judge(&self, q: &str, a: &str, b: &str) -> Result<JudgeReply> {
        self.calls.bump();
        Ok(JudgeReply {
            score_first: Self::score(q, a),
            score_second: Self::score(q, b),
            rationale: "content-hash scores".to_string(),
        })
    }
}

/// Judge scripted per (question, first answer); used to pin exact verdict
/// sequences in tests.
pub struct ScriptedJudge {
    script: HashMap<(String, String), (f64, f64)>,
    pub calls: CallCounter,
}

impl ScriptedJudge {
    pub fn new(entries: impl IntoIterator<Item = ((String, String), (f64, f64))>) -> Self {
        ScriptedJudge {
            script: entries.into_iter().collect(),
            calls: CallCounter::default(),
        }
    }
}

impl JudgeBackend for ScriptedJudge {
    fn backend_id(&self) -> &str {
        "mock-judge-scripted"
    }

    fn judge(&self, q: &str, a: &str, _b: &str) -> Result<JudgeReply> {
        self.calls.bump();
        let (s1, s2) = self
            .script
            .get(&(q.to_string(), a.to_string()))
            .copied()
            .ok_or_else(|| Error::backend("mock-judge-scripted", format!("no script for {q:?}")))?;
        Ok(JudgeReply {
            score_first: s1,
            score_second: s2,
            rationale: "scripted".to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedding_is_deterministic_and_unit() {
        let be = HashEmbedding::default_dim();
        let a = be.vector_for("Say hi");
        let b = be.vector_for("Say hi");
        let c = be.vector_for("Say bye");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_texts_identical_vectors_via_embed() {
        let be = HashEmbedding::default_dim();
        let out = be
            .embed(&["same".to_string(), "same".to_string()])
            .unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn length_complexity_spans_range() {
        let be = LengthComplexity::new();
        let lo = be.complexity("").unwrap();
        assert!((lo - 1.0).abs() < 1e-12);
        let hi = be.complexity(&"x".repeat(96)).unwrap();
        assert!((hi - 6.0).abs() < 1e-12);
        for n in 0..300 {
            let s = be.complexity(&"y".repeat(n)).unwrap();
            assert!((1.0..=6.0).contains(&s));
        }
    }

    #[test]
    fn table_logprob_cycles_rows() {
        let rules = vec![TableRule {
            name: "any".into(),
            context_empty: false,
            context_contains: None,
            continuation_contains: None,
            logprobs: vec![-1.0, -2.0],
        }];
        let be = TableLogprob::new(rules);
        let out = be.score("ctx", "a b c").unwrap();
        assert_eq!(out.logprobs, vec![-1.0, -2.0, -1.0]);
    }

    #[test]
    fn table_logprob_rule_precedence() {
        let rules = vec![
            TableRule {
                name: "empty-ctx".into(),
                context_empty: true,
                context_contains: None,
                continuation_contains: None,
                logprobs: vec![-0.5],
            },
            TableRule {
                name: "fallback".into(),
                context_empty: false,
                context_contains: None,
                continuation_contains: None,
                logprobs: vec![-1.5],
            },
        ];
        let be = TableLogprob::new(rules);
        assert_eq!(be.score("", "x").unwrap().logprobs, vec![-0.5]);
        assert_eq!(be.score("c", "x").unwrap().logprobs, vec![-1.5]);
    }

    #[test]
    fn context_free_mock_ignores_context() {
        let be = HashLogprob::new(ContextSensitivity::Free);
        let a = be.score("one context", "the continuation").unwrap();
        let b = be.score("another context", "the continuation").unwrap();
        assert_eq!(a.logprobs, b.logprobs);
        let aware = HashLogprob::new(ContextSensitivity::Aware);
        let c = aware.score("one context", "the continuation").unwrap();
        let d = aware.score("another context", "the continuation").unwrap();
        assert_ne!(c.logprobs, d.logprobs);
    }
}
