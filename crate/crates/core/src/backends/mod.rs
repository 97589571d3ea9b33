//! Backend interfaces for the four external model services: sentence
//! embedding, instruction complexity, token logprobs, and pairwise judging.
//!
//! All backends are deterministic for a fixed `backend_id` (the id includes
//! the model identity), which is what makes response caching sound.

pub mod http;
pub mod mock;

use crate::error::Result;

pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Embed a batch of texts; output order matches input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Reward-model interface estimating instruction complexity on a 1-6 scale.
pub trait ComplexityBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn complexity(&self, instruction: &str) -> Result<f64>;
}

/// Logprobs for continuation tokens only, conditioned on `context` plus the
/// preceding continuation tokens.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredTokens {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Set when the adapter truncated the context to fit a length budget.
    pub truncated: bool,
}

pub trait LogprobBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn score(&self, context: &str, continuation: &str) -> Result<ScoredTokens>;
}

/// Scores assigned by the judge in presentation order, plus its rationale.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JudgeReply {
    pub score_first: f64,
    pub score_second: f64,
    pub rationale: String,
}

pub trait JudgeBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Judge two answers to `question` in the presented order.
    fn judge(&self, question: &str, answer_first: &str, answer_second: &str)
        -> Result<JudgeReply>;
}

/// Raw logits for the numeral tokens "1".."6", used by the expected-score
/// complexity decoder.
pub trait NumeralLogitSource: Send + Sync {
    fn backend_id(&self) -> &str;

    fn logits(&self, prompt: &str) -> Result<[f64; 6]>;
}

/// Prompt fed to the complexity reward model; the numeral logits are read at
/// the position following "##Complexity:".
pub const COMPLEXITY_SYSTEM_PROMPT: &str =
    "You are a helpful assistant. Please identify the complexity score of the following user query.";

pub fn complexity_user_prompt(instruction: &str) -> String {
    format!("##Query:\n{instruction}\n\n##Complexity:")
}

/// Decode an expected complexity score from numeral logits:
/// sum over k of k * softmax(logits)[k].
pub fn expected_score(logits: &[f64; 6]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(i, e)| (i as f64 + 1.0) * e / z)
        .sum()
}

/// ComplexityBackend adapter over a numeral-logit source.
pub struct ExpectedScoreComplexity<S: NumeralLogitSource> {
    source: S,
    id: String,
}

impl<S: NumeralLogitSource> ExpectedScoreComplexity<S> {
    pub fn new(source: S) -> Self {
        let id = format!("expected-score:{}", source.backend_id());
        ExpectedScoreComplexity { source, id }
    }
}

impl<S: NumeralLogitSource> ComplexityBackend for ExpectedScoreComplexity<S> {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complexity(&self, instruction: &str) -> Result<f64> {
        let prompt = complexity_user_prompt(instruction);
        let logits = self.source.logits(&prompt)?;
        Ok(expected_score(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_decode_to_midpoint() {
        // Mean of 1..=6 under a uniform softmax.
        assert!((expected_score(&[0.0; 6]) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn point_mass_decodes_to_that_numeral() {
        let mut logits = [-1e9; 6];
        logits[5] = 0.0;
        assert!((expected_score(&logits) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn expected_score_stays_in_range() {
        let logits = [0.3, -1.2, 2.5, 0.0, -0.7, 1.1];
        let s = expected_score(&logits);
        assert!((1.0..=6.0).contains(&s));
    }
}
