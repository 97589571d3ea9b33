//! Perplexity and instruction-following difficulty over a token-logprob
//! backend, with content-addressed response caching.
//!
//! Only response tokens are ever scored; the prompt is context. Caching the
//! raw backend responses (not derived values) keeps cached and fresh results
//! bit-identical and makes call accounting exact.

use serde::{Deserialize, Serialize};

use crate::backends::{LogprobBackend, ScoredTokens};
use crate::cache::{cached, CallStats, DiskCache};
use crate::corpus::{Corpus, PromptTemplate, Sample};
use crate::error::{Error, Result};

/// Context used for the unconditioned perplexity PPL(y).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnconditionedContext {
    /// The empty string: the literal reading of PPL(y). The backend prepends
    /// its own begin marker.
    Empty,
    /// A fixed remnant such as "### Response:\n", for comparison runs.
    Text(String),
}

impl UnconditionedContext {
    fn as_str(&self) -> &str {
        match self {
            UnconditionedContext::Empty => "",
            UnconditionedContext::Text(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub ppl: f64,
    pub token_count: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub sample_id: String,
    pub ppl_conditioned: f64,
    pub ppl_unconditioned: f64,
    /// PPL(y|x) / PPL(y); larger means the instruction helps less.
    pub ifd: f64,
    pub response_token_count: usize,
    pub truncated: bool,
}

#[derive(Serialize)]
struct LogprobKey<'a> {
    op: &'static str,
    backend: &'a str,
    context: &'a str,
    continuation: &'a str,
}

const LOGPROB_RETRIES: usize = 3;

pub struct DifficultyScorer {
    backend: Box<dyn LogprobBackend>,
    cache: Option<DiskCache>,
    stats: CallStats,
    unconditioned: UnconditionedContext,
}

impl DifficultyScorer {
    pub fn new(backend: Box<dyn LogprobBackend>) -> Self {
        DifficultyScorer {
            backend,
            cache: None,
            stats: CallStats::default(),
            unconditioned: UnconditionedContext::Empty,
        }
    }

    pub fn with_cache(backend: Box<dyn LogprobBackend>, cache: DiskCache) -> Self {
        DifficultyScorer {
            backend,
            cache: Some(cache),
            stats: CallStats::default(),
            unconditioned: UnconditionedContext::Empty,
        }
    }

    pub fn unconditioned_context(mut self, ctx: UnconditionedContext) -> Self {
        self.unconditioned = ctx;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    fn scored(&self, context: &str, continuation: &str) -> Result<ScoredTokens> {
        let fetch = || {
            let mut last = None;
            for attempt in 0..LOGPROB_RETRIES {
                match self.backend.score(context, continuation) {
                    Ok(s) => return Ok(s),
                    Err(e) => {
                        last = Some(e);
                        if attempt + 1 < LOGPROB_RETRIES {
                            std::thread::sleep(std::time::Duration::from_millis(
                                20 * (attempt as u64 + 1),
                            ));
                        }
                    }
                }
            }
            Err(last.expect("at least one attempt"))
        };
        let scored = match &self.cache {
            Some(cache) => {
                let key = LogprobKey {
                    op: "logprob",
                    backend: self.backend.backend_id(),
                    context,
                    continuation,
                };
                cached(cache, &self.stats, &key, fetch)?
            }
            None => {
                let s = fetch()?;
                self.stats.record_miss();
                s
            }
        };
        if scored.tokens.len() != scored.logprobs.len() {
            return Err(Error::backend(
                self.backend.backend_id(),
                "tokens and logprobs have different lengths",
            ));
        }
        if scored.logprobs.iter().any(|lp| !lp.is_finite()) {
            return Err(Error::backend(
                self.backend.backend_id(),
                "non-finite logprob in response",
            ));
        }
        Ok(scored)
    }

    /// PPL = exp(-(1/N) * sum of continuation-token logprobs).
    pub fn perplexity(&self, context: &str, continuation: &str) -> Result<Perplexity> {
        if continuation.is_empty() {
            return Err(Error::InvalidArgument("empty continuation".into()));
        }
        let scored = self.scored(context, continuation)?;
        let n = scored.logprobs.len();
        if n == 0 {
            return Err(Error::EmptyContinuation);
        }
        let mean: f64 = scored.logprobs.iter().sum::<f64>() / n as f64;
        let ppl = (-mean).exp();
        if !ppl.is_finite() || ppl <= 0.0 {
            return Err(Error::backend(
                self.backend.backend_id(),
                format!("degenerate perplexity {ppl}"),
            ));
        }
        Ok(Perplexity {
            ppl,
            token_count: n,
            truncated: scored.truncated,
        })
    }

    /// IFD(y|x) = PPL(y|x) / PPL(y), both over the sample's response tokens.
    pub fn ifd(&self, template: &PromptTemplate, sample: &Sample) -> Result<DifficultyRecord> {
        let prompt = template.render_zero_shot(sample)?;
        let conditioned = self.perplexity(&prompt, &sample.response)?;
        let unconditioned =
            self.perplexity(self.unconditioned.as_str(), &sample.response)?;
        Ok(DifficultyRecord {
            sample_id: sample.id.clone(),
            ppl_conditioned: conditioned.ppl,
            ppl_unconditioned: unconditioned.ppl,
            ifd: conditioned.ppl / unconditioned.ppl,
            response_token_count: conditioned.token_count,
            truncated: conditioned.truncated || unconditioned.truncated,
        })
    }

    /// IFD of the target's response when `demo` is prepended as a one-shot
    /// demonstration. The denominator is the same PPL(y) as [`Self::ifd`],
    /// served from cache rather than recomputed.
    pub fn ifd_with_demo(
        &self,
        template: &PromptTemplate,
        demo: &Sample,
        target: &Sample,
    ) -> Result<f64> {
        let prompt = template.render_one_shot(demo, target)?;
        let conditioned = self.perplexity(&prompt, &target.response)?;
        let unconditioned =
            self.perplexity(self.unconditioned.as_str(), &target.response)?;
        Ok(conditioned.ppl / unconditioned.ppl)
    }

    /// Mean over samples of -log p(y_i | x_i): per-sample logprob sums,
    /// corpus-level mean.
    pub fn corpus_nll(&self, template: &PromptTemplate, corpus: &Corpus) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        let mut total = 0.0;
        for sample in corpus.samples() {
            let prompt = template.render_zero_shot(sample)?;
            let scored = self.scored(&prompt, &sample.response)?;
            if scored.logprobs.is_empty() {
                return Err(Error::EmptyContinuation);
            }
            total += -scored.logprobs.iter().sum::<f64>();
        }
        Ok(total / corpus.len() as f64)
    }
}
