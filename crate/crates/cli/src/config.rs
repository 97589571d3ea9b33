//! Declarative pipeline configuration: one TOML document, env-var overrides
//! for backend endpoints and the cache directory, relative paths resolved
//! against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use curate_core::backends::http::{
    EmbeddingWire, HttpComplexity, HttpEmbedding, HttpJudge, HttpLogprob, HttpNumeralLogits,
    LogprobWire,
};
use curate_core::backends::mock::{
    ContextSensitivity, HashEmbedding, HashJudge, HashLogprob, LengthComplexity, LengthJudge,
    PositionJudge, TableLogprob,
};
use curate_core::backends::{
    EmbeddingBackend, ComplexityBackend, ExpectedScoreComplexity, JudgeBackend, LogprobBackend,
};
use curate_core::corpus::{IdPolicy, PromptTemplate};
use curate_core::difficulty::UnconditionedContext;
use curate_core::embedding::EmbedTextMode;

fn default_n_neighbors() -> usize {
    32
}
fn default_k_clusters() -> usize {
    5
}
fn default_tau() -> f64 {
    0.9
}
fn default_max_in_flight() -> usize {
    1
}
fn default_char_budget() -> usize {
    8_000
}
fn default_embed_batch() -> usize {
    32
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub corpus: PathBuf,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    #[serde(default = "default_id_policy")]
    pub id_policy: IdPolicy,
    #[serde(default = "default_n_neighbors")]
    pub n_neighbors: usize,
    #[serde(default = "default_k_clusters")]
    pub k_clusters: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub backfill: bool,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_char_budget")]
    pub char_budget: usize,
    #[serde(default = "default_embed_batch")]
    pub embed_batch: usize,
    #[serde(default)]
    pub drop_ifd_above: Option<f64>,
    /// Context for the unconditioned perplexity; empty string by default.
    #[serde(default)]
    pub unconditioned_context: Option<String>,
    #[serde(default = "default_embed_text")]
    pub embed_text: EmbedTextMode,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub template: TemplateConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub judge: Option<JudgeStageConfig>,
}

fn default_id_policy() -> IdPolicy {
    IdPolicy::UseField
}

fn default_embed_text() -> EmbedTextMode {
    EmbedTextMode::ZeroShotPrompt
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    /// "alpaca" (default) or "custom".
    #[serde(default)]
    pub choice: Option<String>,
    #[serde(default)]
    pub zero_shot_form: Option<String>,
    #[serde(default)]
    pub one_shot_form: Option<String>,
    #[serde(default)]
    pub response_prefix: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default)]
    pub embed: BackendConfig,
    #[serde(default)]
    pub logprob: BackendConfig,
    #[serde(default)]
    pub complexity: BackendConfig,
    #[serde(default)]
    pub judge: BackendConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// "mock" (default), "table" (logprob only), or "http".
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Wire shape: embed "native"|"embeddings_api"; logprob
    /// "native"|"completions_echo"; complexity "native"|"numeral_logits".
    #[serde(default)]
    pub wire: Option<String>,
    /// Logprob-table fixture path for mode = "table".
    #[serde(default)]
    pub table: Option<PathBuf>,
    /// Left-truncation budget for logprob contexts, in chars.
    #[serde(default)]
    pub max_context_chars: Option<usize>,
    /// Mock flavor, e.g. logprob "context_free", judge "position"|"length".
    #[serde(default)]
    pub flavor: Option<String>,
}

fn default_mode() -> String {
    "mock".to_string()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: default_mode(),
            endpoint: None,
            model: None,
            wire: None,
            table: None,
            max_context_chars: None,
            flavor: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeStageConfig {
    pub eval_corpus: PathBuf,
    pub answers_a: PathBuf,
    pub answers_b: PathBuf,
}

/// Validated, path-resolved configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub raw: RawConfig,
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub template: PromptTemplate,
    pub budget: curate_core::select::Budget,
    pub judge_stage: Option<ResolvedJudgeStage>,
}

#[derive(Debug, Clone)]
pub struct ResolvedJudgeStage {
    pub eval_corpus: PathBuf,
    pub answers_a: PathBuf,
    pub answers_b: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut raw: RawConfig =
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    if let Ok(dir) = std::env::var("CURATE_CACHE_DIR") {
        raw.cache_dir = PathBuf::from(dir);
    }
    for (var, slot) in [
        ("CURATE_EMBED_ENDPOINT", &mut raw.backends.embed),
        ("CURATE_LOGPROB_ENDPOINT", &mut raw.backends.logprob),
        ("CURATE_COMPLEXITY_ENDPOINT", &mut raw.backends.complexity),
        ("CURATE_JUDGE_ENDPOINT", &mut raw.backends.judge),
    ] {
        if let Ok(endpoint) = std::env::var(var) {
            slot.endpoint = Some(endpoint);
        }
    }

    if !(raw.tau > 0.0 && raw.tau <= 1.0) {
        bail!("tau must lie in (0, 1], got {}", raw.tau);
    }
    if raw.k_clusters == 0 || raw.n_neighbors == 0 {
        bail!("n_neighbors and k_clusters must be positive");
    }
    if raw.k_clusters > raw.n_neighbors {
        bail!(
            "k_clusters ({}) cannot exceed n_neighbors ({})",
            raw.k_clusters,
            raw.n_neighbors
        );
    }
    if raw.embed_batch == 0 {
        bail!("embed_batch must be positive");
    }

    let budget = match (raw.budget.k, raw.budget.fraction) {
        (Some(k), None) => curate_core::select::Budget::K(k),
        (None, Some(f)) => {
            if !(f > 0.0 && f <= 1.0) {
                bail!("budget.fraction must lie in (0, 1], got {f}");
            }
            curate_core::select::Budget::Fraction(f)
        }
        _ => bail!("exactly one of budget.k and budget.fraction must be set"),
    };

    let template = build_template(&raw.template)?;

    let judge_stage = raw.judge.as_ref().map(|j| ResolvedJudgeStage {
        eval_corpus: resolve(&base, &j.eval_corpus),
        answers_a: resolve(&base, &j.answers_a),
        answers_b: resolve(&base, &j.answers_b),
    });

    Ok(PipelineConfig {
        corpus: resolve(&base, &raw.corpus),
        output_dir: resolve(&base, &raw.output_dir),
        cache_dir: resolve(&base, &raw.cache_dir),
        template,
        budget,
        judge_stage,
        raw: RawConfig {
            backends: BackendsConfig {
                logprob: BackendConfig {
                    table: raw.backends.logprob.table.as_ref().map(|t| resolve(&base, t)),
                    ..raw.backends.logprob.clone()
                },
                ..raw.backends.clone()
            },
            ..raw
        },
    })
}

fn build_template(cfg: &TemplateConfig) -> anyhow::Result<PromptTemplate> {
    match cfg.choice.as_deref().unwrap_or("alpaca") {
        "alpaca" => Ok(PromptTemplate::alpaca()),
        "custom" => {
            let zero = cfg
                .zero_shot_form
                .as_ref()
                .ok_or_else(|| anyhow!("custom template requires zero_shot_form"))?;
            let prefix = cfg.response_prefix.clone().unwrap_or_default();
            match &cfg.one_shot_form {
                Some(one) => PromptTemplate::new(zero.clone(), one.clone(), prefix)
                    .map_err(|e| anyhow!("invalid template: {e}")),
                None => PromptTemplate::from_zero_shot(zero, &prefix)
                    .map_err(|e| anyhow!("invalid template: {e}")),
            }
        }
        other => bail!("unknown template choice {other:?}"),
    }
}

impl PipelineConfig {
    pub fn unconditioned(&self) -> UnconditionedContext {
        match &self.raw.unconditioned_context {
            None => UnconditionedContext::Empty,
            Some(t) if t.is_empty() => UnconditionedContext::Empty,
            Some(t) => UnconditionedContext::Text(t.clone()),
        }
    }

    pub fn embed_backend(&self) -> anyhow::Result<Box<dyn EmbeddingBackend>> {
        let cfg = &self.raw.backends.embed;
        match cfg.mode.as_str() {
            "mock" => Ok(Box::new(HashEmbedding::default_dim())),
            "http" => {
                let (endpoint, model) = http_fields(cfg, "backends.embed")?;
                let wire = match cfg.wire.as_deref().unwrap_or("native") {
                    "native" => EmbeddingWire::Native,
                    "embeddings_api" => EmbeddingWire::EmbeddingsApi,
                    w => bail!("unknown embed wire {w:?}"),
                };
                Ok(Box::new(HttpEmbedding::new(endpoint, model, wire)))
            }
            m => bail!("unknown embed backend mode {m:?}"),
        }
    }

    pub fn logprob_backend(&self) -> anyhow::Result<Box<dyn LogprobBackend>> {
        let cfg = &self.raw.backends.logprob;
        match cfg.mode.as_str() {
            "mock" => match cfg.flavor.as_deref().unwrap_or("context_aware") {
                "context_aware" => Ok(Box::new(HashLogprob::new(ContextSensitivity::Aware))),
                "context_free" => Ok(Box::new(HashLogprob::new(ContextSensitivity::Free))),
                f => bail!("unknown logprob mock flavor {f:?}"),
            },
            "table" => {
                let table = cfg
                    .table
                    .as_ref()
                    .ok_or_else(|| anyhow!("backends.logprob.table path required"))?;
                Ok(Box::new(TableLogprob::from_path(table)?))
            }
            "http" => {
                let (endpoint, model) = http_fields(cfg, "backends.logprob")?;
                let wire = match cfg.wire.as_deref().unwrap_or("native") {
                    "native" => LogprobWire::Native,
                    "completions_echo" => LogprobWire::CompletionsEcho,
                    w => bail!("unknown logprob wire {w:?}"),
                };
                Ok(Box::new(HttpLogprob::new(
                    endpoint,
                    model,
                    wire,
                    cfg.max_context_chars,
                )))
            }
            m => bail!("unknown logprob backend mode {m:?}"),
        }
    }

    pub fn complexity_backend(&self) -> anyhow::Result<Box<dyn ComplexityBackend>> {
        let cfg = &self.raw.backends.complexity;
        match cfg.mode.as_str() {
            "mock" => Ok(Box::new(LengthComplexity::new())),
            "http" => {
                let (endpoint, model) = http_fields(cfg, "backends.complexity")?;
                match cfg.wire.as_deref().unwrap_or("native") {
                    "native" => Ok(Box::new(HttpComplexity::new(endpoint, model))),
                    "numeral_logits" => Ok(Box::new(ExpectedScoreComplexity::new(
                        HttpNumeralLogits::new(endpoint, model),
                    ))),
                    w => bail!("unknown complexity wire {w:?}"),
                }
            }
            m => bail!("unknown complexity backend mode {m:?}"),
        }
    }

    pub fn judge_backend(&self) -> anyhow::Result<Box<dyn JudgeBackend>> {
        let cfg = &self.raw.backends.judge;
        match cfg.mode.as_str() {
            "mock" => match cfg.flavor.as_deref().unwrap_or("hash") {
                "hash" => Ok(Box::new(HashJudge::new())),
                "length" => Ok(Box::new(LengthJudge::new())),
                "position" => Ok(Box::new(PositionJudge::new(9.0, 3.0))),
                f => bail!("unknown judge mock flavor {f:?}"),
            },
            "http" => {
                let (endpoint, model) = http_fields(cfg, "backends.judge")?;
                Ok(Box::new(HttpJudge::new(endpoint, model)))
            }
            m => bail!("unknown judge backend mode {m:?}"),
        }
    }

    /// Stable identifiers of the configured backends, for manifests and
    /// stage fingerprints.
    pub fn backend_ids(&self) -> anyhow::Result<BTreeMap<String, String>> {
        let mut ids = BTreeMap::new();
        ids.insert("embed".into(), self.embed_backend()?.backend_id().into());
        ids.insert("logprob".into(), self.logprob_backend()?.backend_id().into());
        ids.insert(
            "complexity".into(),
            self.complexity_backend()?.backend_id().into(),
        );
        ids.insert("judge".into(), self.judge_backend()?.backend_id().into());
        Ok(ids)
    }
}

fn http_fields<'a>(cfg: &'a BackendConfig, what: &str) -> anyhow::Result<(&'a str, &'a str)> {
    let endpoint = cfg
        .endpoint
        .as_deref()
        .ok_or_else(|| anyhow!("{what}.endpoint required for http mode"))?;
    let model = cfg
        .model
        .as_deref()
        .ok_or_else(|| anyhow!("{what}.model required for http mode"))?;
    Ok((endpoint, model))
}

/// Answer file: one {"id", "answer"} record per line.
#[derive(Debug, Deserialize, Serialize)]
pub struct AnswerRecord {
    pub id: String,
    pub answer: String,
}

pub fn load_answers(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read answers {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnswerRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad answer record", path.display(), lineno + 1))?;
        out.insert(rec.id, rec.answer);
    }
    Ok(out)
}
