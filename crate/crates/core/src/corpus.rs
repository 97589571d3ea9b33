//! Instruction corpus loading, validation, and prompt templating.
//!
//! The canonical text forms produced here (zero-shot and one-shot prompts)
//! are what every downstream scorer consumes, so rendering must be pure and
//! byte-stable across runs.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hash::{sha256_hex, short_hash};

/// One instruction(+optional input)-response record with a stable id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    pub input: Option<String>,
    pub response: String,
    /// Extra source fields, preserved verbatim for round-tripping.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, Value>,
}

/// An ordered corpus plus a digest of the exact input bytes.
#[derive(Debug, Clone)]
pub struct Corpus {
    samples: Vec<Sample>,
    source_digest: String,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdPolicy {
    /// Use the source `id` field when present, hash the content otherwise.
    UseField,
    /// Always derive the id from the record content.
    Hash,
}

/// Source record shape: line-delimited JSON with `instruction` (required),
/// `input` (optional), `output` (required), `id` (optional).
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    instruction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    output: String,
    #[serde(flatten)]
    extra: serde_json::Map<String, Value>,
}

/// Deterministic content id for a record: hash of (instruction, input, response).
pub fn content_id(instruction: &str, input: Option<&str>, response: &str) -> String {
    let canonical =
        serde_json::to_string(&serde_json::json!([instruction, input, response])).expect("json");
    short_hash(canonical.as_bytes())
}

pub fn load_corpus(path: impl AsRef<Path>, id_policy: IdPolicy) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source_digest = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("not utf-8: {e}"),
    })?;

    let mut samples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                msg: e.to_string(),
            })?;
        if raw.instruction.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                msg: "empty instruction".into(),
            });
        }
        if raw.output.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: lineno,
                msg: "empty output".into(),
            });
        }
        // Alpaca-style sources mark "no input" as the empty string.
        let input = raw.input.filter(|s| !s.is_empty());
        let id = match (id_policy, &raw.id) {
            (IdPolicy::UseField, Some(id)) if !id.is_empty() => id.clone(),
            _ => content_id(&raw.instruction, input.as_deref(), &raw.output),
        };
        if let Some(&first_line) = seen.get(&id) {
            return Err(Error::DuplicateId {
                id,
                first_line,
                second_line: lineno,
            });
        }
        seen.insert(id.clone(), lineno);
        samples.push(Sample {
            id,
            instruction: raw.instruction,
            input,
            response: raw.output,
            meta: raw.extra,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    Ok(Corpus::new(samples, source_digest))
}

/// Serialize samples back to the source record format, one per line.
pub fn write_samples<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in samples {
        let raw = RawRecord {
            id: Some(s.id.clone()),
            instruction: s.instruction.clone(),
            input: s.input.clone(),
            output: s.response.clone(),
            extra: s.meta.clone(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, source_digest: String) -> Self {
        let by_id = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        Corpus {
            samples,
            source_digest,
            by_id,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    pub fn require(&self, id: &str) -> Result<&Sample> {
        self.get(id).ok_or_else(|| Error::UnknownId { id: id.into() })
    }

    /// Ids whose rendered prompt plus response exceed `char_budget` characters.
    /// Oversize records are flagged, never dropped; truncation belongs to the
    /// scorer backend, which owns tokenization.
    pub fn oversize_ids(&self, template: &PromptTemplate, char_budget: usize) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for s in &self.samples {
            let prompt = template.render_zero_shot(s)?;
            if prompt.chars().count() + s.response.chars().count() > char_budget {
                out.push(s.id.clone());
            }
        }
        Ok(out)
    }
}

const PLACEHOLDERS: [&str; 4] = ["instruction", "input", "demo_prompt", "demo_response"];

/// Prompt template with `{instruction}` / `{input}` placeholders; the
/// `### Input:` paragraph is dropped entirely when a sample has no input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub zero_shot_form: String,
    pub one_shot_form: String,
    /// Prepended to the demonstration response in one-shot renders.
    pub response_prefix: String,
}

pub const ALPACA_ZERO_SHOT: &str = "Below is an instruction that describes a task. \
Write a response that appropriately completes the request.\n\n\
### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:\n";

impl PromptTemplate {
    /// The standard Alpaca instruction template. One-shot prompts render the
    /// demonstration with the same zero-shot form, append its response, then
    /// a blank line, then the target's zero-shot prompt.
    pub fn alpaca() -> Self {
        Self::from_zero_shot(ALPACA_ZERO_SHOT, "").expect("builtin template is valid")
    }

    /// Build a template from a zero-shot form, deriving the one-shot form as
    /// demo prompt + demo response + blank line + target prompt.
    pub fn from_zero_shot(zero_shot_form: &str, response_prefix: &str) -> Result<Self> {
        let t = PromptTemplate {
            zero_shot_form: zero_shot_form.to_string(),
            one_shot_form: format!("{{demo_prompt}}{{demo_response}}\n\n{zero_shot_form}"),
            response_prefix: response_prefix.to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn new(
        zero_shot_form: String,
        one_shot_form: String,
        response_prefix: String,
    ) -> Result<Self> {
        let t = PromptTemplate {
            zero_shot_form,
            one_shot_form,
            response_prefix,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if count_placeholder(&self.zero_shot_form, "instruction") != 1 {
            return Err(Error::Template(
                "zero_shot_form must contain {instruction} exactly once".into(),
            ));
        }
        if count_placeholder(&self.zero_shot_form, "input") > 1 {
            return Err(Error::Template(
                "zero_shot_form may contain {input} at most once".into(),
            ));
        }
        // The one-shot form must embed the zero-shot placeholders exactly once
        // each, so the target's zero-shot rendering appears as a suffix block.
        for name in ["instruction", "input"] {
            let want = count_placeholder(&self.zero_shot_form, name);
            let got = count_placeholder(&self.one_shot_form, name);
            if want != got {
                return Err(Error::Template(format!(
                    "one_shot_form must contain {{{name}}} exactly {want} time(s), found {got}"
                )));
            }
        }
        for name in ["demo_prompt", "demo_response"] {
            if count_placeholder(&self.one_shot_form, name) != 1 {
                return Err(Error::Template(format!(
                    "one_shot_form must contain {{{name}}} exactly once"
                )));
            }
        }
        // The {input} block must be droppable without taking other
        // placeholders with it.
        for form in [&self.zero_shot_form, &self.one_shot_form] {
            for para in form.split("\n\n") {
                if has_placeholder(para, "input")
                    && PLACEHOLDERS
                        .iter()
                        .any(|p| *p != "input" && has_placeholder(para, p))
                {
                    return Err(Error::Template(
                        "{input} must occupy its own blank-line-delimited paragraph".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Render the prompt for a sample: `x = T(instruction, [input])`.
    pub fn render_zero_shot(&self, sample: &Sample) -> Result<String> {
        let form = prepare_form(&self.zero_shot_form, sample.input.is_some());
        if sample.input.is_some() && !has_placeholder(&form, "input") {
            return Err(Error::Template(format!(
                "sample {:?} has an input but the template has no {{input}} placeholder",
                sample.id
            )));
        }
        substitute(
            &form,
            &[
                ("instruction", sample.instruction.as_str()),
                ("input", sample.input.as_deref().unwrap_or("")),
            ],
        )
    }

    /// Render the one-shot prompt: demonstration block followed by the
    /// target's zero-shot prompt, which elicits the target response.
    pub fn render_one_shot(&self, demo: &Sample, target: &Sample) -> Result<String> {
        if demo.id == target.id {
            return Err(Error::SelfDemonstration {
                id: demo.id.clone(),
            });
        }
        let form = prepare_form(&self.one_shot_form, target.input.is_some());
        if target.input.is_some() && !has_placeholder(&form, "input") {
            return Err(Error::Template(format!(
                "sample {:?} has an input but the template has no {{input}} placeholder",
                target.id
            )));
        }
        let demo_prompt = self.render_zero_shot(demo)?;
        let demo_response = format!("{}{}", self.response_prefix, demo.response);
        substitute(
            &form,
            &[
                ("demo_prompt", demo_prompt.as_str()),
                ("demo_response", demo_response.as_str()),
                ("instruction", target.instruction.as_str()),
                ("input", target.input.as_deref().unwrap_or("")),
            ],
        )
    }
}

/// Drop the `{input}` paragraph (delimited by blank lines) when no input is
/// present, so the block disappears instead of rendering empty.
fn prepare_form(form: &str, has_input: bool) -> String {
    if has_input {
        return form.to_string();
    }
    form.split("\n\n")
        .filter(|para| !has_placeholder(para, "input"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn has_placeholder(text: &str, name: &str) -> bool {
    count_placeholder(text, name) > 0
}

fn count_placeholder(text: &str, name: &str) -> usize {
    text.matches(&format!("{{{name}}}")).count()
}

/// Single-pass placeholder substitution. Values are emitted verbatim and are
/// never re-scanned, so braces inside instruction text cannot trigger further
/// substitution. Unknown brace tokens are literal text.
fn substitute(form: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(form.len() + 64);
    let mut rest = form;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        if let Some(close) = tail.find('}') {
            let name = &tail[1..close];
            if PLACEHOLDERS.contains(&name) {
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => {
                        out.push_str(value);
                        rest = &tail[close + 1..];
                        continue 'outer;
                    }
                    None => {
                        return Err(Error::Template(format!(
                            "unresolved placeholder {{{name}}}"
                        )))
                    }
                }
            }
        }
        // Not a known placeholder: keep the brace as literal text.
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}
