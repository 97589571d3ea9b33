//! Embedding index: exact nearest-neighbor and cosine queries over sentence
//! embeddings, plus cached index construction from a backend.
//!
//! Vectors are stored exactly as the backend returned them — retrieval uses
//! raw l2 distance and weighting uses raw cosine, so re-normalizing here
//! would silently change the retrieval order for non-unit backends.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::EmbeddingBackend;
use crate::cache::{CallStats, DiskCache};
use crate::corpus::{Corpus, PromptTemplate};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    entries: BTreeMap<String, Vec<f64>>,
    dim: usize,
    backend_id: String,
}

/// Which text stands in for a sample in embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedTextMode {
    /// The full zero-shot prompt (instruction plus optional input), response
    /// excluded.
    ZeroShotPrompt,
    /// The bare instruction text.
    InstructionOnly,
}

/// The (id, text) pairs to embed for a corpus, in corpus order.
pub fn embedding_texts(
    corpus: &Corpus,
    template: &PromptTemplate,
    mode: EmbedTextMode,
) -> Result<Vec<(String, String)>> {
    corpus
        .samples()
        .iter()
        .map(|s| {
            let text = match mode {
                EmbedTextMode::ZeroShotPrompt => template.render_zero_shot(s)?,
                EmbedTextMode::InstructionOnly => s.instruction.clone(),
            };
            Ok((s.id.clone(), text))
        })
        .collect()
}

#[derive(Serialize)]
struct EmbedCacheKey<'a> {
    op: &'static str,
    backend: &'a str,
    text: &'a str,
}

const EMBED_RETRIES: usize = 3;

/// Embed every item through the backend, one vector per id. Vectors are
/// cached per (backend_id, text); a warm cache issues zero backend calls.
pub fn build_index(
    items: &[(String, String)],
    backend: &dyn EmbeddingBackend,
    batch_size: usize,
    cache: Option<(&DiskCache, &CallStats)>,
) -> Result<EmbeddingIndex> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut pending: Vec<&(String, String)> = Vec::new();

    if let Some((cache, stats)) = cache {
        for item in items {
            let key = EmbedCacheKey {
                op: "embed",
                backend: backend.backend_id(),
                text: &item.1,
            };
            match cache.get::<Vec<f64>>(&DiskCache::key_for(&key))? {
                Some(v) => {
                    stats.record_hit();
                    vectors.insert(item.0.clone(), v);
                }
                None => pending.push(item),
            }
        }
    } else {
        pending.extend(items.iter());
    }

    for (batch_no, chunk) in pending.chunks(batch_size).enumerate() {
        let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let out = embed_with_retry(backend, &texts, batch_no)?;
        if out.len() != texts.len() {
            return Err(Error::backend(
                backend.backend_id(),
                format!(
                    "batch {batch_no}: expected {} vectors, got {}",
                    texts.len(),
                    out.len()
                ),
            ));
        }
        for ((id, text), v) in chunk.iter().zip(out) {
            if let Some((cache, stats)) = cache {
                let key = EmbedCacheKey {
                    op: "embed",
                    backend: backend.backend_id(),
                    text,
                };
                cache.put(&DiskCache::key_for(&key), &v)?;
                stats.record_miss();
            }
            vectors.insert(id.clone(), v);
        }
    }

    EmbeddingIndex::from_entries(vectors, backend.backend_id())
}

fn embed_with_retry(
    backend: &dyn EmbeddingBackend,
    texts: &[String],
    batch_no: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut last_err = None;
    for attempt in 0..EMBED_RETRIES {
        match backend.embed(texts) {
            Ok(v) => return Ok(v),
            Err(e) => {
                last_err = Some(e);
                if attempt + 1 < EMBED_RETRIES {
                    std::thread::sleep(std::time::Duration::from_millis(
                        20 * (attempt as u64 + 1),
                    ));
                }
            }
        }
    }
    Err(Error::backend(
        backend.backend_id(),
        format!(
            "batch {batch_no} failed after {EMBED_RETRIES} attempts: {}",
            last_err.expect("at least one attempt")
        ),
    ))
}

impl EmbeddingIndex {
    pub fn from_entries(
        entries: BTreeMap<String, Vec<f64>>,
        backend_id: impl Into<String>,
    ) -> Result<Self> {
        let mut dim = 0;
        for (id, v) in &entries {
            if dim == 0 {
                dim = v.len();
            }
            if v.len() != dim || v.is_empty() {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite embedding entry for id {id:?}"
                )));
            }
        }
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty embedding index".into()));
        }
        Ok(EmbeddingIndex {
            entries,
            dim,
            backend_id: backend_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::UnknownId { id: id.into() })
    }

    /// Exact k-nearest-neighbors of `query_id` by ascending l2 distance,
    /// excluding the query itself; ties broken by ascending id.
    pub fn knn(&self, query_id: &str, n: usize) -> Result<Vec<String>> {
        let query = self.require(query_id)?;
        if n > self.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "n = {n} exceeds index size minus one ({})",
                self.len() - 1
            )));
        }
        let mut scored: Vec<(f64, &str)> = self
            .entries
            .iter()
            .filter(|(id, _)| id.as_str() != query_id)
            .map(|(id, v)| (l2_squared(query, v), id.as_str()))
            .collect();
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then_with(|| a.1.cmp(b.1))
        });
        Ok(scored
            .into_iter()
            .take(n)
            .map(|(_, id)| id.to_string())
            .collect())
    }

    /// Standard cosine similarity between two stored vectors.
    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.require(a)?;
        let vb = self.require(b)?;
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na2: f64 = va.iter().map(|x| x * x).sum();
        let nb2: f64 = vb.iter().map(|x| x * x).sum();
        if na2 == 0.0 {
            return Err(Error::ZeroVector { id: a.into() });
        }
        if nb2 == 0.0 {
            return Err(Error::ZeroVector { id: b.into() });
        }
        Ok(dot / (na2 * nb2).sqrt())
    }

    /// Write as JSONL: a header line with backend_id and dim, then one
    /// {id, v} line per entry in id order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let header = serde_json::json!({"backend_id": self.backend_id, "dim": self.dim});
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for (id, v) in &self.entries {
            serde_json::to_writer(&mut out, &serde_json::json!({"id": id, "v": v}))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            backend_id: String,
            dim: usize,
        }
        #[derive(Deserialize)]
        struct Row {
            id: String,
            v: Vec<f64>,
        }
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: empty index file", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&header_line)?;
        let mut entries = BTreeMap::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line)?;
            entries.insert(row.id, row.v);
        }
        let idx = Self::from_entries(entries, header.backend_id)?;
        if idx.dim != header.dim {
            return Err(Error::DimMismatch {
                expected: header.dim,
                got: idx.dim,
            });
        }
        Ok(idx)
    }
}

fn l2_squared(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
