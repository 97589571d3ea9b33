//! Greedy diversity-constrained coreset selection: visit candidates in
//! descending wICI order and admit one only when its cosine similarity to
//! every already-selected item stays below tau, until the budget fills.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_samples, Corpus};
use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::influence::InfluenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Absolute coreset size.
    K(usize),
    /// Fraction of the corpus, rounded, minimum one.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: Budget,
    /// Cosine-similarity ceiling between any two selected samples.
    pub tau: f64,
    /// When the constraint makes the budget unreachable, append the
    /// highest-wICI skipped candidates anyway (marked in the manifest).
    pub backfill: bool,
}

impl SelectionConfig {
    pub fn new(budget: Budget, tau: f64, backfill: bool) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must lie in (0, 1], got {tau}"
            )));
        }
        if let Budget::Fraction(f) = budget {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "budget fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(SelectionConfig {
            budget,
            tau,
            backfill,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    /// Too similar to an already-selected sample.
    SimilarTo { id: String },
    /// The budget was already full when this candidate's turn came.
    BudgetReached,
    /// The candidate never received a wICI score.
    NoScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selection order = admission order = descending wICI.
    pub selected_ids: Vec<String>,
    pub skipped: Vec<(String, SkipReason)>,
    pub achieved_k: usize,
    /// Ids admitted only by backfill (they violate the tau constraint).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backfilled_ids: Vec<String>,
}

/// Resolve the configured budget against the corpus size.
pub fn budget_resolve(cfg: &SelectionConfig, corpus_size: usize) -> Result<usize> {
    if corpus_size == 0 {
        return Err(Error::InvalidArgument("corpus size is zero".into()));
    }
    let k = match cfg.budget {
        Budget::K(k) => k,
        Budget::Fraction(f) => ((f * corpus_size as f64).round() as usize).max(1),
    };
    if k == 0 {
        return Err(Error::InvalidArgument("resolved budget is zero".into()));
    }
    if k > corpus_size {
        return Err(Error::InvalidArgument(format!(
            "budget {k} exceeds corpus size {corpus_size}"
        )));
    }
    Ok(k)
}

/// Greedy scan in descending wICI order (ties by ascending id). A candidate
/// is admitted iff its max cosine to the already-selected set is < tau.
/// `corpus_size` is the full corpus cardinality the fraction budget refers
/// to, which may exceed the number of scored records.
pub fn select(
    records: &[InfluenceRecord],
    index: &EmbeddingIndex,
    cfg: &SelectionConfig,
    corpus_size: usize,
) -> Result<SelectionResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no scored candidates".into()));
    }
    let budget = budget_resolve(cfg, corpus_size)?;

    let mut order: Vec<&InfluenceRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        b.wici
            .partial_cmp(&a.wici)
            .expect("finite wici")
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });

    let mut selected: Vec<String> = Vec::new();
    let mut skipped: Vec<(String, SkipReason)> = Vec::new();
    for rec in &order {
        if selected.len() >= budget {
            skipped.push((rec.candidate_id.clone(), SkipReason::BudgetReached));
            continue;
        }
        let mut conflict: Option<String> = None;
        for sel in &selected {
            if index.cosine(&rec.candidate_id, sel)? >= cfg.tau {
                conflict = Some(sel.clone());
                break;
            }
        }
        match conflict {
            Some(id) => skipped.push((rec.candidate_id.clone(), SkipReason::SimilarTo { id })),
            None => selected.push(rec.candidate_id.clone()),
        }
    }

    let mut backfilled_ids = Vec::new();
    if cfg.backfill && selected.len() < budget {
        // Highest-wICI similarity-skipped candidates, in scan order.
        let skipped_similar: Vec<String> = order
            .iter()
            .filter(|r| {
                skipped
                    .iter()
                    .any(|(id, reason)| id == &r.candidate_id && matches!(reason, SkipReason::SimilarTo { .. }))
            })
            .map(|r| r.candidate_id.clone())
            .collect();
        for id in skipped_similar {
            if selected.len() >= budget {
                break;
            }
            skipped.retain(|(sid, _)| sid != &id);
            backfilled_ids.push(id.clone());
            selected.push(id);
        }
    }

    let achieved_k = selected.len();
    Ok(SelectionResult {
        selected_ids: selected,
        skipped,
        achieved_k,
        backfilled_ids,
    })
}

/// Everything the coreset manifest needs to reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SelectionConfig,
    pub source_digest: String,
    pub backend_ids: BTreeMap<String, String>,
    pub seed: u64,
    pub requested_k: usize,
    pub achieved_k: usize,
    pub skip_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backfilled_ids: Vec<String>,
}

pub fn skip_counts(result: &SelectionResult) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, reason) in &result.skipped {
        let key = match reason {
            SkipReason::SimilarTo { .. } => "similar_to",
            SkipReason::BudgetReached => "budget_reached",
            SkipReason::NoScore => "no_score",
        };
        *counts.entry(key.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Write the selected samples in the source record format (selection order)
/// plus a manifest sidecar at `<path>.manifest.json`.
pub fn export_coreset(
    result: &SelectionResult,
    corpus: &Corpus,
    path: impl AsRef<Path>,
    manifest: &RunManifest,
) -> Result<()> {
    let path = path.as_ref();
    let selected: Vec<_> = result
        .selected_ids
        .iter()
        .map(|id| corpus.require(id))
        .collect::<Result<_>>()?;
    write_samples(selected, path)?;
    let manifest_path = path.with_extension("manifest.json");
    let bytes = serde_json::to_vec_pretty(manifest)?;
    std::fs::write(&manifest_path, bytes).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}
