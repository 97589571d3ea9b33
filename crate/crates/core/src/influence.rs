//! In-context influence: the reduction in a probe's instruction-following
//! difficulty when the candidate is prepended as a one-shot demonstration,
//! aggregated over the probe set with normalized cosine-distance weights.
//!
//! Each probe contributes weight (1 - cos) / (2 * |B|). Weights are NOT
//! renormalized to sum to one: candidates whose probes sit semantically
//! close receive systematically less aggregate weight mass, exactly as the
//! weighting is defined.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PromptTemplate};
use crate::difficulty::DifficultyScorer;
use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::parallel::bounded_map;
use crate::probes::ProbeSet;

/// Cosines beyond 1 by at most this much are floating error and get clamped.
const COS_CLAMP_TOLERANCE: f64 = 1e-9;

/// Single-probe influence: the drop in IFD caused by the demonstration.
/// Positive means the demonstration made the probe easier.
pub fn ici_single(ifd_base: f64, ifd_with_demo: f64) -> Result<f64> {
    if !ifd_base.is_finite() || !ifd_with_demo.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite ifd inputs ({ifd_base}, {ifd_with_demo})"
        )));
    }
    Ok(ifd_base - ifd_with_demo)
}

/// The spec'd per-probe triple for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeIci {
    pub probe_id: String,
    pub ici: f64,
    pub cos_sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WiciAggregate {
    /// Per-probe weights, in probe order: (1 - cos) / (2n).
    pub weights: Vec<f64>,
    pub wici: f64,
    /// How many cosines were clamped back into [-1, 1].
    pub clamped: usize,
}

/// Aggregate per-probe influences into the weighted score
/// wICI = sum over probes of (1 - cos) / (2|B|) * ICI.
pub fn wici(probes: &[ProbeIci]) -> Result<WiciAggregate> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("empty probe list".into()));
    }
    let n = probes.len() as f64;
    let mut clamped = 0;
    let mut weights = Vec::with_capacity(probes.len());
    let mut total = 0.0;
    for p in probes {
        if !p.ici.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite ici for probe {:?}",
                p.probe_id
            )));
        }
        let mut cos = p.cos_sim;
        if cos > 1.0 && cos <= 1.0 + COS_CLAMP_TOLERANCE {
            cos = 1.0;
            clamped += 1;
        } else if cos < -1.0 && cos >= -1.0 - COS_CLAMP_TOLERANCE {
            cos = -1.0;
            clamped += 1;
        }
        if !(-1.0..=1.0).contains(&cos) {
            return Err(Error::InvalidArgument(format!(
                "cosine {cos} out of range for probe {:?}",
                p.probe_id
            )));
        }
        let weight = (1.0 - cos) / (2.0 * n);
        weights.push(weight);
        total += weight * p.ici;
    }
    Ok(WiciAggregate {
        weights,
        wici: total,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeInfluence {
    pub probe_id: String,
    pub ifd_base: f64,
    pub ifd_with_demo: f64,
    pub ici: f64,
    pub cos_sim: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub candidate_id: String,
    pub per_probe: Vec<ProbeInfluence>,
    pub wici: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl InfluenceRecord {
    pub fn n_probes(&self) -> usize {
        self.per_probe.len()
    }

    pub fn min_ici(&self) -> f64 {
        self.per_probe.iter().map(|p| p.ici).fold(f64::INFINITY, f64::min)
    }

    pub fn max_ici(&self) -> f64 {
        self.per_probe
            .iter()
            .map(|p| p.ici)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A candidate that could not be scored, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCandidate {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// The configured cluster count; records with fewer probes get flagged.
    pub expected_probes: usize,
    /// Drop candidates whose own IFD exceeds this (the upstream quality
    /// filter). Costs one extra unconditioned call per candidate, beyond the
    /// default 3|B|+1 budget.
    pub drop_ifd_above: Option<f64>,
    pub max_in_flight: usize,
    /// Flag candidates whose prompt+response exceed this many chars.
    pub char_budget: Option<usize>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            expected_probes: 5,
            drop_ifd_above: None,
            max_in_flight: 1,
            char_budget: Some(8000),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOutcome {
    /// One record per scored candidate, ascending candidate id.
    pub records: Vec<InfluenceRecord>,
    pub skipped: Vec<SkippedCandidate>,
}

/// Score every candidate with a probe set. Probe base difficulties are
/// cached, so candidates probing the same sample share one backend call
/// pair. Per candidate this issues at most 3|B|+1 cold backend calls: each
/// probe's conditioned, unconditioned, and demo-conditioned perplexities,
/// plus the candidate's own conditioned call (which the consistency
/// analysis reuses).
pub fn score_corpus(
    corpus: &Corpus,
    probe_sets: &[ProbeSet],
    scoring: &DifficultyScorer,
    index: &EmbeddingIndex,
    template: &PromptTemplate,
    cfg: &ScoreConfig,
) -> Result<ScoreOutcome> {
    let mut ordered: Vec<&ProbeSet> = probe_sets.iter().collect();
    ordered.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for probe_set in ordered {
        let candidate = corpus.require(&probe_set.candidate_id)?;
        if probe_set.probe_ids.is_empty() {
            skipped.push(SkippedCandidate {
                id: candidate.id.clone(),
                reason: "empty_probe_set".into(),
            });
            continue;
        }

        let mut flags = Vec::new();
        let prompt = template.render_zero_shot(candidate)?;
        if let Some(budget) = cfg.char_budget {
            if prompt.chars().count() + candidate.response.chars().count() > budget {
                flags.push("oversize".to_string());
            }
        }

        if let Some(threshold) = cfg.drop_ifd_above {
            let own = scoring.ifd(template, candidate)?;
            if own.ifd > threshold {
                skipped.push(SkippedCandidate {
                    id: candidate.id.clone(),
                    reason: format!("ifd_above_{threshold}"),
                });
                continue;
            }
        } else {
            // The candidate-level call: warms the conditioned perplexity the
            // consistency analysis ranks by.
            scoring.perplexity(&prompt, &candidate.response)?;
        }

        let per_probe_raw: Vec<Result<(f64, f64, f64)>> =
            bounded_map(&probe_set.probe_ids, cfg.max_in_flight, |probe_id| {
                let probe = corpus.require(probe_id)?;
                let base = scoring.ifd(template, probe)?.ifd;
                let with_demo = scoring.ifd_with_demo(template, candidate, probe)?;
                let cos = index.cosine(&candidate.id, probe_id)?;
                Ok((base, with_demo, cos))
            });

        let mut raw = Vec::with_capacity(per_probe_raw.len());
        let mut triples = Vec::with_capacity(per_probe_raw.len());
        for (probe_id, r) in probe_set.probe_ids.iter().zip(per_probe_raw) {
            let (base, with_demo, cos) = r?;
            triples.push(ProbeIci {
                probe_id: probe_id.clone(),
                ici: ici_single(base, with_demo)?,
                cos_sim: cos,
            });
            raw.push((base, with_demo));
        }
        let aggregate = wici(&triples)?;

        if probe_set.probe_ids.len() < cfg.expected_probes {
            flags.push("low_probe_diversity".to_string());
        }
        if aggregate.clamped > 0 {
            flags.push("cos_clamped".to_string());
        }

        let per_probe = triples
            .into_iter()
            .zip(raw)
            .zip(&aggregate.weights)
            .map(|((t, (base, with_demo)), &weight)| ProbeInfluence {
                probe_id: t.probe_id,
                ifd_base: base,
                ifd_with_demo: with_demo,
                ici: t.ici,
                cos_sim: t.cos_sim,
                weight,
            })
            .collect();

        records.push(InfluenceRecord {
            candidate_id: candidate.id.clone(),
            per_probe,
            wici: aggregate.wici,
            flags,
        });
    }
    Ok(ScoreOutcome { records, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{ContextSensitivity, HashLogprob};
    use crate::corpus::Sample;
    use std::collections::BTreeMap;

    fn triple(id: &str, ici: f64, cos: f64) -> ProbeIci {
        ProbeIci {
            probe_id: id.into(),
            ici,
            cos_sim: cos,
        }
    }

    #[test]
    fn ici_is_the_difficulty_drop() {
        assert!((ici_single(1.2, 0.9).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(ici_single(0.8, 0.8).unwrap(), 0.0);
        // Detrimental demonstration: negative influence.
        assert!((ici_single(0.5, 0.7).unwrap() + 0.2).abs() < 1e-12);
        assert!(ici_single(f64::NAN, 0.5).is_err());
        assert!(ici_single(0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn identical_embedding_means_zero_weight() {
        let agg = wici(&[triple("p", 0.7, 1.0)]).unwrap();
        assert_eq!(agg.weights, vec![0.0]);
        assert_eq!(agg.wici, 0.0);
    }

    #[test]
    fn maximal_distance_means_unit_weight() {
        let c = 0.37;
        let agg = wici(&[triple("p", c, -1.0)]).unwrap();
        assert_eq!(agg.weights, vec![1.0]);
        assert!((agg.wici - c).abs() < 1e-12);
    }

    #[test]
    fn two_probe_hand_computation() {
        // weights (1-0.5)/4 = 0.125 and (1+0.5)/4 = 0.375;
        // wici = 0.125*0.4 + 0.375*0.2 = 0.125.
        let agg = wici(&[triple("p1", 0.4, 0.5), triple("p2", 0.2, -0.5)]).unwrap();
        assert!((agg.weights[0] - 0.125).abs() < 1e-12);
        assert!((agg.weights[1] - 0.375).abs() < 1e-12);
        assert!((agg.wici - 0.125).abs() < 1e-12);
    }

    #[test]
    fn empty_probe_list_is_an_error() {
        assert!(wici(&[]).is_err());
    }

    #[test]
    fn cosine_out_of_range_is_an_error_but_float_noise_clamps() {
        assert!(wici(&[triple("p", 0.1, 1.5)]).is_err());
        assert!(wici(&[triple("p", 0.1, -1.5)]).is_err());
        let agg = wici(&[triple("p", 0.1, 1.0 + 1e-12)]).unwrap();
        assert_eq!(agg.clamped, 1);
        assert_eq!(agg.weights, vec![0.0]);
    }

    fn small_world() -> (crate::corpus::Corpus, crate::embedding::EmbeddingIndex, Vec<ProbeSet>) {
        let samples: Vec<Sample> = (0..6)
            .map(|i| Sample {
                id: format!("s{i}"),
                instruction: format!("instruction {i}"),
                input: None,
                response: format!("reply {i} tokens here"),
                meta: Default::default(),
            })
            .collect();
        let corpus = crate::corpus::Corpus::new(samples, "d".into());
        let entries: BTreeMap<String, Vec<f64>> = (0..6)
            .map(|i| {
                let a = i as f64;
                (format!("s{i}"), vec![a.sin(), a.cos(), 0.3])
            })
            .collect();
        let index = crate::embedding::EmbeddingIndex::from_entries(entries, "f").unwrap();
        let probe_sets: Vec<ProbeSet> = (0..6)
            .map(|i| ProbeSet {
                candidate_id: format!("s{i}"),
                probe_ids: vec![format!("s{}", (i + 1) % 6), format!("s{}", (i + 2) % 6)],
                provenance: vec![],
            })
            .collect();
        (corpus, index, probe_sets)
    }

    #[test]
    fn drop_ifd_above_filters_into_the_skip_ledger() {
        let (corpus, index, probe_sets) = small_world();
        let template = crate::corpus::PromptTemplate::alpaca();
        let scorer =
            crate::difficulty::DifficultyScorer::new(Box::new(HashLogprob::new(
                ContextSensitivity::Aware,
            )));
        // IFD is strictly positive, so a zero threshold drops everything.
        let cfg = ScoreConfig {
            expected_probes: 2,
            drop_ifd_above: Some(0.0),
            max_in_flight: 1,
            char_budget: None,
        };
        let out =
            score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.skipped.len(), 6);
        assert!(out.skipped.iter().all(|s| s.reason == "ifd_above_0"));

        // A generous threshold keeps everything.
        let cfg = ScoreConfig {
            drop_ifd_above: Some(1e9),
            ..cfg
        };
        let out =
            score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn empty_probe_set_is_skipped_not_scored() {
        let (corpus, index, mut probe_sets) = small_world();
        probe_sets[2].probe_ids.clear();
        let template = crate::corpus::PromptTemplate::alpaca();
        let scorer = crate::difficulty::DifficultyScorer::new(Box::new(HashLogprob::new(
            ContextSensitivity::Aware,
        )));
        let cfg = ScoreConfig {
            expected_probes: 2,
            drop_ifd_above: None,
            max_in_flight: 1,
            char_budget: None,
        };
        let out =
            score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
        assert_eq!(out.records.len(), 5);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].id, "s2");
        assert_eq!(out.skipped[0].reason, "empty_probe_set");
        // Output order is ascending candidate id regardless of input order.
        let ids: Vec<&str> = out.records.iter().map(|r| r.candidate_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn low_probe_diversity_flagged() {
        let (corpus, index, probe_sets) = small_world();
        let template = crate::corpus::PromptTemplate::alpaca();
        let scorer = crate::difficulty::DifficultyScorer::new(Box::new(HashLogprob::new(
            ContextSensitivity::Aware,
        )));
        let cfg = ScoreConfig {
            expected_probes: 5,
            drop_ifd_above: None,
            max_in_flight: 1,
            char_budget: None,
        };
        let out =
            score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
        assert!(out
            .records
            .iter()
            .all(|r| r.flags.iter().any(|f| f == "low_probe_diversity")));
    }

    #[test]
    fn weights_bounded_by_inverse_probe_count() {
        let probes: Vec<ProbeIci> = (0..7)
            .map(|i| triple(&format!("p{i}"), 0.1 * i as f64, -1.0 + 0.3 * i as f64))
            .collect();
        let agg = wici(&probes).unwrap();
        let bound = 1.0 / probes.len() as f64;
        assert!(agg.weights.iter().all(|&w| (0.0..=bound).contains(&w)));
        // |wICI| <= max |ici| follows from the weight bound.
        let max_ici = probes.iter().map(|p| p.ici.abs()).fold(0.0, f64::max);
        assert!(agg.wici.abs() <= max_ici + 1e-12);
    }
}
