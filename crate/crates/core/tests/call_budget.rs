//! Backend call accounting: scoring one candidate with a 5-probe set costs
//! at most 3*5+1 = 16 cold logprob calls (each probe's conditioned,
//! unconditioned, and demo-conditioned perplexity plus the candidate's own
//! conditioned call) and exactly 5 calls once the corpus-wide base scores
//! are warm.

use std::collections::BTreeMap;

use curate_core::backends::mock::{ContextSensitivity, HashEmbedding, HashLogprob};
use curate_core::cache::DiskCache;
use curate_core::corpus::{Corpus, PromptTemplate, Sample};
use curate_core::difficulty::DifficultyScorer;
use curate_core::embedding::EmbeddingIndex;
use curate_core::influence::{score_corpus, ScoreConfig};
use curate_core::probes::{build_probe_set, ComplexityScorer, ProbeConfig};

fn fixture() -> (Corpus, EmbeddingIndex, PromptTemplate) {
    let template = PromptTemplate::alpaca();
    let samples: Vec<Sample> = (0..40)
        .map(|i| Sample {
            id: format!("s{i:02}"),
            instruction: format!("Unique task number {i} about topic {}", i * 31 % 17),
            input: None,
            response: format!("unique answer {i} with words {} {}", i * 7 % 13, i * 5 % 11),
            meta: Default::default(),
        })
        .collect();
    let corpus = Corpus::new(samples, "digest".into());
    let embed = HashEmbedding::default_dim();
    let entries: BTreeMap<String, Vec<f64>> = corpus
        .samples()
        .iter()
        .map(|s| {
            let text = template.render_zero_shot(s).unwrap();
            (s.id.clone(), embed.vector_for(&text))
        })
        .collect();
    let index = EmbeddingIndex::from_entries(entries, "mock-embed-16").unwrap();
    (corpus, index, template)
}

fn five_probe_set(
    corpus: &Corpus,
    index: &EmbeddingIndex,
    candidate: &str,
) -> curate_core::probes::ProbeSet {
    let scorer = ComplexityScorer::new(Box::new(
        curate_core::backends::mock::LengthComplexity::new(),
    ));
    let cfg = ProbeConfig {
        n_neighbors: 32,
        k_clusters: 5,
        seed: 17,
    };
    let ps = build_probe_set(corpus, index, candidate, &cfg, &scorer).unwrap();
    assert_eq!(ps.probe_ids.len(), 5);
    ps
}

#[test]
fn cold_cache_costs_at_most_sixteen_calls() {
    let (corpus, index, template) = fixture();
    let probe_set = five_probe_set(&corpus, &index, "s00");

    let dir = tempfile::tempdir().unwrap();
    let backend = HashLogprob::new(ContextSensitivity::Aware);
    let calls = backend.calls.clone();
    let scorer =
        DifficultyScorer::with_cache(Box::new(backend), DiskCache::open(dir.path()).unwrap());
    let cfg = ScoreConfig {
        expected_probes: 5,
        drop_ifd_above: None,
        max_in_flight: 1,
        char_budget: None,
    };
    score_corpus(&corpus, &[probe_set], &scorer, &index, &template, &cfg).unwrap();
    assert!(calls.get() <= 16, "cold calls = {}", calls.get());
    // All request pairs are distinct in this fixture, so the bound is tight.
    assert_eq!(calls.get(), 16);
}

#[test]
fn warm_cache_costs_exactly_probe_count() {
    let (corpus, index, template) = fixture();
    let probe_set = five_probe_set(&corpus, &index, "s00");

    let dir = tempfile::tempdir().unwrap();
    let backend = HashLogprob::new(ContextSensitivity::Aware);
    let calls = backend.calls.clone();
    let scorer =
        DifficultyScorer::with_cache(Box::new(backend), DiskCache::open(dir.path()).unwrap());

    // Corpus-wide base pass: every sample's conditioned and unconditioned
    // perplexity.
    for s in corpus.samples() {
        scorer.ifd(&template, s).unwrap();
    }
    let before = calls.get();

    let cfg = ScoreConfig {
        expected_probes: 5,
        drop_ifd_above: None,
        max_in_flight: 1,
        char_budget: None,
    };
    score_corpus(&corpus, &[probe_set], &scorer, &index, &template, &cfg).unwrap();
    // Only the five demo-conditioned calls are fresh.
    assert_eq!(calls.get() - before, 5);
}

#[test]
fn rescoring_the_same_candidate_is_free() {
    let (corpus, index, template) = fixture();
    let probe_set = five_probe_set(&corpus, &index, "s03");

    let dir = tempfile::tempdir().unwrap();
    let backend = HashLogprob::new(ContextSensitivity::Aware);
    let calls = backend.calls.clone();
    let scorer =
        DifficultyScorer::with_cache(Box::new(backend), DiskCache::open(dir.path()).unwrap());
    let cfg = ScoreConfig::default();
    let a = score_corpus(
        &corpus,
        std::slice::from_ref(&probe_set),
        &scorer,
        &index,
        &template,
        &cfg,
    )
    .unwrap();
    let after_first = calls.get();
    let b = score_corpus(&corpus, &[probe_set], &scorer, &index, &template, &cfg).unwrap();
    assert_eq!(calls.get(), after_first);
    // Bit-identical records either way.
    assert_eq!(
        serde_json::to_vec(&a.records).unwrap(),
        serde_json::to_vec(&b.records).unwrap()
    );
}
