//! Independent brute-force recomputation of perplexity, difficulty,
//! influence, and the weighted aggregate, checked against the library on a
//! 20-sample fixture. The oracle talks to the same mock backends but does
//! all arithmetic itself, straight from the definitions.

use std::collections::BTreeMap;
use std::path::PathBuf;

use curate_core::backends::mock::{ContextSensitivity, HashEmbedding, HashLogprob, TableLogprob};
use curate_core::backends::LogprobBackend;
use curate_core::corpus::{Corpus, PromptTemplate, Sample};
use curate_core::difficulty::DifficultyScorer;
use curate_core::embedding::EmbeddingIndex;
use curate_core::influence::{score_corpus, ScoreConfig};
use curate_core::probes::ProbeSet;

const TOL: f64 = 1e-9;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// 20 samples with varied instruction/response token counts.
fn fixture_corpus() -> Corpus {
    let topics = [
        "sorting a list", "summarizing articles", "writing a haiku", "planning a trip",
        "naming a pet", "solving equations", "translating phrases", "drafting emails",
        "explaining gravity", "inventing recipes",
    ];
    let samples: Vec<Sample> = (0..20)
        .map(|i| {
            let words = 1 + (i * 7 + 3) % 9;
            let response = (0..words)
                .map(|w| format!("word{}", (i + w * 3) % 13))
                .collect::<Vec<_>>()
                .join(" ");
            Sample {
                id: format!("s{i:02}"),
                instruction: format!("Task {i}: help with {}.", topics[i % topics.len()]),
                input: (i % 4 == 0).then(|| format!("input payload {i}")),
                response,
                meta: Default::default(),
            }
        })
        .collect();
    Corpus::new(samples, "fixture-digest".into())
}

fn fixture_index(corpus: &Corpus, template: &PromptTemplate) -> EmbeddingIndex {
    let backend = HashEmbedding::default_dim();
    let entries: BTreeMap<String, Vec<f64>> = corpus
        .samples()
        .iter()
        .map(|s| {
            let text = template.render_zero_shot(s).unwrap();
            (s.id.clone(), backend.vector_for(&text))
        })
        .collect();
    EmbeddingIndex::from_entries(entries, "mock-embed-16").unwrap()
}

/// Fixed probe sets: each candidate probes three other samples, spread over
/// the corpus. Probe construction has its own oracle; here it is an input.
fn fixture_probe_sets(corpus: &Corpus) -> Vec<ProbeSet> {
    let n = corpus.len();
    corpus
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let probes: Vec<String> = [1, 5, 11]
                .iter()
                .map(|&step| corpus.samples()[(i + step) % n].id.clone())
                .collect();
            ProbeSet {
                candidate_id: s.id.clone(),
                probe_ids: probes,
                provenance: vec![],
            }
        })
        .collect()
}

/// Oracle: PPL = exp(-(1/N) sum logprobs), straight from the definition.
fn oracle_ppl(backend: &dyn LogprobBackend, context: &str, continuation: &str) -> f64 {
    let scored = backend.score(context, continuation).unwrap();
    assert!(!scored.logprobs.is_empty());
    let sum: f64 = scored.logprobs.iter().sum();
    (-(sum / scored.logprobs.len() as f64)).exp()
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn check_against_oracle(backend_factory: impl Fn() -> Box<dyn LogprobBackend>) {
    let corpus = fixture_corpus();
    let template = PromptTemplate::alpaca();
    let index = fixture_index(&corpus, &template);
    let probe_sets = fixture_probe_sets(&corpus);

    let scorer = DifficultyScorer::new(backend_factory());
    let cfg = ScoreConfig {
        expected_probes: 3,
        drop_ifd_above: None,
        max_in_flight: 1,
        char_budget: None,
    };
    let outcome =
        score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
    assert_eq!(outcome.records.len(), corpus.len());

    let oracle_backend = backend_factory();
    for record in &outcome.records {
        let candidate = corpus.get(&record.candidate_id).unwrap();
        let n = record.per_probe.len() as f64;
        let mut oracle_wici = 0.0;
        for probe_influence in &record.per_probe {
            let probe = corpus.get(&probe_influence.probe_id).unwrap();

            let ppl_cond = oracle_ppl(
                oracle_backend.as_ref(),
                &template.render_zero_shot(probe).unwrap(),
                &probe.response,
            );
            let ppl_uncond = oracle_ppl(oracle_backend.as_ref(), "", &probe.response);
            let ppl_demo = oracle_ppl(
                oracle_backend.as_ref(),
                &template.render_one_shot(candidate, probe).unwrap(),
                &probe.response,
            );

            let ifd_base = ppl_cond / ppl_uncond;
            let ifd_demo = ppl_demo / ppl_uncond;
            let ici = ifd_base - ifd_demo;
            let cos = oracle_cosine(
                index.get(&record.candidate_id).unwrap(),
                index.get(&probe_influence.probe_id).unwrap(),
            );
            let weight = (1.0 - cos) / (2.0 * n);

            assert!((probe_influence.ifd_base - ifd_base).abs() < TOL);
            assert!((probe_influence.ifd_with_demo - ifd_demo).abs() < TOL);
            assert!((probe_influence.ici - ici).abs() < TOL);
            assert!((probe_influence.cos_sim - cos).abs() < TOL);
            assert!((probe_influence.weight - weight).abs() < TOL);
            oracle_wici += weight * ici;
        }
        assert!(
            (record.wici - oracle_wici).abs() < TOL,
            "wici mismatch for {}: {} vs oracle {}",
            record.candidate_id,
            record.wici,
            oracle_wici
        );
    }
}

#[test]
fn table_backend_matches_oracle() {
    check_against_oracle(|| Box::new(TableLogprob::from_path(fixture("logprob_table.json")).unwrap()));
}

#[test]
fn hash_backend_matches_oracle() {
    check_against_oracle(|| Box::new(HashLogprob::new(ContextSensitivity::Aware)));
}

#[test]
fn context_free_backend_zeroes_every_wici() {
    let corpus = fixture_corpus();
    let template = PromptTemplate::alpaca();
    let index = fixture_index(&corpus, &template);
    let probe_sets = fixture_probe_sets(&corpus);
    let scorer = DifficultyScorer::new(Box::new(HashLogprob::new(ContextSensitivity::Free)));
    let cfg = ScoreConfig {
        expected_probes: 3,
        drop_ifd_above: None,
        max_in_flight: 1,
        char_budget: None,
    };
    let outcome =
        score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
    for record in &outcome.records {
        assert!(record.wici.abs() < 1e-12);
        assert!(record.per_probe.iter().all(|p| p.ici.abs() < 1e-12));
    }
}

#[test]
fn corpus_nll_matches_oracle() {
    let corpus = fixture_corpus();
    let template = PromptTemplate::alpaca();
    let backend = TableLogprob::from_path(fixture("logprob_table.json")).unwrap();
    let scorer = DifficultyScorer::new(Box::new(
        TableLogprob::from_path(fixture("logprob_table.json")).unwrap(),
    ));
    let nll = scorer.corpus_nll(&template, &corpus).unwrap();

    // Oracle: mean over samples of the negated response-token logprob sum.
    let mut total = 0.0;
    for s in corpus.samples() {
        let prompt = template.render_zero_shot(s).unwrap();
        let scored = backend.score(&prompt, &s.response).unwrap();
        total += -scored.logprobs.iter().sum::<f64>();
    }
    let oracle = total / corpus.len() as f64;
    assert!((nll - oracle).abs() < TOL);
}

#[test]
fn shared_probe_base_is_one_backend_call_pair() {
    let corpus = fixture_corpus();
    let template = PromptTemplate::alpaca();
    let index = fixture_index(&corpus, &template);
    // Two candidates share every probe.
    let shared: Vec<String> = vec!["s05".into(), "s09".into()];
    let probe_sets = vec![
        ProbeSet {
            candidate_id: "s00".into(),
            probe_ids: shared.clone(),
            provenance: vec![],
        },
        ProbeSet {
            candidate_id: "s01".into(),
            probe_ids: shared,
            provenance: vec![],
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let backend = HashLogprob::new(ContextSensitivity::Aware);
    let calls = backend.calls.clone();
    let scorer = DifficultyScorer::with_cache(
        Box::new(backend),
        curate_core::cache::DiskCache::open(dir.path()).unwrap(),
    );
    let cfg = ScoreConfig {
        expected_probes: 2,
        drop_ifd_above: None,
        max_in_flight: 1,
        char_budget: None,
    };
    score_corpus(&corpus, &probe_sets, &scorer, &index, &template, &cfg).unwrap();
    // Per probe: one conditioned + one unconditioned call, shared across
    // both candidates; plus per candidate one own-conditioned call and one
    // demo-conditioned call per probe.
    let expected = 2 * 2 + 2 * (1 + 2);
    assert_eq!(calls.get(), expected as u64);
}
