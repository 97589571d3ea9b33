//! Resumable stage graph: ingest -> embed -> probes -> score -> select,
//! with analyze and judge branching off and report at the end.
//!
//! Each stage records digests of its inputs (consumed artifacts plus the
//! slice of config it depends on) and of its outputs. A stage re-runs iff
//! any input digest changed or an output is missing; otherwise it is
//! skipped, which is what makes warm reruns free.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use curate_core::analysis::{
    consistency_report, ifd_ranking, run_pairwise_eval, unweighted_ici_ranking, JudgeHarness,
    Verdict, DEFAULT_CUTOFFS,
};
use curate_core::cache::DiskCache;
use curate_core::corpus::{load_corpus, write_samples, Corpus, IdPolicy};
use curate_core::difficulty::{DifficultyRecord, DifficultyScorer};
use curate_core::embedding::{build_index, embedding_texts, EmbeddingIndex};
use curate_core::hash::substream_seed;
use curate_core::influence::{score_corpus, InfluenceRecord, ScoreConfig};
use curate_core::probes::{build_probe_set, ComplexityScorer, ProbeConfig, ProbeSet};
use curate_core::select::{
    budget_resolve, export_coreset, select, skip_counts, RunManifest, SelectionConfig, SkipReason,
};

use crate::config::{load_answers, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Embed,
    Probes,
    Score,
    Select,
    Analyze,
    Judge,
    Report,
}

pub const ALL_STAGES: [Stage; 8] = [
    Stage::Ingest,
    Stage::Embed,
    Stage::Probes,
    Stage::Score,
    Stage::Select,
    Stage::Analyze,
    Stage::Judge,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Probes => "probes",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::Analyze => "analyze",
            Stage::Judge => "judge",
            Stage::Report => "report",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Embed => &[Stage::Ingest],
            Stage::Probes => &[Stage::Ingest, Stage::Embed],
            Stage::Score => &[Stage::Ingest, Stage::Embed, Stage::Probes],
            Stage::Select => &[Stage::Ingest, Stage::Embed, Stage::Score],
            Stage::Analyze => &[Stage::Ingest, Stage::Score],
            Stage::Judge => &[],
            Stage::Report => &[Stage::Ingest, Stage::Score, Stage::Select],
        }
    }

    /// Artifact files this stage writes, relative to the output directory.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["corpus.jsonl", "ingest.json"],
            Stage::Embed => &["index.jsonl", "embed.json"],
            Stage::Probes => &["probes.jsonl", "probes.json"],
            Stage::Score => &["influence.jsonl", "scores.tsv", "score.json"],
            Stage::Select => &["coreset.jsonl", "coreset.manifest.json", "select.json"],
            Stage::Analyze => &["difficulty.jsonl", "analysis.json"],
            Stage::Judge => &["outcomes.jsonl", "judge.json"],
            Stage::Report => &["report.txt"],
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StateFile {
    stages: BTreeMap<String, StageState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageState {
    status: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub executed: bool,
    pub reason: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub calls: BTreeMap<String, CallCounts>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CallCounts {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Default, Serialize)]
pub struct RunSummary {
    pub stages: BTreeMap<String, StageSummary>,
}

pub struct Runner {
    cfg: PipelineConfig,
    state: StateFile,
    state_path: PathBuf,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sha256_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&json))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move into place {}", path.display()))?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("bad record in {}", path.display())))
        .collect()
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
        let state_path = cfg.output_dir.join("state.json");
        let state = match std::fs::read(&state_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
            Err(_) => StateFile::default(),
        };
        Ok(Runner {
            cfg,
            state,
            state_path,
        })
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn cache(&self, kind: &str) -> anyhow::Result<DiskCache> {
        Ok(DiskCache::open(self.cfg.cache_dir.join(kind))?)
    }

    /// The stage's input fingerprint: relevant config slice plus digests of
    /// every artifact it consumes. Paths never enter fingerprints, so moving
    /// a tree leaves stages fresh.
    fn stage_inputs(&self, stage: Stage) -> anyhow::Result<BTreeMap<String, String>> {
        let raw = &self.cfg.raw;
        let ids = self.cfg.backend_ids()?;
        let mut inputs = BTreeMap::new();
        match stage {
            Stage::Ingest => {
                inputs.insert("corpus_file".into(), sha256_file(&self.cfg.corpus)?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "id_policy": raw.id_policy,
                        "char_budget": raw.char_budget,
                        "template": self.cfg.template,
                    })),
                );
            }
            Stage::Embed => {
                inputs.insert("corpus".into(), sha256_file(&self.out_path("corpus.jsonl"))?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "backend": ids["embed"],
                        "embed_text": raw.embed_text,
                        "template": self.cfg.template,
                    })),
                );
            }
            Stage::Probes => {
                inputs.insert("corpus".into(), sha256_file(&self.out_path("corpus.jsonl"))?);
                inputs.insert("index".into(), sha256_file(&self.out_path("index.jsonl"))?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "backend": ids["complexity"],
                        "n_neighbors": raw.n_neighbors,
                        "k_clusters": raw.k_clusters,
                        "seed": raw.seed,
                    })),
                );
            }
            Stage::Score => {
                inputs.insert("corpus".into(), sha256_file(&self.out_path("corpus.jsonl"))?);
                inputs.insert("index".into(), sha256_file(&self.out_path("index.jsonl"))?);
                inputs.insert("probes".into(), sha256_file(&self.out_path("probes.jsonl"))?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "backend": ids["logprob"],
                        "template": self.cfg.template,
                        "drop_ifd_above": raw.drop_ifd_above,
                        "char_budget": raw.char_budget,
                        "k_clusters": raw.k_clusters,
                        "unconditioned": raw.unconditioned_context,
                    })),
                );
            }
            Stage::Select => {
                inputs.insert("index".into(), sha256_file(&self.out_path("index.jsonl"))?);
                inputs.insert(
                    "influence".into(),
                    sha256_file(&self.out_path("influence.jsonl"))?,
                );
                inputs.insert("score_meta".into(), sha256_file(&self.out_path("score.json"))?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "tau": raw.tau,
                        "budget": self.cfg.budget,
                        "backfill": raw.backfill,
                        "seed": raw.seed,
                    })),
                );
            }
            Stage::Analyze => {
                inputs.insert("corpus".into(), sha256_file(&self.out_path("corpus.jsonl"))?);
                inputs.insert(
                    "influence".into(),
                    sha256_file(&self.out_path("influence.jsonl"))?,
                );
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({
                        "backend": ids["logprob"],
                        "template": self.cfg.template,
                        "unconditioned": raw.unconditioned_context,
                    })),
                );
            }
            Stage::Judge => {
                let judge = self
                    .cfg
                    .judge_stage
                    .as_ref()
                    .ok_or_else(|| anyhow!("judge stage requires a [judge] config section"))?;
                inputs.insert("eval_corpus".into(), sha256_file(&judge.eval_corpus)?);
                inputs.insert("answers_a".into(), sha256_file(&judge.answers_a)?);
                inputs.insert("answers_b".into(), sha256_file(&judge.answers_b)?);
                inputs.insert(
                    "config".into(),
                    sha256_of(&serde_json::json!({"backend": ids["judge"]})),
                );
            }
            Stage::Report => {
                for name in ["ingest.json", "score.json", "select.json", "scores.tsv"] {
                    inputs.insert(name.into(), sha256_file(&self.out_path(name))?);
                }
                for name in ["analysis.json", "judge.json"] {
                    let p = self.out_path(name);
                    if p.exists() {
                        inputs.insert(name.into(), sha256_file(&p)?);
                    }
                }
            }
        }
        Ok(inputs)
    }

    fn up_to_date(&self, stage: Stage, inputs: &BTreeMap<String, String>) -> bool {
        match self.state.stages.get(stage.name()) {
            Some(st) if st.status == "done" && &st.inputs == inputs => stage
                .outputs()
                .iter()
                .all(|name| match sha256_file(&self.out_path(name)) {
                    Ok(digest) => st.outputs.get(*name) == Some(&digest),
                    Err(_) => false,
                }),
            _ => false,
        }
    }

    fn deps_satisfied(&self, stage: Stage) -> anyhow::Result<()> {
        for dep in stage.deps() {
            let done = self
                .state
                .stages
                .get(dep.name())
                .map(|s| s.status == "done")
                .unwrap_or(false);
            let files_present = dep.outputs().iter().all(|n| self.out_path(n).exists());
            if !done || !files_present {
                bail!(
                    "missing artifact: stage '{}' requires '{}' — run `curate {}` first",
                    stage.name(),
                    dep.name(),
                    dep.name()
                );
            }
        }
        Ok(())
    }

    fn record_done(
        &mut self,
        stage: Stage,
        inputs: BTreeMap<String, String>,
    ) -> anyhow::Result<()> {
        let mut outputs = BTreeMap::new();
        for name in stage.outputs() {
            outputs.insert(name.to_string(), sha256_file(&self.out_path(name))?);
        }
        self.state.stages.insert(
            stage.name().to_string(),
            StageState {
                status: "done".into(),
                inputs,
                outputs,
            },
        );
        let bytes = serde_json::to_vec_pretty(&self.state)?;
        write_atomic(&self.state_path, &bytes)?;
        Ok(())
    }

    /// Execute (or skip) the requested stages in dependency order.
    pub fn run(&mut self, stages: &[Stage], dry_run: bool) -> anyhow::Result<RunSummary> {
        let mut summary = RunSummary::default();
        let mut ordered: Vec<Stage> = ALL_STAGES
            .iter()
            .copied()
            .filter(|s| stages.contains(s))
            .collect();
        ordered.dedup();

        for stage in ordered {
            // The judge stage silently steps aside in full runs when no
            // judge inputs are configured.
            if stage == Stage::Judge && self.cfg.judge_stage.is_none() {
                if stages.len() == 1 {
                    bail!("judge stage requires a [judge] config section");
                }
                summary.stages.insert(
                    stage.name().into(),
                    StageSummary {
                        executed: false,
                        reason: "not configured".into(),
                        calls: BTreeMap::new(),
                    },
                );
                continue;
            }

            if dry_run {
                let plan = if self.deps_satisfied(stage).is_err() {
                    "would run (after upstream stages)".to_string()
                } else if self
                    .stage_inputs(stage)
                    .map(|inputs| self.up_to_date(stage, &inputs))
                    .unwrap_or(false)
                {
                    "would skip (up to date)".to_string()
                } else {
                    "would run".to_string()
                };
                println!("{}: {plan}", stage.name());
                summary.stages.insert(
                    stage.name().into(),
                    StageSummary {
                        executed: false,
                        reason: plan,
                        calls: BTreeMap::new(),
                    },
                );
                continue;
            }

            self.deps_satisfied(stage)?;
            let inputs = self.stage_inputs(stage)?;
            if self.up_to_date(stage, &inputs) {
                summary.stages.insert(
                    stage.name().into(),
                    StageSummary {
                        executed: false,
                        reason: "up to date".into(),
                        calls: BTreeMap::new(),
                    },
                );
                continue;
            }

            let calls = match stage {
                Stage::Ingest => self.run_ingest()?,
                Stage::Embed => self.run_embed()?,
                Stage::Probes => self.run_probes()?,
                Stage::Score => self.run_score()?,
                Stage::Select => self.run_select()?,
                Stage::Analyze => self.run_analyze()?,
                Stage::Judge => self.run_judge()?,
                Stage::Report => self.run_report()?,
            };
            self.record_done(stage, inputs)?;
            summary.stages.insert(
                stage.name().into(),
                StageSummary {
                    executed: true,
                    reason: "ran".into(),
                    calls,
                },
            );
        }

        if !dry_run {
            let bytes = serde_json::to_vec_pretty(&summary)?;
            write_atomic(&self.out_path("run_summary.json"), &bytes)?;
        }
        Ok(summary)
    }

    fn load_artifact_corpus(&self) -> anyhow::Result<Corpus> {
        Ok(load_corpus(self.out_path("corpus.jsonl"), IdPolicy::UseField)?)
    }

    fn run_ingest(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = load_corpus(&self.cfg.corpus, self.cfg.raw.id_policy)?;
        let oversize = corpus.oversize_ids(&self.cfg.template, self.cfg.raw.char_budget)?;
        write_samples(corpus.samples(), self.out_path("corpus.jsonl"))?;
        let meta = serde_json::json!({
            "n": corpus.len(),
            "source_digest": corpus.source_digest(),
            "id_policy": self.cfg.raw.id_policy,
            "oversize_ids": oversize,
            "char_budget": self.cfg.raw.char_budget,
        });
        write_atomic(
            &self.out_path("ingest.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::new())
    }

    fn run_embed(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = self.load_artifact_corpus()?;
        let backend = self.cfg.embed_backend()?;
        let cache = self.cache("embed")?;
        let stats = curate_core::cache::CallStats::default();
        let items = embedding_texts(&corpus, &self.cfg.template, self.cfg.raw.embed_text)?;
        let index = build_index(
            &items,
            backend.as_ref(),
            self.cfg.raw.embed_batch,
            Some((&cache, &stats)),
        )?;
        index.save(self.out_path("index.jsonl"))?;
        let snapshot = stats.snapshot();
        let meta = serde_json::json!({
            "backend_id": index.backend_id(),
            "dim": index.dim(),
            "n": index.len(),
        });
        write_atomic(
            &self.out_path("embed.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::from([(
            "embed".into(),
            CallCounts {
                hits: snapshot.hits,
                misses: snapshot.misses,
            },
        )]))
    }

    fn run_probes(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = self.load_artifact_corpus()?;
        let index = EmbeddingIndex::load(self.out_path("index.jsonl"))?;
        if corpus.len() <= self.cfg.raw.n_neighbors {
            bail!(
                "corpus size {} must exceed n_neighbors {}",
                corpus.len(),
                self.cfg.raw.n_neighbors
            );
        }
        let scorer =
            ComplexityScorer::with_cache(self.cfg.complexity_backend()?, self.cache("complexity")?);
        let mut probe_sets = Vec::with_capacity(corpus.len());
        for sample in corpus.samples() {
            let cfg = ProbeConfig {
                n_neighbors: self.cfg.raw.n_neighbors,
                k_clusters: self.cfg.raw.k_clusters,
                seed: substream_seed(self.cfg.raw.seed, "probes", &sample.id),
            };
            probe_sets.push(build_probe_set(&corpus, &index, &sample.id, &cfg, &scorer)?);
        }
        write_jsonl(&self.out_path("probes.jsonl"), &probe_sets)?;
        let snapshot = scorer.stats().snapshot();
        let short_sets = probe_sets
            .iter()
            .filter(|p| p.probe_ids.len() < self.cfg.raw.k_clusters)
            .count();
        let meta = serde_json::json!({
            "backend_id": scorer.backend_id(),
            "n_candidates": probe_sets.len(),
            "short_probe_sets": short_sets,
        });
        write_atomic(
            &self.out_path("probes.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::from([(
            "complexity".into(),
            CallCounts {
                hits: snapshot.hits,
                misses: snapshot.misses,
            },
        )]))
    }

    fn run_score(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = self.load_artifact_corpus()?;
        let index = EmbeddingIndex::load(self.out_path("index.jsonl"))?;
        let probe_sets: Vec<ProbeSet> = read_jsonl(&self.out_path("probes.jsonl"))?;
        let scorer = DifficultyScorer::with_cache(self.cfg.logprob_backend()?, self.cache("logprob")?)
            .unconditioned_context(self.cfg.unconditioned());
        let score_cfg = ScoreConfig {
            expected_probes: self.cfg.raw.k_clusters,
            drop_ifd_above: self.cfg.raw.drop_ifd_above,
            max_in_flight: self.cfg.raw.max_in_flight,
            char_budget: Some(self.cfg.raw.char_budget),
        };
        let outcome = score_corpus(
            &corpus,
            &probe_sets,
            &scorer,
            &index,
            &self.cfg.template,
            &score_cfg,
        )?;

        write_jsonl(&self.out_path("influence.jsonl"), &outcome.records)?;

        let mut tsv = String::from("candidate_id\twici\tn_probes\tmin_ici\tmax_ici\tflags\n");
        for r in &outcome.records {
            writeln!(
                tsv,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.candidate_id,
                r.wici,
                r.n_probes(),
                r.min_ici(),
                r.max_ici(),
                r.flags.join(",")
            )?;
        }
        write_atomic(&self.out_path("scores.tsv"), tsv.as_bytes())?;

        let snapshot = scorer.stats().snapshot();
        let meta = serde_json::json!({
            "backend_id": scorer.backend_id(),
            "n_scored": outcome.records.len(),
            "skipped": outcome.skipped,
            "logprob_calls": {"hits": snapshot.hits, "misses": snapshot.misses},
            "call_bound_per_candidate": 3 * self.cfg.raw.k_clusters + 1,
        });
        write_atomic(
            &self.out_path("score.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::from([(
            "logprob".into(),
            CallCounts {
                hits: snapshot.hits,
                misses: snapshot.misses,
            },
        )]))
    }

    fn run_select(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = self.load_artifact_corpus()?;
        let index = EmbeddingIndex::load(self.out_path("index.jsonl"))?;
        let records: Vec<InfluenceRecord> = read_jsonl(&self.out_path("influence.jsonl"))?;
        let cfg = SelectionConfig::new(self.cfg.budget, self.cfg.raw.tau, self.cfg.raw.backfill)?;
        let requested_k = budget_resolve(&cfg, corpus.len())?;
        let mut result = select(&records, &index, &cfg, corpus.len())?;

        // Candidates that never got a score appear in the ledger as no_score.
        let scored: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.candidate_id.as_str()).collect();
        let mut unscored: Vec<String> = corpus
            .samples()
            .iter()
            .map(|s| s.id.clone())
            .filter(|id| !scored.contains(id.as_str()))
            .collect();
        unscored.sort();
        result
            .skipped
            .extend(unscored.into_iter().map(|id| (id, SkipReason::NoScore)));

        let manifest = RunManifest {
            config: cfg,
            source_digest: self.ingest_meta()?.source_digest,
            backend_ids: self.cfg.backend_ids()?,
            seed: self.cfg.raw.seed,
            requested_k,
            achieved_k: result.achieved_k,
            skip_counts: skip_counts(&result),
            backfilled_ids: result.backfilled_ids.clone(),
        };
        export_coreset(&result, &corpus, self.out_path("coreset.jsonl"), &manifest)?;
        let meta = serde_json::json!({
            "requested_k": requested_k,
            "achieved_k": result.achieved_k,
            "tau": self.cfg.raw.tau,
            "skip_counts": skip_counts(&result),
            "selected_ids": result.selected_ids,
        });
        write_atomic(
            &self.out_path("select.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::new())
    }

    fn run_analyze(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let corpus = self.load_artifact_corpus()?;
        let records: Vec<InfluenceRecord> = read_jsonl(&self.out_path("influence.jsonl"))?;
        let scorer = DifficultyScorer::with_cache(self.cfg.logprob_backend()?, self.cache("logprob")?)
            .unconditioned_context(self.cfg.unconditioned());

        // Own-difficulty for every scored candidate; conditioned perplexities
        // are already warm from the score stage.
        let scored_ids: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.candidate_id.as_str()).collect();
        let mut difficulty: Vec<DifficultyRecord> = Vec::new();
        for sample in corpus.samples() {
            if scored_ids.contains(sample.id.as_str()) {
                difficulty.push(scorer.ifd(&self.cfg.template, sample)?);
            }
        }
        difficulty.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        write_jsonl(&self.out_path("difficulty.jsonl"), &difficulty)?;

        let ifd_rank = ifd_ranking(&difficulty);
        let ici_rank = unweighted_ici_ranking(&records);
        let report = consistency_report(&ifd_rank, &ici_rank, &DEFAULT_CUTOFFS)?;
        let over_one = difficulty.iter().filter(|d| d.ifd > 1.0).count();
        let meta = serde_json::json!({
            "consistency": report,
            "ifd_above_1": over_one,
        });
        write_atomic(
            &self.out_path("analysis.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        let snapshot = scorer.stats().snapshot();
        Ok(BTreeMap::from([(
            "logprob".into(),
            CallCounts {
                hits: snapshot.hits,
                misses: snapshot.misses,
            },
        )]))
    }

    fn run_judge(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let judge_cfg = self
            .cfg
            .judge_stage
            .as_ref()
            .expect("caller checked judge config");
        let eval = load_corpus(&judge_cfg.eval_corpus, IdPolicy::UseField)?;
        let answers_a = load_answers(&judge_cfg.answers_a)?;
        let answers_b = load_answers(&judge_cfg.answers_b)?;
        let harness = JudgeHarness::with_cache(self.cfg.judge_backend()?, self.cache("judge")?);
        let (outcomes, score_a) = run_pairwise_eval(&eval, &answers_a, &answers_b, &harness)?;

        write_jsonl(&self.out_path("outcomes.jsonl"), &outcomes)?;
        let wins = outcomes.iter().filter(|o| o.verdict == Verdict::WinA).count();
        let losses = outcomes.iter().filter(|o| o.verdict == Verdict::WinB).count();
        let parse_failures = outcomes.iter().filter(|o| o.parse_failure).count();
        let snapshot = harness.stats().snapshot();
        let meta = serde_json::json!({
            "backend_id": harness.backend_id(),
            "n": outcomes.len(),
            "wins_a": wins,
            "wins_b": losses,
            "ties": outcomes.len() - wins - losses,
            "parse_failures": parse_failures,
            "winning_score_a": score_a,
            "winning_score_b": 2.0 - score_a,
        });
        write_atomic(
            &self.out_path("judge.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(BTreeMap::from([(
            "judge".into(),
            CallCounts {
                hits: snapshot.hits,
                misses: snapshot.misses,
            },
        )]))
    }

    fn ingest_meta(&self) -> anyhow::Result<IngestMeta> {
        let bytes = std::fs::read(self.out_path("ingest.json"))
            .context("missing artifact: ingest.json — run `curate ingest` first")?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn run_report(&self) -> anyhow::Result<BTreeMap<String, CallCounts>> {
        let ingest = self.ingest_meta()?;
        let score_meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(self.out_path("score.json"))?)?;
        let select_meta: serde_json::Value =
            serde_json::from_slice(&std::fs::read(self.out_path("select.json"))?)?;
        let records: Vec<InfluenceRecord> = read_jsonl(&self.out_path("influence.jsonl"))?;

        let mut wicis: Vec<f64> = records.iter().map(|r| r.wici).collect();
        wicis.sort_by(|a, b| a.partial_cmp(b).expect("finite wici"));
        let quantile = |q: f64| -> f64 {
            if wicis.is_empty() {
                return f64::NAN;
            }
            let idx = ((wicis.len() - 1) as f64 * q).round() as usize;
            wicis[idx]
        };
        let flag_count = |flag: &str| {
            records
                .iter()
                .filter(|r| r.flags.iter().any(|f| f == flag))
                .count()
        };

        let n_scored = records.len().max(1);
        let misses = score_meta["logprob_calls"]["misses"].as_u64().unwrap_or(0);
        let bound = score_meta["call_bound_per_candidate"].as_u64().unwrap_or(0);

        let mut text = String::new();
        writeln!(text, "curation run report")?;
        writeln!(text, "===================")?;
        writeln!(
            text,
            "corpus: n={} (source digest {})",
            ingest.n, ingest.source_digest
        )?;
        writeln!(
            text,
            "probes: n_neighbors={} k_clusters={} seed={}",
            self.cfg.raw.n_neighbors, self.cfg.raw.k_clusters, self.cfg.raw.seed
        )?;
        writeln!(
            text,
            "selection: tau={} requested_k={} achieved_k={}",
            self.cfg.raw.tau, select_meta["requested_k"], select_meta["achieved_k"]
        )?;
        writeln!(text, "skip counts: {}", select_meta["skip_counts"])?;
        writeln!(
            text,
            "wici quantiles: min={:.6} p25={:.6} p50={:.6} p75={:.6} max={:.6}",
            quantile(0.0),
            quantile(0.25),
            quantile(0.5),
            quantile(0.75),
            quantile(1.0)
        )?;
        writeln!(
            text,
            "flags: low_probe_diversity={} oversize={} cos_clamped={}",
            flag_count("low_probe_diversity"),
            flag_count("oversize"),
            flag_count("cos_clamped")
        )?;
        writeln!(text, "call accounting:")?;
        writeln!(
            text,
            "  score stage logprob calls: hits={} misses={} ({:.2} fresh calls/candidate, bound {} = 3K+1)",
            score_meta["logprob_calls"]["hits"],
            misses,
            misses as f64 / n_scored as f64,
            bound
        )?;
        let analysis_path = self.out_path("analysis.json");
        if analysis_path.exists() {
            let analysis: serde_json::Value =
                serde_json::from_slice(&std::fs::read(&analysis_path)?)?;
            writeln!(text, "consistency analysis: {}", analysis["consistency"])?;
            writeln!(text, "candidates with IFD > 1: {}", analysis["ifd_above_1"])?;
        }
        let judge_path = self.out_path("judge.json");
        if judge_path.exists() {
            let judge: serde_json::Value = serde_json::from_slice(&std::fs::read(&judge_path)?)?;
            writeln!(
                text,
                "pairwise eval: n={} winning_score_a={} winning_score_b={}",
                judge["n"], judge["winning_score_a"], judge["winning_score_b"]
            )?;
        }
        write_atomic(&self.out_path("report.txt"), text.as_bytes())?;
        print!("{text}");
        Ok(BTreeMap::new())
    }
}

#[derive(Debug, Deserialize)]
struct IngestMeta {
    n: usize,
    source_digest: String,
}
