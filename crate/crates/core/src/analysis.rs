//! Consistency analysis between difficulty and influence rankings, plus the
//! pairwise LLM-judge evaluation with position-bias cancellation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{JudgeBackend, JudgeReply};
use crate::cache::{cached, CallStats, DiskCache};
use crate::corpus::Corpus;
use crate::difficulty::DifficultyRecord;
use crate::error::{Error, Result};
use crate::influence::InfluenceRecord;

/// Ids ordered by descending metric value, ties broken by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub metric_name: String,
    pub ordered_ids: Vec<String>,
    pub values: BTreeMap<String, f64>,
}

impl Ranking {
    pub fn new(metric_name: impl Into<String>, values: BTreeMap<String, f64>) -> Ranking {
        let mut ordered: Vec<&String> = values.keys().collect();
        ordered.sort_by(|a, b| {
            values[*b]
                .partial_cmp(&values[*a])
                .expect("finite metric values")
                .then_with(|| a.cmp(b))
        });
        Ranking {
            metric_name: metric_name.into(),
            ordered_ids: ordered.into_iter().cloned().collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.ordered_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_ids.is_empty()
    }
}

/// Rank candidates by their own instruction-following difficulty.
pub fn ifd_ranking(records: &[DifficultyRecord]) -> Ranking {
    let values = records
        .iter()
        .map(|r| (r.sample_id.clone(), r.ifd))
        .collect();
    Ranking::new("ifd", values)
}

/// Rank candidates by unweighted in-context influence: the plain mean of
/// per-probe ICI values (every weight replaced by 1/|B|).
pub fn unweighted_ici_ranking(records: &[InfluenceRecord]) -> Ranking {
    let values = records
        .iter()
        .map(|r| {
            let mean = r.per_probe.iter().map(|p| p.ici).sum::<f64>()
                / r.per_probe.len() as f64;
            (r.candidate_id.clone(), mean)
        })
        .collect();
    Ranking::new("ici_unweighted", values)
}

fn check_same_ids(r1: &Ranking, r2: &Ranking) -> Result<()> {
    if r1.values.len() != r2.values.len()
        || !r1.values.keys().eq(r2.values.keys())
    {
        return Err(Error::InvalidArgument(
            "rankings cover different id sets".into(),
        ));
    }
    Ok(())
}

/// |top_m(r1) ∩ top_m(r2)| / m with m = round(p*n), minimum 1.
pub fn overlap_ratio(r1: &Ranking, r2: &Ranking, p: f64) -> Result<f64> {
    check_same_ids(r1, r2)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff fraction must lie in (0, 1], got {p}"
        )));
    }
    let n = r1.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty rankings".into()));
    }
    let m = ((p * n as f64).round() as usize).clamp(1, n);
    let top1: std::collections::BTreeSet<&String> = r1.ordered_ids[..m].iter().collect();
    let hits = r2.ordered_ids[..m]
        .iter()
        .filter(|id| top1.contains(id))
        .count();
    Ok(hits as f64 / m as f64)
}

/// Average ranks (1 = highest value) with tied values sharing their mean
/// position, in the iteration order of `values` (ascending id).
fn average_ranks(values: &BTreeMap<String, f64>) -> Vec<f64> {
    let ids: Vec<&String> = values.keys().collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        values[ids[b]]
            .partial_cmp(&values[ids[a]])
            .expect("finite metric values")
            .then_with(|| ids[a].cmp(ids[b]))
    });
    let mut ranks = vec![0.0; ids.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos + 1;
        while end < order.len() && values[ids[order[end]]] == values[ids[order[pos]]] {
            end += 1;
        }
        // Positions pos..end are tied; each gets the mean 1-based position.
        let mean_rank = (pos + 1 + end) as f64 / 2.0;
        for &idx in &order[pos..end] {
            ranks[idx] = mean_rank;
        }
        pos = end;
    }
    ranks
}

/// Spearman rank correlation over the full lists, with average-rank handling
/// for tied values.
pub fn spearman(r1: &Ranking, r2: &Ranking) -> Result<f64> {
    check_same_ids(r1, r2)?;
    let n = r1.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "spearman requires at least two items".into(),
        ));
    }
    let ranks1 = average_ranks(&r1.values);
    let ranks2 = average_ranks(&r2.values);
    let mean1 = ranks1.iter().sum::<f64>() / n as f64;
    let mean2 = ranks2.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var1 = 0.0;
    let mut var2 = 0.0;
    for (a, b) in ranks1.iter().zip(&ranks2) {
        cov += (a - mean1) * (b - mean2);
        var1 += (a - mean1) * (a - mean1);
        var2 += (b - mean2) * (b - mean2);
    }
    if var1 == 0.0 || var2 == 0.0 {
        return Err(Error::InvalidArgument(
            "constant ranking has no rank correlation".into(),
        ));
    }
    Ok(cov / (var1 * var2).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WinA,
    WinB,
    Tie,
}

/// Two-order verdict: a model wins iff its response is preferred or not
/// worse in both orders, and strictly preferred in at least one. Everything
/// else — including split decisions — is a tie, so exactly one of the three
/// outcomes holds.
///
/// Tuples hold (first-position score, second-position score): A is first in
/// `order_ab`, B is first in `order_ba`.
pub fn decide_verdict(order_ab: (f64, f64), order_ba: (f64, f64)) -> Verdict {
    let (a_ab, b_ab) = order_ab;
    let (b_ba, a_ba) = order_ba;
    let a_not_worse = a_ab >= b_ab && a_ba >= b_ba;
    let a_strict = a_ab > b_ab || a_ba > b_ba;
    let b_not_worse = b_ab >= a_ab && b_ba >= a_ba;
    let b_strict = b_ab > a_ab || b_ba > a_ba;
    if a_not_worse && a_strict {
        Verdict::WinA
    } else if b_not_worse && b_strict {
        Verdict::WinB
    } else {
        Verdict::Tie
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub instruction_id: String,
    /// (A's score, B's score) with A presented first.
    pub order_ab: (f64, f64),
    /// (B's score, A's score) with B presented first.
    pub order_ba: (f64, f64),
    pub verdict: Verdict,
    /// Set when a judge reply stayed unparsable after the reprompt; the
    /// outcome is then recorded as a tie.
    #[serde(default)]
    pub parse_failure: bool,
    pub rationale_ab: String,
    pub rationale_ba: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subject {
    A,
    B,
}

/// winning_score = (wins - losses) / n + 1, in [0, 2]; 1.0 is parity.
pub fn winning_score(outcomes: &[PairwiseOutcome], subject: Subject) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    let (win_verdict, lose_verdict) = match subject {
        Subject::A => (Verdict::WinA, Verdict::WinB),
        Subject::B => (Verdict::WinB, Verdict::WinA),
    };
    let wins = outcomes.iter().filter(|o| o.verdict == win_verdict).count() as f64;
    let losses = outcomes
        .iter()
        .filter(|o| o.verdict == lose_verdict)
        .count() as f64;
    Ok((wins - losses) / outcomes.len() as f64 + 1.0)
}

#[derive(Serialize)]
struct JudgeKey<'a> {
    op: &'static str,
    backend: &'a str,
    question: &'a str,
    answer_first: &'a str,
    answer_second: &'a str,
}

/// Judge backend plus response cache.
pub struct JudgeHarness {
    backend: Box<dyn JudgeBackend>,
    cache: Option<DiskCache>,
    stats: CallStats,
}

impl JudgeHarness {
    pub fn new(backend: Box<dyn JudgeBackend>) -> Self {
        JudgeHarness {
            backend,
            cache: None,
            stats: CallStats::default(),
        }
    }

    pub fn with_cache(backend: Box<dyn JudgeBackend>, cache: DiskCache) -> Self {
        JudgeHarness {
            backend,
            cache: Some(cache),
            stats: CallStats::default(),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    fn judge(&self, question: &str, first: &str, second: &str) -> Result<JudgeReply> {
        match &self.cache {
            Some(cache) => {
                let key = JudgeKey {
                    op: "judge",
                    backend: self.backend.backend_id(),
                    question,
                    answer_first: first,
                    answer_second: second,
                };
                cached(cache, &self.stats, &key, || {
                    self.backend.judge(question, first, second)
                })
            }
            None => {
                let r = self.backend.judge(question, first, second)?;
                self.stats.record_miss();
                Ok(r)
            }
        }
    }
}

/// Judge every instruction's answer pair in both orders (two cached judge
/// calls each) and aggregate subject A's winning score. Unparsable judge
/// replies become flagged ties rather than failures.
pub fn run_pairwise_eval(
    instructions: &Corpus,
    answers_a: &BTreeMap<String, String>,
    answers_b: &BTreeMap<String, String>,
    judge: &JudgeHarness,
) -> Result<(Vec<PairwiseOutcome>, f64)> {
    let mut ids: Vec<&str> = instructions.samples().iter().map(|s| s.id.as_str()).collect();
    ids.sort();
    for id in &ids {
        if !answers_a.contains_key(*id) || !answers_b.contains_key(*id) {
            return Err(Error::InvalidArgument(format!(
                "answer maps do not cover instruction id {id:?}"
            )));
        }
    }

    let mut outcomes = Vec::with_capacity(ids.len());
    for id in ids {
        let sample = instructions.require(id)?;
        let question = match &sample.input {
            Some(input) => format!("{}\n\n{input}", sample.instruction),
            None => sample.instruction.clone(),
        };
        let a = &answers_a[id];
        let b = &answers_b[id];
        let ab = judge.judge(&question, a, b);
        let ba = judge.judge(&question, b, a);
        let outcome = match (ab, ba) {
            (Ok(ab), Ok(ba)) => PairwiseOutcome {
                instruction_id: id.to_string(),
                order_ab: (ab.score_first, ab.score_second),
                order_ba: (ba.score_first, ba.score_second),
                verdict: decide_verdict(
                    (ab.score_first, ab.score_second),
                    (ba.score_first, ba.score_second),
                ),
                parse_failure: false,
                rationale_ab: ab.rationale,
                rationale_ba: ba.rationale,
            },
            (Err(Error::JudgeUnparsable { raw }), _)
            | (_, Err(Error::JudgeUnparsable { raw })) => PairwiseOutcome {
                instruction_id: id.to_string(),
                order_ab: (0.0, 0.0),
                order_ba: (0.0, 0.0),
                verdict: Verdict::Tie,
                parse_failure: true,
                rationale_ab: format!("unparsable judge reply: {raw}"),
                rationale_ba: String::new(),
            },
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        outcomes.push(outcome);
    }
    let score_a = winning_score(&outcomes, Subject::A)?;
    Ok((outcomes, score_a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffOverlap {
    pub cutoff: f64,
    pub overlap: f64,
}

/// The difficulty-vs-influence consistency table: overlap at each cutoff
/// plus the full-list Spearman correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub metric_a: String,
    pub metric_b: String,
    pub n: usize,
    pub overlaps: Vec<CutoffOverlap>,
    pub spearman: f64,
}

pub const DEFAULT_CUTOFFS: [f64; 3] = [0.1, 0.3, 0.5];

pub fn consistency_report(
    r1: &Ranking,
    r2: &Ranking,
    cutoffs: &[f64],
) -> Result<ConsistencyReport> {
    let overlaps = cutoffs
        .iter()
        .map(|&p| {
            Ok(CutoffOverlap {
                cutoff: p,
                overlap: overlap_ratio(r1, r2, p)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConsistencyReport {
        metric_a: r1.metric_name.clone(),
        metric_b: r2.metric_name.clone(),
        n: r1.len(),
        overlaps,
        spearman: spearman(r1, r2)?,
    })
}
