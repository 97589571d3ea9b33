//! Per-candidate probe construction: nearest-neighbor retrieval, k-means
//! clustering of the neighborhood, and a per-cluster complexity argmax.
//!
//! The probe set is what the candidate gets to teach: semantically related
//! (kNN), spread over the local semantic modes (k-means), and challenging
//! (highest-complexity member of each cluster).

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::ComplexityBackend;
use crate::cache::{cached, CallStats, DiskCache};
use crate::corpus::Corpus;
use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 100;
const CONVERGENCE_SHIFT: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub member_ids: Vec<String>,
    pub centroid: Vec<f64>,
}

/// A partition of a candidate's neighbor set. Returned clusters are never
/// empty; with fully degenerate geometry fewer than `k` clusters come back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub candidate_id: String,
    pub clusters: Vec<Cluster>,
    pub k: usize,
    pub seed: u64,
}

/// K-means over the neighbor vectors: k-means++ initialization from `seed`,
/// Lloyd iterations until the max centroid shift drops below 1e-6 or 100
/// iterations. Distances are l2 on the raw vectors, matching retrieval.
/// With `neighbor_ids.len() <= k` every neighbor becomes its own cluster.
pub fn cluster_neighbors(
    index: &EmbeddingIndex,
    candidate_id: &str,
    neighbor_ids: &[String],
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    if neighbor_ids.is_empty() {
        return Err(Error::InvalidArgument("empty neighbor list".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let points: Vec<(&str, &[f64])> = neighbor_ids
        .iter()
        .map(|id| {
            index
                .get(id)
                .map(|v| (id.as_str(), v))
                .ok_or_else(|| Error::UnknownId { id: id.clone() })
        })
        .collect::<Result<_>>()?;

    if points.len() <= k {
        let clusters = points
            .iter()
            .map(|(id, v)| Cluster {
                member_ids: vec![id.to_string()],
                centroid: v.to_vec(),
            })
            .collect();
        return Ok(ClusterAssignment {
            candidate_id: candidate_id.to_string(),
            clusters,
            k,
            seed,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&points, k, &mut rng);
    let mut assignment = assign(&points, &centroids);
    repair_empty(&points, &mut centroids, &mut assignment);

    for _ in 0..MAX_LLOYD_ITERS {
        let new_centroids = centroid_means(&points, &assignment, &centroids);
        let shift = max_shift(&centroids, &new_centroids);
        centroids = new_centroids;
        assignment = assign(&points, &centroids);
        repair_empty(&points, &mut centroids, &mut assignment);
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }

    let mut clusters = Vec::new();
    for c in 0..k {
        let member_ids: Vec<String> = points
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == c)
            .map(|((id, _), _)| id.to_string())
            .collect();
        if member_ids.is_empty() {
            continue;
        }
        let members: Vec<&[f64]> = points
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == c)
            .map(|((_, v), _)| *v)
            .collect();
        clusters.push(Cluster {
            member_ids,
            centroid: mean(&members),
        });
    }
    Ok(ClusterAssignment {
        candidate_id: candidate_id.to_string(),
        clusters,
        k,
        seed,
    })
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

fn mean(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= vectors.len() as f64;
    }
    out
}

fn kmeans_pp_init(points: &[(&str, &[f64])], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut centroids: Vec<Vec<f64>> = vec![points[first].1.to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|(_, v)| l2_squared(v, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // Every remaining point coincides with a centroid; take the first
            // point in neighbor order (repair handles the duplicates).
            0
        } else {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = points[idx].1.to_vec();
        for (slot, (_, v)) in d2.iter_mut().zip(points) {
            *slot = slot.min(l2_squared(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point; ties go to the lowest cluster index.
fn assign(points: &[(&str, &[f64])], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|(_, v)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = l2_squared(v, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Reseed each empty cluster at the point farthest from its assigned
/// centroid. When even the farthest point sits exactly on its centroid the
/// geometry is degenerate and the cluster stays empty.
fn repair_empty(
    points: &[(&str, &[f64])],
    centroids: &mut [Vec<f64>],
    assignment: &mut Vec<usize>,
) {
    for _ in 0..centroids.len() {
        let counts = cluster_counts(assignment, centroids.len());
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let (far_idx, far_d) = points
            .iter()
            .enumerate()
            .map(|(i, (_, v))| (i, l2_squared(v, &centroids[assignment[i]])))
            .max_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .expect("finite distances")
                    // Prefer the earliest point on ties.
                    .then(b.0.cmp(&a.0))
            })
            .expect("points non-empty");
        if far_d == 0.0 {
            return;
        }
        centroids[empty] = points[far_idx].1.to_vec();
        *assignment = assign(points, centroids);
    }
}

fn cluster_counts(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &a in assignment {
        counts[a] += 1;
    }
    counts
}

/// New centroids as member means; empty clusters keep their old centroid.
fn centroid_means(
    points: &[(&str, &[f64])],
    assignment: &[usize],
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    (0..old.len())
        .map(|c| {
            let members: Vec<&[f64]> = points
                .iter()
                .zip(assignment)
                .filter(|(_, &a)| a == c)
                .map(|((_, v), _)| *v)
                .collect();
            if members.is_empty() {
                old[c].clone()
            } else {
                mean(&members)
            }
        })
        .collect()
}

fn max_shift(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| l2_squared(a, b).sqrt())
        .fold(0.0, f64::max)
}

/// Complexity scoring with the backend-contract check and response caching.
pub struct ComplexityScorer {
    backend: Box<dyn ComplexityBackend>,
    cache: Option<DiskCache>,
    stats: CallStats,
}

#[derive(Serialize)]
struct ComplexityKey<'a> {
    op: &'static str,
    backend: &'a str,
    instruction: &'a str,
}

const COMPLEXITY_RETRIES: usize = 3;

impl ComplexityScorer {
    pub fn new(backend: Box<dyn ComplexityBackend>) -> Self {
        ComplexityScorer {
            backend,
            cache: None,
            stats: CallStats::default(),
        }
    }

    pub fn with_cache(backend: Box<dyn ComplexityBackend>, cache: DiskCache) -> Self {
        ComplexityScorer {
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

    pub fn score(&self, instruction: &str) -> Result<f64> {
        let fetch = || {
            let mut last = None;
            for attempt in 0..COMPLEXITY_RETRIES {
                match self.backend.complexity(instruction) {
                    Ok(s) => return Ok(s),
                    Err(e) => {
                        last = Some(e);
                        if attempt + 1 < COMPLEXITY_RETRIES {
                            std::thread::sleep(std::time::Duration::from_millis(
                                20 * (attempt as u64 + 1),
                            ));
                        }
                    }
                }
            }
            Err(last.expect("at least one attempt"))
        };
        let score = match &self.cache {
            Some(cache) => {
                let key = ComplexityKey {
                    op: "complexity",
                    backend: self.backend.backend_id(),
                    instruction,
                };
                cached(cache, &self.stats, &key, fetch)?
            }
            None => {
                let s = fetch()?;
                self.stats.record_miss();
                s
            }
        };
        if !(1.0..=6.0).contains(&score) {
            return Err(Error::backend(
                self.backend.backend_id(),
                format!("complexity score {score} outside [1, 6]"),
            ));
        }
        Ok(score)
    }

    pub fn score_many(&self, instructions: &[String]) -> Result<Vec<f64>> {
        instructions.iter().map(|i| self.score(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_neighbors: usize,
    pub k_clusters: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_neighbors: 32,
            k_clusters: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProvenance {
    pub cluster_index: usize,
    pub complexity: f64,
}

/// The probes a candidate is evaluated against: one per cluster, ordered by
/// cluster index, never containing the candidate itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub candidate_id: String,
    pub probe_ids: Vec<String>,
    pub provenance: Vec<ProbeProvenance>,
}

/// kNN retrieval, neighborhood clustering, then the per-cluster complexity
/// argmax (ties by ascending id).
pub fn build_probe_set(
    corpus: &Corpus,
    index: &EmbeddingIndex,
    candidate_id: &str,
    cfg: &ProbeConfig,
    complexity: &ComplexityScorer,
) -> Result<ProbeSet> {
    if index.len() <= cfg.n_neighbors {
        return Err(Error::InvalidArgument(format!(
            "corpus size {} must exceed n_neighbors {}",
            index.len(),
            cfg.n_neighbors
        )));
    }
    let neighbors = index.knn(candidate_id, cfg.n_neighbors)?;
    let assignment =
        cluster_neighbors(index, candidate_id, &neighbors, cfg.k_clusters, cfg.seed)?;

    let mut probe_ids = Vec::new();
    let mut provenance = Vec::new();
    for (cluster_index, cluster) in assignment.clusters.iter().enumerate() {
        let mut best: Option<(&str, f64)> = None;
        for id in &cluster.member_ids {
            let sample = corpus.require(id)?;
            let score = complexity.score(&sample.instruction)?;
            best = match best {
                None => Some((id, score)),
                Some((bid, bscore)) => {
                    if score > bscore || (score == bscore && id.as_str() < bid) {
                        Some((id, score))
                    } else {
                        Some((bid, bscore))
                    }
                }
            };
        }
        let (id, score) = best.expect("clusters are non-empty");
        probe_ids.push(id.to_string());
        provenance.push(ProbeProvenance {
            cluster_index,
            complexity: score,
        });
    }
    Ok(ProbeSet {
        candidate_id: candidate_id.to_string(),
        probe_ids,
        provenance,
    })
}
