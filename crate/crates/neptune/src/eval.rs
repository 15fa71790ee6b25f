//! Filtered-ranking evaluation: MRR and Hits@{1,3,10}.
//!
//! Every augmented triple of a split is a tail-prediction query (head
//! prediction is covered by the reciprocal triples). Candidates are all
//! entities minus the other known-true tails of the `(head, relation)` pair
//! across train, valid, and test. Ties break pessimistically: equal-scored
//! competitors count as ranked ahead of the true tail.

use std::collections::BTreeMap;

use crate::data::{KnowledgeGraph, Triple};
use crate::model::{relation_plane, score_all_tails_with_plane, Activation, ModelParams};

/// Which split to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn triples(self, g: &KnowledgeGraph) -> &[Triple] {
        match self {
            Split::Train => &g.train,
            Split::Valid => &g.valid,
            Split::Test => &g.test,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split '{}' (expected train, valid, or test)",
                other
            )),
        }
    }
}

/// Scoring configuration for evaluation: the activation the checkpoint was
/// trained with, and whether batch norm (with running statistics) applies.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOpts {
    pub activation: Activation,
    pub batch_norm: bool,
}

/// Per-triple filtered ranks and their aggregation.
#[derive(Debug, Clone)]
pub struct RankingReport {
    pub per_triple_ranks: Vec<(Triple, usize)>,
    pub mrr: f64,
    /// Fraction of ranks <= n for n in {1, 3, 10}.
    pub hits: BTreeMap<usize, f64>,
    pub triple_count: usize,
}

impl RankingReport {
    /// Aggregate MRR and Hits from per-triple ranks (compensated summation
    /// for the MRR so aggregation order cannot matter).
    pub fn from_ranks(per_triple_ranks: Vec<(Triple, usize)>) -> Self {
        let n = per_triple_ranks.len();
        assert!(n > 0, "cannot aggregate an empty rank list");
        let mut sum = KahanSum::default();
        for &(_, rank) in &per_triple_ranks {
            debug_assert!(rank >= 1);
            sum.add(1.0 / rank as f64);
        }
        let mrr = sum.value() / n as f64;
        let mut hits = BTreeMap::new();
        for cutoff in [1usize, 3, 10] {
            let count = per_triple_ranks.iter().filter(|(_, r)| *r <= cutoff).count();
            hits.insert(cutoff, count as f64 / n as f64);
        }
        Self {
            per_triple_ranks,
            mrr,
            hits,
            triple_count: n,
        }
    }

    /// Machine-readable one-line summary.
    pub fn summary_line(&self, split_name: &str) -> String {
        format!(
            "split={} mrr={:.6} hits1={:.6} hits3={:.6} hits10={:.6} n={}",
            split_name,
            self.mrr,
            self.hits[&1],
            self.hits[&3],
            self.hits[&10],
            self.triple_count
        )
    }
}

#[derive(Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn rank_from_scores(
    scores: &[f64],
    true_tail: usize,
    filtered: &std::collections::HashSet<usize>,
) -> usize {
    let target = scores[true_tail];
    let mut greater = 0usize;
    let mut equal = 0usize;
    for (cand, &s) in scores.iter().enumerate() {
        if cand == true_tail || filtered.contains(&cand) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    1 + greater + equal
}

/// Filtered rank of one triple under pessimistic tie-breaking:
/// `1 + #{better candidates} + #{equal-scored other candidates}`.
pub fn rank_triple(
    p: &ModelParams,
    g: &KnowledgeGraph,
    triple: Triple,
    opts: ScoreOpts,
) -> usize {
    let plane = relation_plane(p, triple.relation);
    let scores =
        score_all_tails_with_plane(p, &plane, triple.head, opts.activation, opts.batch_norm);
    let filtered = g.candidate_filter(triple.head, triple.relation, triple.tail);
    rank_from_scores(&scores, triple.tail, &filtered)
}

/// Rank every augmented triple of a split and aggregate the metrics.
///
/// Queries are grouped by relation so the relation plane `W x2 w_r` is
/// contracted once per relation rather than once per triple.
pub fn evaluate(
    p: &ModelParams,
    g: &KnowledgeGraph,
    split: Split,
    opts: ScoreOpts,
) -> RankingReport {
    let triples = split.triples(g);
    assert!(!triples.is_empty(), "cannot evaluate an empty {} split", split.name());

    let mut by_relation: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, t) in triples.iter().enumerate() {
        by_relation.entry(t.relation).or_default().push(idx);
    }

    let mut ranks = vec![0usize; triples.len()];
    for (&relation, indices) in &by_relation {
        let plane = relation_plane(p, relation);
        for &idx in indices {
            let t = triples[idx];
            let scores =
                score_all_tails_with_plane(p, &plane, t.head, opts.activation, opts.batch_norm);
            let filtered = g.candidate_filter(t.head, t.relation, t.tail);
            ranks[idx] = rank_from_scores(&scores, t.tail, &filtered);
        }
    }

    let per_triple = triples.iter().copied().zip(ranks).collect();
    RankingReport::from_ranks(per_triple)
}
