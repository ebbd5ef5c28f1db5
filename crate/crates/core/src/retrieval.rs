//! Exact dot-product search and TREC-style ranking metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::id_order;
use crate::error::{Error, Result};
use crate::record::TextRecord;
use crate::teacher::EmbeddingVector;
use crate::trainer::StudentModel;
use crate::tensor::dot;

/// Graded relevance judgments keyed by query then document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one judgment; a repeated `(qid, did)` pair is an error.
    pub fn insert(&mut self, qid: &str, did: &str, rel: u32) -> Result<()> {
        let docs = self.judgments.entry(qid.into()).or_default();
        if docs.insert(did.into(), rel).is_some() {
            return Err(Error::DuplicateId(alloc::format!("{qid} {did}")));
        }
        Ok(())
    }

    pub fn rel(&self, qid: &str, did: &str) -> u32 {
        self.judgments
            .get(qid)
            .and_then(|d| d.get(did))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// `(qid, did, rel)` triples in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, d)| d.iter().map(move |(d, r)| (q.as_str(), d.as_str(), *r)))
    }

    /// Number of judgments.
    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub doc_id: String,
    pub score: f64,
}

/// Per-query ranked lists in query order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRanking {
    pub queries: Vec<(String, Vec<Scored>)>,
}

impl RunRanking {
    pub fn get(&self, qid: &str) -> Option<&[Scored]> {
        self.queries
            .iter()
            .find(|(q, _)| q == qid)
            .map(|(_, r)| r.as_slice())
    }

    fn by_query(&self) -> BTreeMap<&str, &[Scored]> {
        self.queries
            .iter()
            .map(|(q, r)| (q.as_str(), r.as_slice()))
            .collect()
    }
}

/// Ranking order: higher score first, then lower doc id.
pub fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| id_order(&a.doc_id, &b.doc_id))
}

/// Immutable flat store of passage vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl PassageIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_vectors<'a>(dim: usize, items: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<Self> {
        let mut index = Self::new(dim);
        for (id, v) in items {
            index.push(id, v)?;
        }
        Ok(index)
    }

    pub fn push(&mut self, id: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "passage index",
                left: alloc::vec![self.dim],
                right: alloc::vec![v.len()],
            });
        }
        self.ids.push(id.into());
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Top-`k` passages for one query by dot product.
pub fn search_one(query: &[f64], index: &PassageIndex, k: usize) -> Result<Vec<Scored>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if query.len() != index.dim {
        return Err(Error::ShapeMismatch {
            op: "exact search",
            left: alloc::vec![index.dim],
            right: alloc::vec![query.len()],
        });
    }
    let mut all: Vec<Scored> = (0..index.len())
        .map(|i| Scored {
            doc_id: index.ids[i].clone(),
            score: dot(query, index.vector(i)),
        })
        .collect();
    if all.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite { op: "exact search" });
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_by(rank_order);
    Ok(all)
}

/// Exhaustive search for every query, preserving query order.
pub fn exact_search<'a>(
    queries: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    index: &PassageIndex,
    k: usize,
) -> Result<RunRanking> {
    let mut run = RunRanking::default();
    for (qid, v) in queries {
        run.queries.push((qid.into(), search_one(v, index, k)?));
    }
    Ok(run)
}

/// Gain applied to a relevance grade in DCG.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `rel`
    #[default]
    Linear,
    /// `2^rel − 1`
    Exponential,
}

impl Gain {
    fn apply(self, rel: u32) -> f64 {
        match self {
            Gain::Linear => rel as f64,
            Gain::Exponential => libm::exp2(rel as f64) - 1.0,
        }
    }
}

/// Per-query values and their mean over evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub per_query: BTreeMap<String, f64>,
    pub mean: Option<f64>,
}

impl MetricResult {
    fn from_map(per_query: BTreeMap<String, f64>) -> Self {
        let mean = if per_query.is_empty() {
            None
        } else {
            Some(per_query.values().sum::<f64>() / per_query.len() as f64)
        };
        Self { per_query, mean }
    }
}

/// nDCG@k over judged queries with at least one positive judgment.
/// Queries absent from the run score 0.
pub fn ndcg_at_k(run: &RunRanking, qrels: &Qrels, k: usize, gain: Gain) -> MetricResult {
    let ranked = run.by_query();
    let mut out = BTreeMap::new();
    for (qid, docs) in &qrels.judgments {
        let mut ideal: Vec<u32> = docs.values().copied().filter(|&r| r > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let discount = |i: usize| 1.0 / libm::log2(i as f64 + 2.0);
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| gain.apply(r) * discount(i))
            .sum();
        let dcg: f64 = ranked
            .get(qid.as_str())
            .map(|r| {
                r.iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, s)| gain.apply(docs.get(&s.doc_id).copied().unwrap_or(0)) * discount(i))
                    .sum()
            })
            .unwrap_or(0.0);
        out.insert(qid.clone(), dcg / idcg);
    }
    MetricResult::from_map(out)
}

/// Recall@k counting documents with `rel ≥ min_rel` as relevant.
pub fn recall_at_k(run: &RunRanking, qrels: &Qrels, k: usize, min_rel: u32) -> MetricResult {
    let ranked = run.by_query();
    let min_rel = min_rel.max(1);
    let mut out = BTreeMap::new();
    for (qid, docs) in &qrels.judgments {
        let relevant = docs.values().filter(|&&r| r >= min_rel).count();
        if relevant == 0 {
            continue;
        }
        let hits = ranked
            .get(qid.as_str())
            .map(|r| {
                r.iter()
                    .take(k)
                    .filter(|s| docs.get(&s.doc_id).is_some_and(|&r| r >= min_rel))
                    .count()
            })
            .unwrap_or(0);
        out.insert(qid.clone(), hits as f64 / relevant as f64);
    }
    MetricResult::from_map(out)
}

/// Which vectors one side of a retrieval pairing uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Teacher,
    StudentFinal,
    StudentBottleneck,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Teacher => "teacher",
            Side::StudentFinal => "student-final",
            Side::StudentBottleneck => "student-bottleneck",
        }
    }

    pub fn is_student(self) -> bool {
        self != Side::Teacher
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderPairing {
    pub query: Side,
    pub passage: Side,
}

impl EncoderPairing {
    pub const TEACHER: Self = Self::new(Side::Teacher, Side::Teacher);
    pub const Q_ONLY: Self = Self::new(Side::StudentFinal, Side::Teacher);
    pub const P_ONLY: Self = Self::new(Side::Teacher, Side::StudentFinal);
    pub const Q_AND_P: Self = Self::new(Side::StudentFinal, Side::StudentFinal);
    pub const BOTTLENECK: Self = Self::new(Side::StudentBottleneck, Side::StudentBottleneck);

    pub const fn new(query: Side, passage: Side) -> Self {
        Self { query, passage }
    }

    /// Rejects pairings whose sides cannot share a vector space.
    pub fn validate(&self) -> Result<()> {
        let (q, p) = (self.query, self.passage);
        if (q == Side::StudentBottleneck) != (p == Side::StudentBottleneck) {
            return Err(Error::IncompatiblePairing(alloc::format!(
                "{} vectors live in the student's own space and cannot be compared with {} vectors; \
                 bottleneck is only valid on both sides",
                Side::StudentBottleneck.as_str(),
                if q == Side::StudentBottleneck { p.as_str() } else { q.as_str() },
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match (self.query, self.passage) {
            (Side::Teacher, Side::Teacher) => "teacher",
            (Side::StudentFinal, Side::Teacher) => "Q only",
            (Side::Teacher, Side::StudentFinal) => "P only",
            (Side::StudentFinal, Side::StudentFinal) => "Q&P",
            (Side::StudentBottleneck, Side::StudentBottleneck) => "Q&P bottleneck",
            _ => "invalid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let p = match s.to_ascii_lowercase().replace([' ', '_', '-'], "").as_str() {
            "teacher" => Self::TEACHER,
            "qonly" | "q" => Self::Q_ONLY,
            "ponly" | "p" => Self::P_ONLY,
            "q&p" | "qp" | "qandp" | "final" => Self::Q_AND_P,
            "bottleneck" | "q&pbottleneck" => Self::BOTTLENECK,
            _ => {
                let (q, p) = s
                    .split_once('/')
                    .ok_or_else(|| Error::invalid(alloc::format!("unknown pairing {s:?}")))?;
                Self::new(parse_side(q)?, parse_side(p)?)
            }
        };
        p.validate()?;
        Ok(p)
    }
}

fn parse_side(s: &str) -> Result<Side> {
    match s.trim() {
        "teacher" => Ok(Side::Teacher),
        "student-final" | "final" => Ok(Side::StudentFinal),
        "student-bottleneck" | "bottleneck" => Ok(Side::StudentBottleneck),
        other => Err(Error::invalid(alloc::format!("unknown pairing side {other:?}"))),
    }
}

/// Evaluation summary for one pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairing: String,
    pub query_side: Side,
    pub passage_side: Side,
    pub dim: usize,
    pub num_queries: usize,
    pub num_passages: usize,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub metrics: BTreeMap<String, MetricResult>,
    pub wall_time_ms: Option<u64>,
}

impl EvalReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).and_then(|m| m.mean)
    }

    pub fn ndcg10(&self) -> f64 {
        self.mean("ndcg@10").unwrap_or(0.0)
    }
}

/// Searches with the given vectors and computes nDCG@k and Recall@k (at
/// `min_rel` 1 and 2) for every `k` in `k_list`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_vectors<'a>(
    pairing: EncoderPairing,
    queries: &[(&'a str, &'a [f64])],
    index: &PassageIndex,
    qrels: &Qrels,
    k_list: &[usize],
    gain: Gain,
    seed: u64,
) -> Result<(EvalReport, RunRanking)> {
    pairing.validate()?;
    let depth = k_list.iter().copied().max().unwrap_or(10).max(1);
    let run = exact_search(queries.iter().copied(), index, depth)?;
    let mut metrics = BTreeMap::new();
    for &k in k_list {
        metrics.insert(alloc::format!("ndcg@{k}"), ndcg_at_k(&run, qrels, k, gain));
        metrics.insert(alloc::format!("recall@{k}"), recall_at_k(&run, qrels, k, 1));
        metrics.insert(alloc::format!("recall@{k}_rel2"), recall_at_k(&run, qrels, k, 2));
    }
    let report = EvalReport {
        pairing: pairing.label().into(),
        query_side: pairing.query,
        passage_side: pairing.passage,
        dim: index.dim(),
        num_queries: queries.len(),
        num_passages: index.len(),
        seed,
        config_hash: None,
        metrics,
        wall_time_ms: None,
    };
    Ok((report, run))
}

/// Queries, passages and judgments of one evaluation collection.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub queries: Vec<TextRecord>,
    pub passages: Vec<TextRecord>,
    pub qrels: Qrels,
}

/// Encodes both sides of `pairing` and evaluates them with
/// [`evaluate_vectors`]. `teacher` supplies cached vectors by record id.
pub fn evaluate_pairing(
    pairing: EncoderPairing,
    set: &EvalSet,
    teacher: Option<&BTreeMap<String, EmbeddingVector>>,
    student: Option<&StudentModel>,
    k_list: &[usize],
    gain: Gain,
    seed: u64,
) -> Result<(EvalReport, RunRanking)> {
    pairing.validate()?;
    let encode = |side: Side, recs: &[TextRecord]| -> Result<Vec<Vec<f64>>> {
        match side {
            Side::Teacher => {
                let cache = teacher.ok_or_else(|| Error::IncompatiblePairing("pairing needs teacher vectors".into()))?;
                let missing: Vec<String> = recs.iter().filter(|r| !cache.contains_key(&r.id)).map(|r| r.id.clone()).collect();
                if !missing.is_empty() {
                    return Err(Error::MissingTargets { ids: missing });
                }
                Ok(recs.iter().map(|r| cache[&r.id].values().to_vec()).collect())
            }
            Side::StudentFinal | Side::StudentBottleneck => {
                let model = student.ok_or_else(|| Error::IncompatiblePairing("pairing needs a student model".into()))?;
                recs.iter()
                    .map(|r| {
                        let e = model.embed(r)?;
                        Ok(if side == Side::StudentFinal { e.final_ } else { e.bottleneck }.into_values())
                    })
                    .collect()
            }
        }
    };
    let qv = encode(pairing.query, &set.queries)?;
    let pv = encode(pairing.passage, &set.passages)?;
    let dim = pv.first().or(qv.first()).map_or(0, Vec::len);
    if let Some(v) = qv.iter().chain(&pv).find(|v| v.len() != dim) {
        return Err(Error::IncompatiblePairing(alloc::format!(
            "{} side emits {}-dim vectors but {} side emits {}-dim vectors",
            pairing.query.as_str(),
            qv.first().map_or(v.len(), Vec::len),
            pairing.passage.as_str(),
            dim
        )));
    }
    let index = PassageIndex::from_vectors(dim, set.passages.iter().map(|p| p.id.as_str()).zip(pv.iter().map(Vec::as_slice)))?;
    let queries: Vec<(&str, &[f64])> = set.queries.iter().map(|q| q.id.as_str()).zip(qv.iter().map(Vec::as_slice)).collect();
    evaluate_vectors(pairing, &queries, &index, &set.qrels, k_list, gain, seed)
}
