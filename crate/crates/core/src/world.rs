//! A synthetic world of topics, texts and simulated teachers.
//!
//! Each record belongs to one topic. Its text mixes words drawn from the
//! topic's word pool with shared filler words, and a simulated teacher
//! embeds it as `normalize(O · (topic + σ·noise))` where `O` is a random
//! full-rank observer matrix private to that teacher and the noise stream
//! is keyed on `(world seed, teacher name, record id)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Kind, TextRecord};
use crate::retrieval::Qrels;
use crate::rng::SeededRng;
use crate::teacher::{EmbeddingVector, TeacherSource, TeacherSpec};
use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub topics: usize,
    pub ambient_dim: usize,
    pub sigma: f64,
    pub words_per_topic: usize,
    /// Zipf exponent of word frequencies within each pool; 0 is uniform.
    pub word_zipf: f64,
    pub filler_words: usize,
    pub query_topic_words: usize,
    pub query_filler_words: usize,
    pub passage_topic_words: usize,
    pub passage_filler_words: usize,
    /// Probability that a topic-word slot draws from another topic.
    pub off_topic_rate: f64,
    pub train_queries: usize,
    pub train_passages: usize,
    pub eval_queries: usize,
    pub eval_passages: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            topics: 8,
            ambient_dim: 32,
            sigma: 0.05,
            words_per_topic: 150,
            word_zipf: 1.0,
            filler_words: 40,
            query_topic_words: 3,
            query_filler_words: 1,
            passage_topic_words: 6,
            passage_filler_words: 4,
            off_topic_rate: 0.05,
            train_queries: 1500,
            train_passages: 4500,
            eval_queries: 40,
            eval_passages: 200,
        }
    }
}

/// Records and judgments produced by [`SyntheticWorld::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldData {
    /// Training pool, queries first, ids `q<n>` and `p<n>`.
    pub train: Vec<TextRecord>,
    /// Held-out queries, ids `eq<n>`.
    pub eval_queries: Vec<TextRecord>,
    /// Held-out passages, ids `ep<n>`.
    pub eval_passages: Vec<TextRecord>,
    /// Every held-out passage sharing a query's topic has relevance 1.
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    seed: u64,
    sigma: f64,
    topics: Vec<Vec<f64>>,
    assignments: BTreeMap<String, usize>,
}

/// A simulated teacher bound to its observer matrix `[d_t × D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTeacher {
    pub spec: TeacherSpec,
    observer: Tensor,
}

impl SimTeacher {
    pub fn observer(&self) -> &Tensor {
        &self.observer
    }
}

impl SyntheticWorld {
    /// Builds a world from explicit topic vectors (normalized here) and
    /// record-to-topic assignments.
    pub fn from_parts(
        seed: u64,
        sigma: f64,
        topics: Vec<Vec<f64>>,
        assignments: BTreeMap<String, usize>,
    ) -> Result<Self> {
        if topics.is_empty() {
            return Err(Error::Empty("topics"));
        }
        if !(sigma >= 0.0) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        let d = topics[0].len();
        let mut unit = Vec::with_capacity(topics.len());
        for t in topics {
            if t.len() != d {
                return Err(Error::invalid("topic vectors differ in dimension"));
            }
            unit.push(EmbeddingVector::normalized(t)?.into_values());
        }
        for i in 0..unit.len() {
            for j in 0..i {
                if unit[i] == unit[j] {
                    return Err(Error::invalid(format!("topics {j} and {i} coincide")));
                }
            }
        }
        if let Some((id, _)) = assignments.iter().find(|(_, &t)| t >= unit.len()) {
            return Err(Error::invalid(format!("record {id:?} assigned to a missing topic")));
        }
        Ok(Self {
            seed,
            sigma,
            topics: unit,
            assignments,
        })
    }

    /// Draws topics, vocabularies and records from `config`.
    pub fn generate(config: &WorldConfig) -> Result<(Self, WorldData)> {
        if config.topics < 2 || config.ambient_dim == 0 || config.words_per_topic == 0 {
            return Err(Error::invalid("world needs ≥ 2 topics and positive sizes"));
        }
        let mut rng = SeededRng::keyed(config.seed, &["world"]);
        let topics: Vec<Vec<f64>> = (0..config.topics)
            .map(|_| (0..config.ambient_dim).map(|_| rng.normal()).collect())
            .collect();

        let mut lexicon = Lexicon::new(config.seed);
        let topic_words: Vec<Vec<String>> = (0..config.topics)
            .map(|_| (0..config.words_per_topic).map(|_| lexicon.fresh()).collect())
            .collect();
        let filler: Vec<String> = (0..config.filler_words).map(|_| lexicon.fresh()).collect();

        let topic_cdf = zipf_cdf(config.words_per_topic, config.word_zipf);
        let filler_cdf = zipf_cdf(config.filler_words, config.word_zipf);
        let mut assignments = BTreeMap::new();
        let mut make = |rng: &mut SeededRng, id: String, kind: Kind, topic: usize| {
            let (nt, nf) = match kind {
                Kind::Query => (config.query_topic_words, config.query_filler_words),
                Kind::Passage => (config.passage_topic_words, config.passage_filler_words),
            };
            let mut words: Vec<&str> = Vec::with_capacity(nt + nf);
            for _ in 0..nt {
                let t = if rng.uniform() < config.off_topic_rate {
                    rng.below(config.topics)
                } else {
                    topic
                };
                words.push(&topic_words[t][draw(rng, &topic_cdf)]);
            }
            if !filler.is_empty() {
                for _ in 0..nf {
                    words.push(&filler[draw(rng, &filler_cdf)]);
                }
            }
            rng.shuffle(&mut words);
            assignments.insert(id.clone(), topic);
            TextRecord::new(id, kind, words.join(" "))
        };

        let mut train = Vec::with_capacity(config.train_queries + config.train_passages);
        for i in 0..config.train_queries {
            let t = rng.below(config.topics);
            train.push(make(&mut rng, format!("q{i}"), Kind::Query, t));
        }
        for i in 0..config.train_passages {
            let t = rng.below(config.topics);
            train.push(make(&mut rng, format!("p{i}"), Kind::Passage, t));
        }
        let eval_queries: Vec<TextRecord> = (0..config.eval_queries)
            .map(|i| make(&mut rng, format!("eq{i}"), Kind::Query, i % config.topics))
            .collect();
        let eval_passages: Vec<TextRecord> = (0..config.eval_passages)
            .map(|i| make(&mut rng, format!("ep{i}"), Kind::Passage, i % config.topics))
            .collect();

        let mut qrels = Qrels::new();
        for q in &eval_queries {
            for p in &eval_passages {
                if assignments[&q.id] == assignments[&p.id] {
                    qrels.insert(&q.id, &p.id, 1)?;
                }
            }
        }
        let world = Self::from_parts(config.seed, config.sigma, topics, assignments)?;
        Ok((
            world,
            WorldData {
                train,
                eval_queries,
                eval_passages,
                qrels,
            },
        ))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn ambient_dim(&self) -> usize {
        self.topics[0].len()
    }

    pub fn topic_count(&self) -> usize {
        self.topics.len()
    }

    pub fn topic_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Binds `spec` to a Gaussian observer drawn from the world seed and the
    /// teacher name, redrawing until it has full rank.
    pub fn teacher(&self, spec: &TeacherSpec) -> Result<SimTeacher> {
        spec.validate()?;
        let (dt, d) = (spec.dim, self.ambient_dim());
        let salt = source_salt(spec);
        for attempt in 0u32..16 {
            let mut rng = SeededRng::keyed(self.seed, &["observer", &spec.name, &salt, &format!("{attempt}")]);
            let data: Vec<f64> = (0..dt * d).map(|_| rng.normal()).collect();
            let observer = Tensor::matrix(dt, d, data)?;
            if rank(&observer) == dt.min(d) {
                return Ok(SimTeacher {
                    spec: spec.clone(),
                    observer,
                });
            }
        }
        Err(Error::invalid("could not draw a full-rank observer"))
    }

    /// Binds `spec` to an explicit observer `[spec.dim × D]`.
    pub fn teacher_with_observer(&self, spec: &TeacherSpec, observer: Tensor) -> Result<SimTeacher> {
        let (r, c) = observer.dims2("observer")?;
        if r != spec.dim || c != self.ambient_dim() {
            return Err(Error::ShapeMismatch {
                op: "observer",
                left: alloc::vec![spec.dim, self.ambient_dim()],
                right: alloc::vec![r, c],
            });
        }
        Ok(SimTeacher {
            spec: spec.clone(),
            observer,
        })
    }

    /// The teacher's unit embedding of `rec`.
    pub fn simulate_teacher(&self, teacher: &SimTeacher, rec: &TextRecord) -> Result<EmbeddingVector> {
        let topic = self.topic_of(&rec.id).ok_or_else(|| Error::UnknownRecord(rec.id.clone()))?;
        let salt = source_salt(&teacher.spec);
        let mut rng = SeededRng::keyed(self.seed, &["noise", &teacher.spec.name, &salt, &rec.id]);
        let latent: Vec<f64> = self.topics[topic]
            .iter()
            .map(|t| t + self.sigma * rng.normal())
            .collect();
        let (dt, d) = teacher.observer.dims2("observer")?;
        let out: Vec<f64> = (0..dt)
            .map(|i| dot(&teacher.observer.data()[i * d..(i + 1) * d], &latent))
            .collect();
        EmbeddingVector::normalized(out)
    }
}

/// Cumulative probabilities of ranks `0..n` with weight `(rank + 1)^-s`.
fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (0..n)
        .map(|r| {
            acc += libm::pow(r as f64 + 1.0, -s);
            acc
        })
        .collect();
    cdf.iter_mut().for_each(|c| *c /= acc);
    cdf
}

fn draw(rng: &mut SeededRng, cdf: &[f64]) -> usize {
    let u = rng.uniform();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn source_salt(spec: &TeacherSpec) -> String {
    match spec.source {
        TeacherSource::Simulated { seed } => format!("{seed}"),
        _ => String::new(),
    }
}

/// Numerical rank by Gaussian elimination with partial pivoting.
fn rank(m: &Tensor) -> usize {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut a = m.data().to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    let tol = 1e-10 * scale * rows.max(cols) as f64;
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (piv, best) = (r..rows)
            .map(|i| (i, a[i * cols + c].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        for j in 0..cols {
            a.swap(r * cols + j, piv * cols + j);
        }
        for i in r + 1..rows {
            let f = a[i * cols + c] / a[r * cols + c];
            for j in c..cols {
                a[i * cols + j] -= f * a[r * cols + j];
            }
        }
        r += 1;
    }
    r
}

/// Generator of distinct pronounceable pseudo-words.
struct Lexicon {
    rng: SeededRng,
    used: BTreeSet<String>,
}

impl Lexicon {
    const ONSETS: &'static [&'static str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "kl", "tr",
    ];
    const VOWELS: &'static [&'static str] = &["a", "e", "i", "o", "u", "ai", "ou"];

    fn new(seed: u64) -> Self {
        Self {
            rng: SeededRng::keyed(seed, &["lexicon"]),
            used: BTreeSet::new(),
        }
    }

    fn fresh(&mut self) -> String {
        loop {
            let syllables = 2 + self.rng.below(2);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(Self::ONSETS[self.rng.below(Self::ONSETS.len())]);
                w.push_str(Self::VOWELS[self.rng.below(Self::VOWELS.len())]);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny(sigma: f64) -> SyntheticWorld {
        let topics = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let assignments = [("a", 0), ("b", 0), ("c", 1), ("d", 2)]
            .into_iter()
            .map(|(k, v)| (String::from(k), v))
            .collect();
        SyntheticWorld::from_parts(1, sigma, topics, assignments).unwrap()
    }

    #[test]
    fn noiseless_same_topic_is_identical() {
        let w = tiny(0.0);
        let t = w.teacher(&TeacherSpec::sim_cohere(0)).unwrap();
        let a = w.simulate_teacher(&t, &TextRecord::passage("a", "x")).unwrap();
        let b = w.simulate_teacher(&t, &TextRecord::passage("b", "y")).unwrap();
        assert_eq!(a, b);
        assert!((a.values().iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_observer_preserves_orthogonality() {
        let w = tiny(0.0);
        let mut spec = TeacherSpec::sim_cohere(0);
        spec.dim = 3;
        let t = w.teacher_with_observer(&spec, Tensor::identity(3)).unwrap();
        let a = w.simulate_teacher(&t, &TextRecord::passage("a", "")).unwrap();
        let c = w.simulate_teacher(&t, &TextRecord::passage("c", "")).unwrap();
        assert_eq!(a.cosine(&c), 0.0);
    }

    #[test]
    fn noisy_embeddings_are_deterministic_and_teacher_specific() {
        let w = tiny(0.3);
        let t1 = w.teacher(&TeacherSpec::sim_cohere(0)).unwrap();
        let t2 = w.teacher(&TeacherSpec::sim_openai(0)).unwrap();
        let r = TextRecord::query("a", "x");
        let e1 = w.simulate_teacher(&t1, &r).unwrap();
        assert_eq!(e1, w.simulate_teacher(&t1, &r).unwrap());
        assert_ne!(e1, w.simulate_teacher(&t1, &TextRecord::query("b", "x")).unwrap());
        assert_ne!(t1.observer().data()[..3], t2.observer().data()[..3]);
    }

    #[test]
    fn unknown_record_is_an_error() {
        let w = tiny(0.0);
        let t = w.teacher(&TeacherSpec::sim_cohere(0)).unwrap();
        assert_eq!(
            w.simulate_teacher(&t, &TextRecord::query("zz", "x")),
            Err(Error::UnknownRecord("zz".into()))
        );
    }

    #[test]
    fn noiseless_cosine_depends_only_on_topic_pair() {
        let cfg = WorldConfig {
            sigma: 0.0,
            topics: 3,
            ambient_dim: 6,
            train_queries: 6,
            train_passages: 12,
            eval_queries: 0,
            eval_passages: 0,
            ..Default::default()
        };
        let (w, data) = SyntheticWorld::generate(&cfg).unwrap();
        let t = w.teacher(&TeacherSpec::sim_cohere(0)).unwrap();
        let embs: Vec<_> = data.train.iter().map(|r| w.simulate_teacher(&t, r).unwrap()).collect();
        let mut by_pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, a) in data.train.iter().enumerate() {
            for (j, b) in data.train.iter().enumerate() {
                let key = (w.topic_of(&a.id).unwrap(), w.topic_of(&b.id).unwrap());
                let c = embs[i].cosine(&embs[j]);
                let prev = *by_pair.entry(key).or_insert(c);
                assert!((prev - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generated_world_is_reproducible_and_well_formed() {
        let cfg = WorldConfig {
            train_queries: 20,
            train_passages: 40,
            eval_queries: 8,
            eval_passages: 24,
            ..Default::default()
        };
        let (w1, d1) = SyntheticWorld::generate(&cfg).unwrap();
        let (w2, d2) = SyntheticWorld::generate(&cfg).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(d1, d2);
        assert_eq!(d1.train.len(), 60);
        assert_eq!(d1.qrels.len(), 8 * 3);
        assert!(d1.eval_passages.iter().all(|p| p.text.split(' ').count() == 10));
        assert_eq!(rank(&Tensor::identity(4)), 4);
        let lowrank = Tensor::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert_eq!(rank(&lowrank), 1);
    }
}
