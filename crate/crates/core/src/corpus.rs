//! Collections of records: containment dedup, dev splits and sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Kind, TextRecord};
use crate::rng::SeededRng;

/// Orders ids with embedded numbers compared by value, so `p2 < p10`.
/// Falls back to byte order to stay total.
pub fn id_order(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a.as_bytes(), b.as_bytes());
    loop {
        match (x.first(), y.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(c), Some(d)) if c.is_ascii_digit() && d.is_ascii_digit() => {
                let nx = x.iter().take_while(|b| b.is_ascii_digit()).count();
                let ny = y.iter().take_while(|b| b.is_ascii_digit()).count();
                let dx = trim_zeros(&x[..nx]);
                let dy = trim_zeros(&y[..ny]);
                let ord = dx.len().cmp(&dy.len()).then_with(|| dx.cmp(dy));
                if ord != Ordering::Equal {
                    return ord;
                }
                x = &x[nx..];
                y = &y[ny..];
            }
            (Some(c), Some(d)) => {
                if c != d {
                    return c.cmp(d);
                }
                x = &x[1..];
                y = &y[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let z = d.iter().take_while(|&&b| b == b'0').count();
    &d[z..]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub ingested: usize,
    pub removed_prefix: usize,
    pub removed_suffix: usize,
    pub removed_exact: usize,
}

impl DedupStats {
    pub fn removed(&self) -> usize {
        self.removed_prefix + self.removed_suffix + self.removed_exact
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectionManifest {
    pub sources: Vec<String>,
    pub dedup: Option<DedupStats>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    records: Vec<TextRecord>,
    pub manifest: CollectionManifest,
}

impl Collection {
    /// Wraps records, rejecting duplicate ids.
    pub fn new(records: Vec<TextRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            manifest: CollectionManifest::default(),
        })
    }

    pub fn records(&self) -> &[TextRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TextRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: Kind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn get(&self, id: &str) -> Option<&TextRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Removes passages whose text is a strict prefix or suffix of another
/// passage's text; of several identical texts only the lowest id is kept.
/// Survivors keep their original order.
///
/// Runs in `O(n log n · L)`: after collapsing identical texts, a text is a
/// prefix of some other text exactly when it is a prefix of its successor
/// in byte order, and the same holds for suffixes on reversed bytes.
pub fn dedup_contained(passages: &Collection) -> Result<(Collection, DedupStats)> {
    let recs = passages.records();
    if let Some(q) = recs.iter().find(|r| r.kind != Kind::Passage) {
        return Err(Error::invalid(alloc::format!(
            "dedup expects passages only, found query {:?}",
            q.id
        )));
    }

    // one representative (lowest id) per distinct text
    let mut by_text: BTreeMap<&[u8], usize> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        by_text
            .entry(r.text.as_bytes())
            .and_modify(|j| {
                if id_order(&r.id, &recs[*j].id) == Ordering::Less {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let unique: Vec<&[u8]> = by_text.keys().copied().collect();
    let prefix_hit = contained_in_successor(&unique);

    let mut reversed: Vec<(Vec<u8>, usize)> = unique
        .iter()
        .enumerate()
        .map(|(k, t)| (t.iter().rev().copied().collect(), k))
        .collect();
    reversed.sort_unstable();
    let rev_keys: Vec<&[u8]> = reversed.iter().map(|(t, _)| t.as_slice()).collect();
    let mut suffix_hit = alloc::vec![false; unique.len()];
    for (pos, hit) in contained_in_successor(&rev_keys).into_iter().enumerate() {
        suffix_hit[reversed[pos].1] = hit;
    }

    let text_slot: BTreeMap<&[u8], usize> = unique.iter().enumerate().map(|(k, t)| (*t, k)).collect();
    let mut stats = DedupStats {
        ingested: recs.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        let slot = text_slot[r.text.as_bytes()];
        if prefix_hit[slot] {
            stats.removed_prefix += 1;
        } else if suffix_hit[slot] {
            stats.removed_suffix += 1;
        } else if by_text[r.text.as_bytes()] != i {
            stats.removed_exact += 1;
        } else {
            kept.push(r.clone());
        }
    }
    let mut out = Collection::new(kept)?;
    out.manifest = passages.manifest.clone();
    out.manifest.dedup = Some(stats);
    Ok((out, stats))
}

/// For sorted distinct keys, whether each key is a strict prefix of the
/// next one.
fn contained_in_successor(sorted: &[&[u8]]) -> Vec<bool> {
    let mut hit = alloc::vec![false; sorted.len()];
    for k in 0..sorted.len().saturating_sub(1) {
        hit[k] = sorted[k + 1].starts_with(sorted[k]);
    }
    hit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSample {
    All,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev_passages: usize,
    pub dev_queries: usize,
    pub train_sample: TrainSample,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Collection,
    pub dev: Collection,
}

/// Reserves the last `dev_passages` passages and `dev_queries` queries
/// (by [`id_order`]) as the dev set, then samples the training set
/// uniformly without replacement from the rest.
pub fn split_and_sample(c: &Collection, spec: &SplitSpec) -> Result<Split> {
    let mut dev_ids: BTreeSet<&str> = BTreeSet::new();
    for (kind, n) in [(Kind::Passage, spec.dev_passages), (Kind::Query, spec.dev_queries)] {
        let mut ids: Vec<&str> = c
            .records()
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.id.as_str())
            .collect();
        if n > ids.len() {
            return Err(Error::invalid(alloc::format!(
                "dev set wants {n} {} records but only {} exist",
                kind.as_str(),
                ids.len()
            )));
        }
        ids.sort_by(|a, b| id_order(a, b));
        dev_ids.extend(&ids[ids.len() - n..]);
    }

    let rest: Vec<usize> = (0..c.len()).filter(|&i| !dev_ids.contains(c.records()[i].id.as_str())).collect();
    let chosen: Vec<usize> = match spec.train_sample {
        TrainSample::All => rest.clone(),
        TrainSample::Count(n) => {
            if n > rest.len() {
                return Err(Error::invalid(alloc::format!(
                    "sample of {n} exceeds the {} records outside the dev set",
                    rest.len()
                )));
            }
            let mut pool = rest.clone();
            let mut rng = SeededRng::keyed(spec.seed, &["train-sample"]);
            rng.shuffle(&mut pool);
            pool.truncate(n);
            pool.sort_unstable();
            pool
        }
    };
    let kinds_rest: BTreeSet<Kind> = rest.iter().map(|&i| c.records()[i].kind).collect();
    let kinds_chosen: BTreeSet<Kind> = chosen.iter().map(|&i| c.records()[i].kind).collect();
    if chosen.len() >= kinds_rest.len() && kinds_chosen != kinds_rest {
        return Err(Error::invalid("training sample is missing one record kind; try another seed"));
    }

    let pick = |idx: &mut dyn Iterator<Item = usize>| -> Result<Collection> {
        let mut col = Collection::new(idx.map(|i| c.records()[i].clone()).collect())?;
        col.manifest = c.manifest.clone();
        col.manifest.split_seed = Some(spec.seed);
        Ok(col)
    };
    let train = pick(&mut chosen.into_iter())?;
    let dev = pick(&mut (0..c.len()).filter(|&i| dev_ids.contains(c.records()[i].id.as_str())))?;
    Ok(Split { train, dev })
}
