//! Teacher harvests into an embedding cache.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use embsteal_core::teacher::{estimate_cost, EmbeddingVector, TeacherSpec};
use embsteal_core::tokenizer::truncate_tokens;
use embsteal_core::world::{SimTeacher, SyntheticWorld};
use embsteal_core::TextRecord;
use serde::{Deserialize, Serialize};

use crate::cache::{read_cache, CacheWriter};
use crate::config::HarvestConfig;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedErrorKind {
    Auth,
    RateLimit,
    Transport,
    Malformed,
}

/// A failed teacher call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct EmbedError {
    pub kind: EmbedErrorKind,
    pub message: String,
}

impl EmbedError {
    pub fn new(kind: EmbedErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    /// Auth failures stop the harvest; everything else is retried.
    pub fn is_retryable(&self) -> bool {
        self.kind != EmbedErrorKind::Auth
    }
}

/// Something that embeds a batch of records of one kind.
pub trait EmbedBackend {
    /// Returns one vector per record, in input order.
    fn embed(&mut self, batch: &[TextRecord]) -> std::result::Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Simulated teacher over a synthetic world.
pub struct SimBackend<'w> {
    world: &'w SyntheticWorld,
    teacher: SimTeacher,
}

impl<'w> SimBackend<'w> {
    pub fn new(world: &'w SyntheticWorld, spec: &TeacherSpec) -> Result<Self> {
        Ok(Self {
            world,
            teacher: world.teacher(spec)?,
        })
    }
}

impl EmbedBackend for SimBackend<'_> {
    fn embed(&mut self, batch: &[TextRecord]) -> std::result::Result<Vec<EmbeddingVector>, EmbedError> {
        batch
            .iter()
            .map(|r| {
                self.world
                    .simulate_teacher(&self.teacher, r)
                    .map_err(|e| EmbedError::new(EmbedErrorKind::Malformed, e.to_string()))
            })
            .collect()
    }
}

/// What a harvest would submit, before any call is made.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestPlan {
    /// Records still missing from the cache, truncated to the teacher limit.
    pub pending: Vec<TextRecord>,
    pub truncated: Vec<String>,
    pub already_cached: usize,
    pub tokens: u64,
}

impl HarvestPlan {
    pub fn cost(&self, spec: &TeacherSpec) -> Result<embsteal_core::teacher::Cents> {
        Ok(estimate_cost(spec, self.tokens as i64)?)
    }
}

/// Truncates `rec` to `max_tokens` tokens; returns the token count and
/// whether it was cut.
pub fn truncate_record(rec: &TextRecord, max_tokens: usize) -> (TextRecord, usize, bool) {
    let (text, n, cut) = truncate_tokens(&rec.text, max_tokens);
    (TextRecord::new(rec.id.clone(), rec.kind, text), n, cut)
}

/// Lists the records of `records` that `cache` does not hold yet.
pub fn plan(spec: &TeacherSpec, records: &[TextRecord], cache: &Path) -> Result<HarvestPlan> {
    let cached: BTreeSet<String> = if cache.exists() {
        read_cache(cache)?.entries.into_iter().map(|(id, _)| id).collect()
    } else {
        BTreeSet::new()
    };
    let mut out = HarvestPlan {
        pending: Vec::new(),
        truncated: Vec::new(),
        already_cached: 0,
        tokens: 0,
    };
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(AppError::Data(format!("record id {:?} appears twice", r.id)));
        }
        if cached.contains(&r.id) {
            out.already_cached += 1;
            continue;
        }
        let (t, n, cut) = truncate_record(r, spec.max_tokens);
        if cut {
            out.truncated.push(r.id.clone());
        }
        out.tokens += n as u64;
        out.pending.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestManifest {
    pub teacher: String,
    pub dim: usize,
    pub config_hash: String,
    pub requested: usize,
    pub already_cached: usize,
    pub embedded: usize,
    pub failed: Vec<String>,
    pub truncated: Vec<String>,
    pub cache_entries: u64,
    pub teacher_calls: u64,
    pub retries: u64,
    pub total_tokens: u64,
    pub estimated_cost_cents: u64,
    pub estimated_cost: String,
}

pub fn harvest_manifest_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

/// Delay before retry number `attempt` (0-based).
pub fn backoff(cfg: &HarvestConfig, attempt: u32) -> Duration {
    let ms = cfg.backoff_ms.saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX));
    Duration::from_millis(ms.min(cfg.max_backoff_ms))
}

/// Embeds every record missing from `cache` and appends it. Batches hold
/// records of a single kind. A batch that still fails after the retries
/// has its ids listed as failed and the run moves on; an auth failure
/// stops the run after committing what was already embedded.
pub fn harvest(
    spec: &TeacherSpec,
    records: &[TextRecord],
    backend: &mut dyn EmbedBackend,
    cache: &Path,
    cfg: &HarvestConfig,
    config_hash: &str,
    sleep: &mut dyn FnMut(Duration),
) -> Result<HarvestManifest> {
    if cfg.batch_size == 0 {
        return Err(AppError::Config("harvest.batch_size must be positive".into()));
    }
    let p = plan(spec, records, cache)?;
    let (mut writer, _) = CacheWriter::open(cache, spec.dim)?;
    let mut m = HarvestManifest {
        teacher: spec.name.clone(),
        dim: spec.dim,
        config_hash: config_hash.to_string(),
        requested: records.len(),
        already_cached: p.already_cached,
        embedded: 0,
        failed: Vec::new(),
        truncated: p.truncated.clone(),
        cache_entries: 0,
        teacher_calls: 0,
        retries: 0,
        total_tokens: 0,
        estimated_cost_cents: 0,
        estimated_cost: String::new(),
    };
    let mut fatal = None;
    let mut i = 0;
    while i < p.pending.len() {
        let kind = p.pending[i].kind;
        let end = (i..p.pending.len())
            .take(cfg.batch_size)
            .take_while(|&j| p.pending[j].kind == kind)
            .last()
            .map_or(i + 1, |j| j + 1);
        let batch = &p.pending[i..end];
        i = end;
        if fatal.is_some() {
            m.failed.extend(batch.iter().map(|r| r.id.clone()));
            continue;
        }
        let mut attempt = 0;
        let result = loop {
            m.teacher_calls += 1;
            let r = backend.embed(batch).and_then(|vs| check_batch(spec, batch, vs));
            match r {
                Err(e) if e.is_retryable() && attempt < cfg.max_retries => {
                    sleep(backoff(cfg, attempt));
                    attempt += 1;
                    m.retries += 1;
                }
                other => break other,
            }
        };
        match result {
            Ok(vs) => {
                for (r, v) in batch.iter().zip(&vs) {
                    writer.append(&r.id, v)?;
                    m.total_tokens += truncate_tokens(&r.text, spec.max_tokens).1 as u64;
                }
                writer.commit()?;
                m.embedded += batch.len();
            }
            Err(e) => {
                m.failed.extend(batch.iter().map(|r| r.id.clone()));
                if !e.is_retryable() {
                    fatal = Some(e);
                }
            }
        }
    }
    writer.commit()?;
    m.cache_entries = writer.count();
    let cost = estimate_cost(spec, m.total_tokens as i64)?;
    m.estimated_cost_cents = cost.0;
    m.estimated_cost = cost.to_string();
    let mp = harvest_manifest_path(cache);
    let json = serde_json::to_string_pretty(&m).map_err(|e| AppError::Data(e.to_string()))?;
    fs::write(&mp, json + "\n").map_err(AppError::io(&mp))?;
    match fatal {
        Some(e) => Err(AppError::Transport(format!("{}: {e}", spec.name))),
        None => Ok(m),
    }
}

fn check_batch(
    spec: &TeacherSpec,
    batch: &[TextRecord],
    vs: Vec<EmbeddingVector>,
) -> std::result::Result<Vec<EmbeddingVector>, EmbedError> {
    if vs.len() != batch.len() {
        return Err(EmbedError::new(
            EmbedErrorKind::Malformed,
            format!("{} vectors for {} texts", vs.len(), batch.len()),
        ));
    }
    if let Some(v) = vs.iter().find(|v| v.dim() != spec.dim) {
        return Err(EmbedError::new(
            EmbedErrorKind::Malformed,
            format!("vector of dim {}, expected {}", v.dim(), spec.dim),
        ));
    }
    Ok(vs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let cfg = HarvestConfig {
            backoff_ms: 100,
            max_backoff_ms: 500,
            ..HarvestConfig::default()
        };
        let got: Vec<u64> = (0..5).map(|a| backoff(&cfg, a).as_millis() as u64).collect();
        assert_eq!(got, [100, 200, 400, 500, 500]);
        assert_eq!(backoff(&cfg, 80).as_millis(), 500);
    }

    #[test]
    fn truncation_keeps_leading_tokens() {
        let r = TextRecord::passage("p", "one two, three four");
        let (t, n, cut) = truncate_record(&r, 2);
        assert!(cut);
        assert_eq!(n, 2);
        assert_eq!(t.text, "one two");
        assert!(!truncate_record(&r, 10).2);
    }
}
