//! Experiment configuration files.

use std::path::{Path, PathBuf};

use embsteal_core::corpus::{SplitSpec, TrainSample};
use embsteal_core::encoder::EncoderConfig;
use embsteal_core::retrieval::{EncoderPairing, Gain};
use embsteal_core::teacher::TeacherSpec;
use embsteal_core::trainer::TrainingConfig;
use embsteal_core::world::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub world: WorldConfig,
    pub teachers: Vec<TeacherSpec>,
    pub split: SplitConfig,
    pub student: StudentConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub harvest: HarvestConfig,
    pub ablation: AblationConfig,
}

/// File locations. Relative paths resolve against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub queries: PathBuf,
    pub passages: PathBuf,
    pub eval_queries: PathBuf,
    pub eval_passages: PathBuf,
    pub qrels: PathBuf,
    pub caches: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            queries: "data/queries.tsv".into(),
            passages: "data/passages.tsv".into(),
            eval_queries: "data/eval_queries.tsv".into(),
            eval_passages: "data/eval_passages.tsv".into(),
            qrels: "data/qrels.txt".into(),
            caches: "caches".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub dev_passages: usize,
    pub dev_queries: usize,
    /// Training records to sample; absent means all.
    pub train_sample: Option<usize>,
    pub dedup: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            dev_passages: 100,
            dev_queries: 25,
            train_sample: None,
            dedup: true,
        }
    }
}

impl SplitConfig {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            dev_passages: self.dev_passages,
            dev_queries: self.dev_queries,
            train_sample: self.train_sample.map_or(TrainSample::All, TrainSample::Count),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            layers: 1,
            heads: 2,
            max_len: 24,
            vocab_size: 4096,
        }
    }
}

impl StudentConfig {
    pub fn encoder(&self, vocab_size: usize, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
            dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: Vec<usize>,
    pub gain: Gain,
    pub pairings: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: vec![10, 100],
            gain: Gain::Linear,
            pairings: ["teacher", "Q only", "P only", "Q&P", "bottleneck"].map(String::from).to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn parsed_pairings(&self) -> Result<Vec<EncoderPairing>> {
        self.pairings
            .iter()
            .map(|p| EncoderPairing::parse(p).map_err(|e| AppError::Config(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestConfig {
    pub batch_size: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_retries: 4,
            backoff_ms: 500,
            max_backoff_ms: 8000,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub data_sizes: Vec<usize>,
    pub temperatures: Vec<f64>,
    /// Optimizer steps per run in the loss study, rounded up to whole epochs.
    pub steps: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            data_sizes: vec![1000, 4000, 20000],
            temperatures: vec![0.01, 0.05],
            steps: 600,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            world: WorldConfig::default(),
            teachers: vec![TeacherSpec::sim_cohere(0), TeacherSpec::sim_openai(0)],
            split: SplitConfig::default(),
            student: StudentConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            harvest: HarvestConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Settings sized for a synthetic world on one CPU core.
    pub fn desk() -> Self {
        Self {
            training: TrainingConfig {
                batch_size: 32,
                lr: 2e-3,
                warmup_steps: 50,
                epochs: 20,
                patience: Some(4),
                ..TrainingConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: embsteal_core::Error| AppError::Config(e.to_string());
        self.training.validate().map_err(cfg_err)?;
        self.student.encoder(16, self.training.dropout).validate().map_err(cfg_err)?;
        for t in &self.teachers {
            t.validate().map_err(cfg_err)?;
        }
        let mut names: Vec<&str> = self.teachers.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(AppError::Config("teacher names must be unique".into()));
        }
        self.eval.parsed_pairings()?;
        if self.eval.k.is_empty() || self.eval.k.contains(&0) {
            return Err(AppError::Config("eval.k needs positive cutoffs".into()));
        }
        Ok(())
    }

    pub fn teacher(&self, name: &str) -> Result<&TeacherSpec> {
        self.teachers
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AppError::Config(format!("no teacher named {name:?} in config")))
    }

    /// SHA-256 of the canonical JSON form, in hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
