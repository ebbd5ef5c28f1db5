//! In-memory steal runs over a synthetic world, and the ablation studies
//! built from them.

use std::collections::BTreeMap;

use embsteal_core::corpus::{dedup_contained, split_and_sample, Collection};
use embsteal_core::loss::Objective;
use embsteal_core::retrieval::{evaluate_pairing, EncoderPairing, EvalReport, EvalSet};
use embsteal_core::teacher::{concat_name, concat_teachers, EmbeddingVector, TeacherSpec};
use embsteal_core::tokenizer::build_vocab_for_inputs;
use embsteal_core::trainer::{make_targets, train, StudentModel, TrainOutcome, TrainingConfig};
use embsteal_core::world::{SyntheticWorld, WorldConfig, WorldData};
use embsteal_core::{Kind, TextRecord};

use crate::config::{EvalConfig, ExperimentConfig, SplitConfig, StudentConfig};
use crate::error::{AppError, Result};
use crate::table::Table;

/// Teacher vectors keyed by record id.
pub type VectorMap = BTreeMap<String, EmbeddingVector>;

/// A generated world with its training pool and held-out evaluation set.
pub struct WorldLab {
    pub world: SyntheticWorld,
    pub data: WorldData,
    pub eval: EvalSet,
}

impl WorldLab {
    pub fn new(cfg: &WorldConfig) -> Result<Self> {
        let (world, data) = SyntheticWorld::generate(cfg)?;
        let eval = EvalSet {
            queries: data.eval_queries.clone(),
            passages: data.eval_passages.clone(),
            qrels: data.qrels.clone(),
        };
        Ok(Self { world, data, eval })
    }

    pub fn records(&self) -> impl Iterator<Item = &TextRecord> {
        self.data
            .train
            .iter()
            .chain(&self.data.eval_queries)
            .chain(&self.data.eval_passages)
    }

    /// Simulated embeddings of every record in the world.
    pub fn teacher_vectors(&self, spec: &TeacherSpec) -> Result<VectorMap> {
        let teacher = self.world.teacher(spec)?;
        self.records()
            .map(|r| Ok((r.id.clone(), self.world.simulate_teacher(&teacher, r)?)))
            .collect()
    }
}

/// Renormalized concatenation of two vector maps over their shared ids.
pub fn concat_maps(a: &VectorMap, b: &VectorMap) -> Result<VectorMap> {
    a.iter()
        .filter_map(|(id, va)| b.get(id).map(|vb| (id, va, vb)))
        .map(|(id, va, vb)| Ok((id.clone(), concat_teachers(va, vb)?)))
        .collect()
}

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub split: SplitConfig,
    pub student: StudentConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub config_hash: String,
}

impl RunSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            split: cfg.split,
            student: cfg.student,
            training: cfg.training.clone(),
            eval: cfg.eval.clone(),
            config_hash: cfg.hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StealRun {
    pub outcome: TrainOutcome,
    pub reports: Vec<EvalReport>,
    pub train_size: usize,
    pub dev_size: usize,
}

impl StealRun {
    pub fn report(&self, pairing: EncoderPairing) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.pairing == pairing.label())
    }

    pub fn ndcg10(&self, pairing: EncoderPairing) -> f64 {
        self.report(pairing).map_or(0.0, EvalReport::ndcg10)
    }
}

/// Dedups passages, then splits off the dev set and samples training records.
pub fn prepare_split(records: &[TextRecord], split: &SplitConfig, seed: u64) -> Result<(Collection, Collection)> {
    let all = Collection::new(records.to_vec())?;
    let all = if split.dedup {
        let (queries, passages): (Vec<_>, Vec<_>) = all.into_records().into_iter().partition(|r| r.kind == Kind::Query);
        let (kept, stats) = dedup_contained(&Collection::new(passages)?)?;
        let mut c = Collection::new(queries.into_iter().chain(kept.into_records()).collect())?;
        c.manifest.dedup = Some(stats);
        c
    } else {
        all
    };
    let s = split_and_sample(&all, &split.spec(seed))?;
    Ok((s.train, s.dev))
}

/// Trains a student on `targets` (one or two teachers) and evaluates it on
/// the held-out set under every configured pairing.
pub fn steal(lab: &WorldLab, targets: &[&VectorMap], settings: &RunSettings) -> Result<StealRun> {
    let seed = settings.training.seed;
    let (train_set, dev_set) = prepare_split(&lab.data.train, &settings.split, seed)?;
    let tok = build_vocab_for_inputs(train_set.records(), settings.student.vocab_size, settings.student.max_len)?;
    let train_pairs = make_targets(train_set.records(), targets)?;
    let dev_pairs = make_targets(dev_set.records(), targets)?;
    let d_t = train_pairs[0].target.dim();
    let enc = settings.student.encoder(tok.vocab_size(), settings.training.dropout);
    let model = StudentModel::init(tok, enc, d_t, settings.training.projection_bias, seed)?;
    let outcome = train(model, &settings.training, &train_pairs, &dev_pairs, &settings.config_hash)?;

    let eval_teacher = match targets {
        [a] => (*a).clone(),
        [a, b] => concat_maps(a, b)?,
        _ => return Err(AppError::Config("one or two teachers per run".into())),
    };
    let mut reports = Vec::new();
    for pairing in settings.eval.parsed_pairings()? {
        let (mut report, _) = evaluate_pairing(
            pairing,
            &lab.eval,
            Some(&eval_teacher),
            Some(&outcome.best.model),
            &settings.eval.k,
            settings.eval.gain,
            seed,
        )?;
        report.config_hash = Some(settings.config_hash.clone());
        reports.push(report);
    }
    Ok(StealRun {
        outcome,
        reports,
        train_size: train_pairs.len(),
        dev_size: dev_pairs.len(),
    })
}

/// Which comparison an ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    DataSize,
    Loss,
    Bottleneck,
    Concat,
}

impl Study {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "data-size" => Ok(Study::DataSize),
            "loss" => Ok(Study::Loss),
            "bottleneck" => Ok(Study::Bottleneck),
            "concat" => Ok(Study::Concat),
            _ => Err(AppError::Config(format!(
                "unknown study {s:?}; expected data-size, loss, bottleneck or concat"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Study::DataSize => "data-size",
            Study::Loss => "loss",
            Study::Bottleneck => "bottleneck",
            Study::Concat => "concat",
        }
    }
}

/// One ablation cell: a labelled setting evaluated over all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub config_hash: String,
    /// Per-seed values, or the error that stopped the cell.
    pub values: std::result::Result<Vec<BTreeMap<String, f64>>, String>,
}

impl Cell {
    pub fn mean(&self, key: &str) -> Option<f64> {
        let v = self.values.as_ref().ok()?;
        let xs: Vec<f64> = v.iter().filter_map(|m| m.get(key).copied()).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub study: Study,
    pub columns: Vec<String>,
    pub cells: Vec<Cell>,
}

impl StudyResult {
    pub fn cell(&self, label: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn table(&self) -> Table {
        let mut header = vec!["setting".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("config".into());
        let mut t = Table::new(header);
        for c in &self.cells {
            let mut row = vec![c.label.clone()];
            match &c.values {
                Ok(_) => row.extend(
                    self.columns
                        .iter()
                        .map(|k| c.mean(k).map_or_else(|| "-".into(), |v| format!("{v:.4}"))),
                ),
                Err(e) => row.extend(self.columns.iter().map(|_| format!("FAILED: {e}"))),
            }
            row.push(c.config_hash[..12.min(c.config_hash.len())].to_string());
            t.push(row);
        }
        t
    }
}

/// Runs `study` over the configured seeds. The world is regenerated per
/// seed; a failing cell is recorded and the others still run.
pub fn ablate(cfg: &ExperimentConfig, study: Study) -> Result<StudyResult> {
    let seeds = &cfg.ablation.seeds;
    if seeds.is_empty() {
        return Err(AppError::Config("ablation.seeds is empty".into()));
    }
    let base = |c: &ExperimentConfig| {
        let mut s = RunSettings::from_config(c);
        s.eval.pairings = vec!["teacher".into(), "Q&P".into(), "bottleneck".into()];
        s
    };
    // Loss study: every objective gets the same number of optimizer steps.
    let budgeted = |s: &mut RunSettings, train_size: usize| {
        let per_epoch = train_size.div_ceil(s.training.batch_size) as u64;
        s.training.epochs = cfg.ablation.steps.div_ceil(per_epoch.max(1)).max(1) as usize;
        s.training.patience = None;
    };
    let teacher_a = cfg.teachers.first().ok_or_else(|| AppError::Config("no teachers configured".into()))?;

    let mut labels: Vec<(String, ExperimentConfig)> = Vec::new();
    match study {
        Study::DataSize => {
            for &n in &cfg.ablation.data_sizes {
                let mut c = cfg.clone();
                c.split.train_sample = Some(n);
                labels.push((format!("{n} pairs"), c));
            }
        }
        Study::Loss => {
            let mut c = cfg.clone();
            c.training.objective = Objective::Cosine;
            labels.push(("cosine".into(), c));
            for &t in &cfg.ablation.temperatures {
                let mut c = cfg.clone();
                c.training.objective = Objective::Contrastive { temperature: t };
                labels.push((format!("contrastive tau={t}"), c));
            }
        }
        Study::Bottleneck => labels.push(("student".into(), cfg.clone())),
        Study::Concat => {
            let b = cfg
                .teachers
                .get(1)
                .ok_or_else(|| AppError::Config("concat study needs two teachers".into()))?;
            let pair = [teacher_a.clone(), b.clone()];
            for (label, used) in [
                (teacher_a.name.clone(), &pair[..1]),
                (b.name.clone(), &pair[1..]),
                (concat_name(&teacher_a.name, &b.name), &pair[..]),
            ] {
                let mut c = cfg.clone();
                c.teachers = used.to_vec();
                labels.push((label, c));
            }
        }
    }

    let columns: Vec<String> = match study {
        Study::DataSize | Study::Loss => vec!["ndcg@10".into(), "recall@100".into()],
        Study::Bottleneck => vec!["ndcg@10 final".into(), "ndcg@10 bottleneck".into(), "abs diff".into()],
        Study::Concat => vec!["teacher ndcg@10".into(), "student ndcg@10".into()],
    };

    let mut cells = Vec::new();
    for (label, c) in labels {
        let hash = c.hash();
        let values = (|| -> Result<Vec<BTreeMap<String, f64>>> {
            let mut per_seed = Vec::new();
            for &seed in seeds {
                let mut wc = c.world.clone();
                wc.seed = seed;
                let lab = WorldLab::new(&wc)?;
                let mut settings = base(&c);
                settings.config_hash = hash.clone();
                settings.training.seed = seed;
                if study == Study::Loss {
                    let train_size = c.split.train_sample.unwrap_or(lab.data.train.len());
                    budgeted(&mut settings, train_size);
                }
                let used = if study == Study::Concat { &c.teachers[..] } else { &c.teachers[..1] };
                let maps = used.iter().map(|t| lab.teacher_vectors(t)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&VectorMap> = maps.iter().collect();
                let run = steal(&lab, &refs, &settings)?;
                if let Some(why) = &run.outcome.aborted {
                    return Err(AppError::Numeric(why.clone()));
                }
                let q_and_p = run.report(EncoderPairing::Q_AND_P);
                let mut m = BTreeMap::new();
                let mean = |r: Option<&EvalReport>, k: &str| r.and_then(|r| r.mean(k)).unwrap_or(0.0);
                match study {
                    Study::DataSize | Study::Loss => {
                        m.insert("ndcg@10".into(), mean(q_and_p, "ndcg@10"));
                        m.insert("recall@100".into(), mean(q_and_p, "recall@100"));
                    }
                    Study::Bottleneck => {
                        let f = mean(q_and_p, "ndcg@10");
                        let b = mean(run.report(EncoderPairing::BOTTLENECK), "ndcg@10");
                        m.insert("ndcg@10 final".into(), f);
                        m.insert("ndcg@10 bottleneck".into(), b);
                        m.insert("abs diff".into(), (f - b).abs());
                    }
                    Study::Concat => {
                        m.insert("teacher ndcg@10".into(), mean(run.report(EncoderPairing::TEACHER), "ndcg@10"));
                        m.insert("student ndcg@10".into(), mean(q_and_p, "ndcg@10"));
                    }
                }
                per_seed.push(m);
            }
            Ok(per_seed)
        })()
        .map_err(|e| e.to_string());
        cells.push(Cell {
            label,
            config_hash: hash,
            values,
        });
    }
    Ok(StudyResult { study, columns, cells })
}
