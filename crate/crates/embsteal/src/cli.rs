//! Command line.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use embsteal_core::corpus::{dedup_contained, id_order, split_and_sample, Collection, TrainSample};
use embsteal_core::retrieval::{evaluate_pairing, EncoderPairing, EvalReport, EvalSet};
use embsteal_core::teacher::{concat_name, estimate_cost, TeacherSource, TeacherSpec};
use embsteal_core::tokenizer::{build_vocab_for_inputs, truncate_tokens};
use embsteal_core::trainer::{make_targets, train, StudentModel};
use embsteal_core::world::SyntheticWorld;
use embsteal_core::{Kind, TextRecord};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cache::{export_jsonl, read_cache};
use crate::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use crate::config::{hex, ExperimentConfig};
use crate::error::{AppError, Result};
use crate::experiment::{ablate, concat_maps, prepare_split, Study, VectorMap};
use crate::harvest::{harvest, plan, EmbedBackend, SimBackend};
use crate::live::LiveClient;
use crate::trec::{format_qrels, format_run, parse_qrels};
use crate::tsv::{ingest_tsv, write_tsv};

#[derive(Debug, Parser)]
#[command(name = "embsteal", version, about = "Distil black-box embedding models into small local students")]
pub struct Cli {
    /// TOML experiment config; built-in desk settings when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the world, split and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base directory for relative paths in the config.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic world as TSV collections and qrels.
    Synth,
    /// Remove passages contained as a prefix or suffix of another.
    Dedup(DedupArgs),
    /// Embed every record with a teacher into its cache.
    Harvest(HarvestArgs),
    /// Distil a student from harvested embeddings.
    Train(TrainArgs),
    /// Score retrieval on the evaluation set.
    Eval(EvalArgs),
    /// Run an ablation study on synthetic worlds.
    Ablate(AblateArgs),
    /// Projected spend for embedding a token count or the corpus.
    Cost(CostArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// Passage TSV to read.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write surviving passages.
    #[arg(long)]
    pub output: PathBuf,
    /// Query TSV, used only for the dev-set fingerprint.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[arg(long)]
    pub teacher: String,
    /// Allow requests that cost money.
    #[arg(long)]
    pub confirm_spend: bool,
    /// Print the plan and stop.
    #[arg(long)]
    pub dry_run: bool,
    /// Also dump the cache as JSON lines.
    #[arg(long)]
    pub export_jsonl: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Teacher to distil; give two for their concatenation. Defaults to the
    /// first configured teacher.
    #[arg(long = "teacher")]
    pub teachers: Vec<String>,
    /// Continue from the existing checkpoint if its config hash matches.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pairing label such as "Q&P" or "teacher/student"; repeatable.
    /// Defaults to the configured list.
    #[arg(long = "pairing")]
    pub pairings: Vec<String>,
    #[arg(long = "teacher")]
    pub teachers: Vec<String>,
    /// Student checkpoint; defaults to the one `train` writes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write TREC run files next to the reports.
    #[arg(long)]
    pub run_files: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// data-size, loss, bottleneck or concat.
    #[arg(long)]
    pub study: String,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Teacher name from the config or a built-in (openai, cohere).
    #[arg(long)]
    pub teacher: Option<String>,
    /// Price this many tokens instead of counting the corpus.
    #[arg(long)]
    pub tokens: Option<i64>,
}

/// Config plus the output directory every relative path hangs off.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub hash: String,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
            cfg.world.seed = s;
            cfg.training.seed = s;
        }
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Self {
            cfg,
            out_dir: cli.out_dir.clone(),
            hash,
        })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn teacher(&self, name: &str) -> Result<TeacherSpec> {
        self.cfg
            .teacher(name)
            .cloned()
            .or_else(|e| TeacherSpec::builtin(name, self.cfg.seed).ok_or(e))
    }

    pub fn cache_path(&self, spec: &TeacherSpec) -> PathBuf {
        match &spec.source {
            TeacherSource::Cache { path } => self.path(Path::new(path)),
            _ => self.path(&self.cfg.paths.caches).join(format!("{}.embc", spec.name)),
        }
    }

    fn teachers_or_default(&self, names: &[String]) -> Result<Vec<TeacherSpec>> {
        match names {
            [] => Ok(vec![self
                .cfg
                .teachers
                .first()
                .cloned()
                .ok_or_else(|| AppError::Config("no teachers configured".into()))?]),
            [_] | [_, _] => names.iter().map(|n| self.teacher(n)).collect(),
            _ => Err(AppError::Config("give one or two teachers".into())),
        }
    }

    fn ingest(&self, p: &Path, kind: Kind) -> Result<Collection> {
        let path = self.path(p);
        let got = ingest_tsv(&path, kind)?;
        if !got.malformed.is_empty() {
            eprintln!("warning: {}: skipped {} malformed lines", path.display(), got.malformed.len());
            for m in got.malformed.iter().take(5) {
                eprintln!("  line {}: {}", m.line, m.reason);
            }
        }
        Ok(got.collection)
    }

    /// Training queries and passages.
    pub fn train_records(&self) -> Result<Vec<TextRecord>> {
        let p = &self.cfg.paths;
        let mut out = self.ingest(&p.queries, Kind::Query)?.into_records();
        out.extend(self.ingest(&p.passages, Kind::Passage)?.into_records());
        Ok(out)
    }

    pub fn eval_set(&self) -> Result<EvalSet> {
        let p = &self.cfg.paths;
        let qrels_path = self.path(&p.qrels);
        let text = fs::read_to_string(&qrels_path).map_err(AppError::io(&qrels_path))?;
        Ok(EvalSet {
            queries: self.ingest(&p.eval_queries, Kind::Query)?.into_records(),
            passages: self.ingest(&p.eval_passages, Kind::Passage)?.into_records(),
            qrels: parse_qrels(&text)?,
        })
    }

    fn reports_dir(&self) -> PathBuf {
        self.path(&self.cfg.paths.reports)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    let json = serde_json::to_string_pretty(value).map_err(|e| AppError::Data(e.to_string()))?;
    fs::write(path, json + "\n").map_err(AppError::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    fs::write(path, text).map_err(AppError::io(path))
}

fn teacher_label(specs: &[TeacherSpec]) -> String {
    match specs {
        [a, b] => concat_name(&a.name, &b.name),
        _ => specs[0].name.clone(),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Dedup(a) => cmd_dedup(&ctx, &a),
        Command::Harvest(a) => cmd_harvest(&ctx, &a),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Eval(a) => cmd_eval(&ctx, &a),
        Command::Ablate(a) => cmd_ablate(&ctx, &a),
        Command::Cost(a) => cmd_cost(&ctx, &a),
        Command::Config => {
            print!("{}", ctx.cfg.to_toml()?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    config_hash: &'a str,
    seed: u64,
    train_queries: usize,
    train_passages: usize,
    eval_queries: usize,
    eval_passages: usize,
    judgments: usize,
}

fn cmd_synth(ctx: &Context) -> Result<()> {
    let (_, data) = SyntheticWorld::generate(&ctx.cfg.world)?;
    let p = &ctx.cfg.paths;
    let (q, d): (Vec<&TextRecord>, Vec<&TextRecord>) = data.train.iter().partition(|r| r.kind == Kind::Query);
    write_tsv(&ctx.path(&p.queries), q.iter().copied())?;
    write_tsv(&ctx.path(&p.passages), d.iter().copied())?;
    write_tsv(&ctx.path(&p.eval_queries), &data.eval_queries)?;
    write_tsv(&ctx.path(&p.eval_passages), &data.eval_passages)?;
    write_text(&ctx.path(&p.qrels), &format_qrels(&data.qrels))?;
    let m = SynthManifest {
        config_hash: &ctx.hash,
        seed: ctx.cfg.world.seed,
        train_queries: q.len(),
        train_passages: d.len(),
        eval_queries: data.eval_queries.len(),
        eval_passages: data.eval_passages.len(),
        judgments: data.qrels.len(),
    };
    write_json(&ctx.path(&p.queries).with_file_name("synth.manifest.json"), &m)?;
    println!(
        "wrote {} train queries, {} train passages, {} eval queries, {} eval passages, {} judgments",
        m.train_queries, m.train_passages, m.eval_queries, m.eval_passages, m.judgments
    );
    Ok(())
}

#[derive(Serialize)]
struct DedupManifest<'a> {
    config_hash: &'a str,
    ingested: usize,
    removed_prefix: usize,
    removed_suffix: usize,
    removed_exact: usize,
    malformed_lines: usize,
    dev_ids_hash: String,
    sample_seed: u64,
}

fn cmd_dedup(ctx: &Context, a: &DedupArgs) -> Result<()> {
    let input = ctx.path(&a.input);
    let got = ingest_tsv(&input, Kind::Passage)?;
    let (kept, stats) = dedup_contained(&got.collection)?;
    let output = ctx.path(&a.output);
    write_tsv(&output, kept.records())?;

    let mut all = kept.records().to_vec();
    let mut split = ctx.cfg.split.spec(ctx.cfg.seed);
    split.train_sample = TrainSample::All;
    split.dev_passages = split.dev_passages.min(kept.len());
    match &a.queries {
        Some(q) => all.extend(ingest_tsv(&ctx.path(q), Kind::Query)?.collection.into_records()),
        None => split.dev_queries = 0,
    }
    let dev = split_and_sample(&Collection::new(all)?, &split)?.dev;
    let mut ids: Vec<&str> = dev.records().iter().map(|r| r.id.as_str()).collect();
    ids.sort_by(|x, y| id_order(x, y));
    let m = DedupManifest {
        config_hash: &ctx.hash,
        ingested: stats.ingested,
        removed_prefix: stats.removed_prefix,
        removed_suffix: stats.removed_suffix,
        removed_exact: stats.removed_exact,
        malformed_lines: got.malformed.len(),
        dev_ids_hash: hex(&Sha256::digest(ids.join("\n").as_bytes())),
        sample_seed: split.seed,
    };
    let mut mp = output.as_os_str().to_owned();
    mp.push(".manifest.json");
    write_json(Path::new(&mp), &m)?;
    println!(
        "ingested {}, removed {} (prefix {}, suffix {}, exact {}), kept {}",
        stats.ingested,
        stats.removed(),
        stats.removed_prefix,
        stats.removed_suffix,
        stats.removed_exact,
        kept.len()
    );
    Ok(())
}

fn all_records(ctx: &Context) -> Result<Vec<TextRecord>> {
    let mut records = ctx.train_records()?;
    let eval = ctx.eval_set()?;
    records.extend(eval.queries);
    records.extend(eval.passages);
    Ok(records)
}

fn cmd_harvest(ctx: &Context, a: &HarvestArgs) -> Result<()> {
    let spec = ctx.teacher(&a.teacher)?;
    let records = all_records(ctx)?;
    let cache = ctx.cache_path(&spec);
    let p = plan(&spec, &records, &cache)?;
    let cost = p.cost(&spec)?;
    println!(
        "{}: {} records, {} cached, {} new, {} tokens, {} truncated, projected {cost}",
        spec.name,
        records.len(),
        p.already_cached,
        p.pending.len(),
        p.tokens,
        p.truncated.len()
    );
    if a.dry_run {
        return Ok(());
    }
    let world;
    let mut backend: Box<dyn EmbedBackend + '_> = match &spec.source {
        TeacherSource::Simulated { .. } => {
            world = SyntheticWorld::generate(&ctx.cfg.world)?.0;
            Box::new(SimBackend::new(&world, &spec)?)
        }
        TeacherSource::Live { .. } => {
            if !p.pending.is_empty() && !a.confirm_spend {
                return Err(AppError::Config(format!(
                    "live harvest would spend about {cost}; rerun with --confirm-spend"
                )));
            }
            Box::new(LiveClient::from_spec(&spec, Duration::from_millis(ctx.cfg.harvest.timeout_ms))?)
        }
        TeacherSource::Cache { .. } => {
            return Err(AppError::Config(format!("teacher {:?} only reads an existing cache", spec.name)))
        }
    };
    let m = harvest(
        &spec,
        &records,
        backend.as_mut(),
        &cache,
        &ctx.cfg.harvest,
        &ctx.hash,
        &mut std::thread::sleep,
    )?;
    println!(
        "{} new, {} failed, {} entries in {}",
        m.embedded,
        m.failed.len(),
        m.cache_entries,
        cache.display()
    );
    println!("cost: {} for {} tokens", m.estimated_cost, m.total_tokens);
    if let Some(out) = &a.export_jsonl {
        let path = ctx.path(out);
        let mut buf = Vec::new();
        export_jsonl(&read_cache(&cache)?, &mut buf)?;
        write_text(&path, std::str::from_utf8(&buf).expect("json is utf-8"))?;
    }
    Ok(())
}

fn load_vectors(ctx: &Context, specs: &[TeacherSpec]) -> Result<Vec<VectorMap>> {
    specs
        .iter()
        .map(|s| {
            let path = ctx.cache_path(s);
            let c = read_cache(&path)?;
            if c.dim != s.dim {
                return Err(AppError::Data(format!(
                    "{}: holds {}-dim vectors but teacher {:?} has dim {}",
                    path.display(),
                    c.dim,
                    s.name,
                    s.dim
                )));
            }
            Ok(c.to_map())
        })
        .collect()
}

fn checkpoint_path(ctx: &Context, label: &str) -> PathBuf {
    ctx.path(&ctx.cfg.paths.checkpoints).join(format!("{}.embh", slug(label)))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config_hash: &'a str,
    teacher: String,
    train_pairs: usize,
    dev_pairs: usize,
    steps: u64,
    best_step: u64,
    best_dev_loss: f64,
    aborted: Option<String>,
    resumed: bool,
    wall_time_ms: u64,
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut tcfg = ctx.cfg.training.clone();
    if let Some(v) = a.lr {
        tcfg.lr = v;
    }
    if let Some(v) = a.epochs {
        tcfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tcfg.batch_size = v;
    }
    tcfg.validate().map_err(|e| AppError::Config(e.to_string()))?;
    let specs = ctx.teachers_or_default(&a.teachers)?;
    let label = teacher_label(&specs);
    let ck_path = checkpoint_path(ctx, &label);

    let maps = load_vectors(ctx, &specs)?;
    let refs: Vec<&VectorMap> = maps.iter().collect();
    let (train_set, dev_set) = prepare_split(&ctx.train_records()?, &ctx.cfg.split, ctx.cfg.seed)?;
    let train_pairs = make_targets(train_set.records(), &refs)?;
    let dev_pairs = make_targets(dev_set.records(), &refs)?;

    let model = if a.resume && ck_path.exists() {
        let m = read_manifest(&ck_path)?;
        if m.config_hash != ctx.hash {
            return Err(AppError::Config(format!(
                "{} was trained under config {} but the current config is {}; refusing to resume",
                ck_path.display(),
                m.config_hash,
                ctx.hash
            )));
        }
        load_checkpoint(&ck_path)?.model
    } else {
        let st = &ctx.cfg.student;
        let tok = build_vocab_for_inputs(train_set.records(), st.vocab_size, st.max_len)?;
        let enc = st.encoder(tok.vocab_size(), tcfg.dropout);
        StudentModel::init(tok, enc, train_pairs[0].target.dim(), tcfg.projection_bias, tcfg.seed)?
    };
    println!(
        "training on {} pairs ({} dev) from {label}, {} parameters",
        train_pairs.len(),
        dev_pairs.len(),
        model.parameters().iter().map(|t| t.numel()).sum::<usize>()
    );
    let outcome = train(model, &tcfg, &train_pairs, &dev_pairs, &ctx.hash)?;
    save_checkpoint(&ck_path, &outcome.best)?;
    let reports = ctx.reports_dir();
    let stem = slug(&label);
    write_text(&reports.join(format!("train-{stem}.curve.csv")), &outcome.curve.to_csv())?;
    let report = TrainReport {
        config_hash: &ctx.hash,
        teacher: label.clone(),
        train_pairs: train_pairs.len(),
        dev_pairs: dev_pairs.len(),
        steps: outcome.steps,
        best_step: outcome.best.step,
        best_dev_loss: outcome.best.dev_loss,
        aborted: outcome.aborted.clone(),
        resumed: a.resume,
        wall_time_ms: start.elapsed().as_millis() as u64,
    };
    write_json(&reports.join(format!("train-{stem}.json")), &report)?;
    println!(
        "{} steps, best dev loss {:.6} at step {}, checkpoint {}",
        outcome.steps,
        outcome.best.dev_loss,
        outcome.best.step,
        ck_path.display()
    );
    match outcome.aborted {
        Some(why) => Err(AppError::Numeric(format!("{why}; kept the checkpoint from step {}", outcome.best.step))),
        None => Ok(()),
    }
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let pairings: Vec<EncoderPairing> = if a.pairings.is_empty() {
        ctx.cfg.eval.parsed_pairings()?
    } else {
        a.pairings
            .iter()
            .map(|p| {
                let parsed = EncoderPairing::parse(p).map_err(|e| AppError::Config(e.to_string()))?;
                parsed.validate().map_err(|e| AppError::Config(e.to_string()))?;
                Ok(parsed)
            })
            .collect::<Result<_>>()?
    };
    let specs = ctx.teachers_or_default(&a.teachers)?;
    let label = teacher_label(&specs);
    let set = ctx.eval_set()?;
    let maps = load_vectors(ctx, &specs)?;
    let teacher = match &maps[..] {
        [a, b] => concat_maps(a, b)?,
        _ => maps.into_iter().next().expect("one teacher"),
    };
    let needs_student = pairings.iter().any(|p| *p != EncoderPairing::TEACHER);
    let student = if needs_student {
        let path = a.checkpoint.as_ref().map_or_else(|| checkpoint_path(ctx, &label), |p| ctx.path(p));
        Some(load_checkpoint(&path)?.model)
    } else {
        None
    };
    let reports = ctx.reports_dir();
    let mut rows = Vec::new();
    for pairing in pairings {
        let start = Instant::now();
        let (mut report, run) = evaluate_pairing(
            pairing,
            &set,
            Some(&teacher),
            student.as_ref(),
            &ctx.cfg.eval.k,
            ctx.cfg.eval.gain,
            ctx.cfg.seed,
        )?;
        report.config_hash = Some(ctx.hash.clone());
        report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
        let stem = format!("eval-{}-{}", slug(&label), slug(&report.pairing));
        write_json(&reports.join(format!("{stem}.json")), &report)?;
        if a.run_files {
            write_text(&reports.join(format!("{stem}.run")), &format_run(&run, &slug(&report.pairing)))?;
        }
        rows.push(report);
    }
    print!("{}", eval_table(&rows).to_text());
    Ok(())
}

fn eval_table(reports: &[EvalReport]) -> crate::table::Table {
    let keys: Vec<String> = reports
        .iter()
        .flat_map(|r| r.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["pairing".to_string()];
    header.extend(keys.iter().cloned());
    let mut t = crate::table::Table::new(header);
    for r in reports {
        let mut row = vec![r.pairing.clone()];
        row.extend(keys.iter().map(|k| r.mean(k).map_or_else(|| "-".into(), |v| format!("{v:.4}"))));
        t.push(row);
    }
    t
}

fn cmd_ablate(ctx: &Context, a: &AblateArgs) -> Result<()> {
    let study = Study::parse(&a.study)?;
    let result = ablate(&ctx.cfg, study)?;
    let table = result.table();
    let dir = ctx.reports_dir();
    let stem = format!("ablate-{}", study.as_str());
    let text = format!("# config {}\n{}", ctx.hash, table.to_text());
    write_text(&dir.join(format!("{stem}.txt")), &text)?;
    write_text(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    print!("{text}");
    let failed = result.cells.iter().filter(|c| c.values.is_err()).count();
    if failed > 0 {
        eprintln!("warning: {failed} cells failed");
    }
    Ok(())
}

fn cmd_cost(ctx: &Context, a: &CostArgs) -> Result<()> {
    let specs = match &a.teacher {
        Some(n) => vec![ctx.teacher(n)?],
        None => ctx.cfg.teachers.clone(),
    };
    let mut tokens_by_limit: BTreeMap<usize, u64> = BTreeMap::new();
    for s in &specs {
        let tokens = match a.tokens {
            Some(t) => t,
            None => {
                if let Entry::Vacant(e) = tokens_by_limit.entry(s.max_tokens) {
                    let n = all_records(ctx)?
                        .iter()
                        .map(|r| truncate_tokens(&r.text, s.max_tokens).1 as u64)
                        .sum();
                    e.insert(n);
                }
                tokens_by_limit[&s.max_tokens] as i64
            }
        };
        println!("{}: {tokens} tokens at ${:.2}/1M: {}", s.name, s.price_per_million(), estimate_cost(s, tokens)?);
    }
    Ok(())
}
