//! Distilling teacher embeddings into the student encoder.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::optim::{AdamW, AdamWConfig};
use crate::record::{Kind, TextRecord};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::teacher::{concat_teachers, EmbeddingVector};
use crate::tensor::{normalize_slice, Tensor};
use crate::tokenizer::Tokenizer;

/// Linear map from the student width `d_s` to the teacher width `d_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// `[d_t × d_s]`
    pub matrix: Tensor,
    /// `[d_t]`
    pub bias: Option<Tensor>,
}

impl ProjectionParams {
    /// Normal(0, 1/√d_s) weights, zero bias.
    pub fn init(d_t: usize, d_s: usize, bias: bool, seed: u64) -> Result<Self> {
        if d_t == 0 || d_s == 0 {
            return Err(Error::invalid("projection extents must be positive"));
        }
        let mut rng = SeededRng::keyed(seed, &["projection-init"]);
        let std = 1.0 / libm::sqrt(d_s as f64);
        let data = (0..d_t * d_s).map(|_| (std * rng.normal()) as f32 as f64).collect();
        Ok(Self {
            matrix: Tensor::matrix(d_t, d_s, data)?,
            bias: bias.then(|| Tensor::zeros(&[d_t])),
        })
    }

    /// Identity on the first `min(d_t, d_s)` coordinates, zero elsewhere.
    pub fn identity_padded(d_t: usize, d_s: usize) -> Result<Self> {
        let mut m = Tensor::matrix(d_t, d_s, alloc::vec![0.0; d_t * d_s])?;
        for i in 0..d_t.min(d_s) {
            m.data_mut()[i * d_s + i] = 1.0;
        }
        Ok(Self { matrix: m, bias: None })
    }

    pub fn from_tensors(matrix: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let (d_t, _) = matrix.dims2("projection")?;
        if let Some(b) = &bias {
            if b.shape() != [d_t] {
                return Err(Error::ShapeMismatch {
                    op: "projection bias",
                    left: alloc::vec![d_t],
                    right: b.shape().to_vec(),
                });
            }
        }
        if !matrix.is_finite() || bias.as_ref().is_some_and(|b| !b.is_finite()) {
            return Err(Error::NonFinite { op: "projection params" });
        }
        Ok(Self { matrix, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        core::iter::once(&self.matrix).chain(self.bias.as_ref())
    }
}

/// Tokenizer, encoder and projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub tokenizer: Tokenizer,
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
}

/// Unit-norm student outputs for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentEmbedding {
    /// Normalized pooled encoder output, `d_s` wide.
    pub bottleneck: EmbeddingVector,
    /// Normalized projection of the pooled output, `d_t` wide.
    pub final_: EmbeddingVector,
}

impl StudentModel {
    pub fn new(tokenizer: Tokenizer, encoder: EncoderParams, projection: ProjectionParams) -> Result<Self> {
        let cfg = encoder.config();
        if tokenizer.vocab_size() != cfg.vocab_size {
            return Err(Error::invalid(format!(
                "tokenizer has {} tokens but encoder expects {}",
                tokenizer.vocab_size(),
                cfg.vocab_size
            )));
        }
        if tokenizer.max_len() > cfg.max_len {
            return Err(Error::invalid("tokenizer max_len exceeds encoder max_len"));
        }
        if projection.in_dim() != cfg.dim {
            return Err(Error::ShapeMismatch {
                op: "projection",
                left: alloc::vec![projection.out_dim(), cfg.dim],
                right: projection.matrix.shape().to_vec(),
            });
        }
        Ok(Self {
            tokenizer,
            encoder,
            projection,
        })
    }

    /// Fresh student for teacher width `d_t`.
    pub fn init(tokenizer: Tokenizer, config: EncoderConfig, d_t: usize, bias: bool, seed: u64) -> Result<Self> {
        let encoder = EncoderParams::init(config, seed)?;
        let projection = ProjectionParams::init(d_t, config.dim, bias, seed)?;
        Self::new(tokenizer, encoder, projection)
    }

    pub fn student_dim(&self) -> usize {
        self.encoder.config().dim
    }

    pub fn teacher_dim(&self) -> usize {
        self.projection.out_dim()
    }

    /// All trainable tensors: encoder first, then projection matrix and bias.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.encoder
            .tensors()
            .iter()
            .chain(self.projection.tensors())
            .cloned()
            .collect()
    }

    /// Rebuilds a model from tensors laid out as in [`Self::parameters`].
    pub fn with_parameters(&self, mut params: Vec<Tensor>) -> Result<Self> {
        let n = self.encoder.tensors().len();
        if params.len() != n + 1 + usize::from(self.projection.bias.is_some()) {
            return Err(Error::invalid("parameter count does not match model"));
        }
        let mut tail = params.split_off(n).into_iter();
        let matrix = tail.next().ok_or(Error::Empty("projection"))?;
        let projection = ProjectionParams::from_tensors(matrix, tail.next())?;
        let encoder = EncoderParams::from_tensors(*self.encoder.config(), params)?;
        Self::new(self.tokenizer.clone(), encoder, projection)
    }

    /// Eval-mode embeddings of one record.
    pub fn embed(&self, rec: &TextRecord) -> Result<StudentEmbedding> {
        let enc = self.tokenizer.encode(rec);
        let (ids, mask) = enc.trimmed();
        let mut pooled = self.encoder.embed(ids, mask)?.into_data();
        let m = &self.projection.matrix;
        let d_s = pooled.len();
        let mut fin: Vec<f64> = (0..self.teacher_dim())
            .map(|i| crate::tensor::dot(&m.data()[i * d_s..(i + 1) * d_s], &pooled))
            .collect();
        if let Some(b) = &self.projection.bias {
            fin.iter_mut().zip(b.data()).for_each(|(f, b)| *f += b);
        }
        normalize_slice(&mut pooled)?;
        normalize_slice(&mut fin)?;
        Ok(StudentEmbedding {
            bottleneck: EmbeddingVector::from_unit(pooled)?,
            final_: EmbeddingVector::from_unit(fin)?,
        })
    }
}

/// A record and its distillation target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub record: TextRecord,
    pub target: EmbeddingVector,
}

/// Pairs every record with its teacher vector, or with the concatenation
/// of two teachers' vectors.
pub fn make_targets(records: &[TextRecord], teachers: &[&BTreeMap<String, EmbeddingVector>]) -> Result<Vec<TrainPair>> {
    if teachers.is_empty() || teachers.len() > 2 {
        return Err(Error::invalid("targets need one or two teachers"));
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| teachers.iter().any(|t| !t.contains_key(&r.id)))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTargets { ids: missing });
    }
    records
        .iter()
        .map(|r| {
            let target = match teachers {
                [a] => a[&r.id].clone(),
                [a, b] => concat_teachers(&a[&r.id], &b[&r.id])?,
                _ => unreachable!(),
            };
            Ok(TrainPair {
                record: r.clone(),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub dropout: f64,
    pub epochs: usize,
    pub objective: Objective,
    pub seed: u64,
    /// Steps between dev evaluations; 0 evaluates at the end of each epoch.
    pub dev_eval_every: u64,
    /// Stop after this many dev evaluations without improvement.
    pub patience: Option<usize>,
    pub projection_bias: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 4e-5,
            weight_decay: 0.01,
            warmup_steps: 50,
            dropout: 0.10,
            epochs: 1,
            objective: Objective::Cosine,
            seed: 0,
            dev_eval_every: 0,
            patience: None,
            projection_bias: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if matches!(self.objective, Objective::Contrastive { .. }) && self.batch_size < 2 {
            return Err(Error::invalid("contrastive loss needs batch_size ≥ 2"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be a non-negative number"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            ..AdamWConfig::default()
        }
    }
}

/// Model snapshot at a dev evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub dev_loss: f64,
    pub config_hash: String,
    pub model: StudentModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<CurvePoint>,
}

impl LossCurve {
    /// `step,train_loss,dev_loss` with empty fields for missing values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,dev_loss\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.step, opt(p.train_loss), opt(p.dev_loss));
        }
        s
    }

    pub fn dev_points(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.points.iter().filter_map(|p| p.dev_loss.map(|d| (p.step, d)))
    }

    /// Mean train loss of each consecutive run of `steps_per_epoch` steps.
    pub fn epoch_means(&self, steps_per_epoch: usize) -> Vec<f64> {
        let train: Vec<f64> = self.points.iter().filter_map(|p| p.train_loss).collect();
        train
            .chunks(steps_per_epoch.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: StudentModel,
    pub curve: LossCurve,
    pub steps: u64,
    /// Set when training stopped on a non-finite value.
    pub aborted: Option<String>,
}

struct Encoded {
    ids: Vec<u32>,
    mask: Vec<bool>,
    target: Vec<f64>,
}

fn encode_pairs(tok: &Tokenizer, pairs: &[TrainPair], d_t: usize) -> Result<Vec<Encoded>> {
    pairs
        .iter()
        .map(|p| {
            if p.target.dim() != d_t {
                return Err(Error::ShapeMismatch {
                    op: "training target",
                    left: alloc::vec![d_t],
                    right: alloc::vec![p.target.dim()],
                });
            }
            let e = tok.encode(&p.record);
            let (ids, mask) = e.trimmed();
            Ok(Encoded {
                ids: ids.to_vec(),
                mask: mask.to_vec(),
                target: p.target.values().to_vec(),
            })
        })
        .collect()
}

/// Records the student on `tape` for a batch and returns the unnormalized
/// projected outputs `[n × d_t]`.
fn record_batch(
    tape: &mut Tape<'_>,
    enc: &EncoderConfig,
    has_bias: bool,
    batch: &[&Encoded],
    mut dropout: Option<&mut SeededRng>,
) -> Result<Var> {
    let n_enc = enc.tensor_count();
    let mut pooled = Vec::with_capacity(batch.len());
    for e in batch {
        pooled.push(enc.forward(tape, 0, &e.ids, &e.mask, dropout.as_deref_mut())?);
    }
    let pooled = tape.stack_rows(pooled)?;
    let proj = tape.param(n_enc);
    let mut out = tape.matmul_bt(pooled, proj)?;
    if has_bias {
        let b = tape.param(n_enc + 1);
        out = tape.add_row(out, b)?;
    }
    Ok(out)
}

fn target_tensor(batch: &[&Encoded]) -> Result<Tensor> {
    let d = batch[0].target.len();
    Tensor::matrix(batch.len(), d, batch.iter().flat_map(|e| e.target.iter().copied()).collect())
}

fn batch_loss(params: &[Tensor], enc: &EncoderConfig, has_bias: bool, objective: &Objective, batch: &[&Encoded]) -> Result<f64> {
    let mut tape = Tape::new(params);
    let s = record_batch(&mut tape, enc, has_bias, batch, None)?;
    let t = tape.input(target_tensor(batch)?)?;
    let l = objective.record(&mut tape, t, s)?;
    Ok(tape.value(l).data()[0])
}

fn dev_loss_of(
    params: &[Tensor],
    enc: &EncoderConfig,
    has_bias: bool,
    objective: &Objective,
    batch_size: usize,
    dev: &[Encoded],
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in dev.chunks(batch_size) {
        let batch: Vec<&Encoded> = chunk.iter().collect();
        total += batch_loss(params, enc, has_bias, objective, &batch)? * chunk.len() as f64;
    }
    Ok(total / dev.len() as f64)
}

/// Dev loss of `model` with dropout off, averaged per element over batches
/// of `batch_size` taken in order.
pub fn dev_loss(model: &StudentModel, objective: &Objective, batch_size: usize, dev: &[TrainPair]) -> Result<f64> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let enc = *model.encoder.config();
    let encoded = encode_pairs(&model.tokenizer, dev, model.teacher_dim())?;
    dev_loss_of(
        &model.parameters(),
        &enc,
        model.projection.bias.is_some(),
        objective,
        batch_size.max(1),
        &encoded,
    )
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::ZeroNorm)
}

/// Trains `model` on `train` and returns the checkpoint with the lowest dev
/// loss. Ties keep the earlier checkpoint.
pub fn train(
    model: StudentModel,
    cfg: &TrainingConfig,
    train: &[TrainPair],
    dev: &[TrainPair],
    config_hash: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    if cfg.projection_bias != model.projection.bias.is_some() {
        return Err(Error::invalid("projection bias flag differs from model"));
    }
    let d_t = model.teacher_dim();
    let train_enc = encode_pairs(&model.tokenizer, train, d_t)?;
    let dev_enc = encode_pairs(&model.tokenizer, dev, d_t)?;
    let mut enc = *model.encoder.config();
    let eval_enc = enc;
    enc.dropout = cfg.dropout;
    let has_bias = cfg.projection_bias;

    let mut params = model.parameters();
    let mut opt = AdamW::new(cfg.adamw(), &params)?;
    let mut drop_rng = SeededRng::keyed(cfg.seed, &["dropout"]);
    let mut curve = LossCurve::default();
    let mut step = 0u64;

    let snapshot = |params: &[Tensor], step: u64, dev_loss: f64| -> Result<Checkpoint> {
        Ok(Checkpoint {
            step,
            dev_loss,
            config_hash: config_hash.into(),
            model: model.with_parameters(params.to_vec())?,
        })
    };

    let initial = dev_loss_of(&params, &eval_enc, has_bias, &cfg.objective, cfg.batch_size, &dev_enc)?;
    curve.points.push(CurvePoint {
        step: 0,
        train_loss: None,
        dev_loss: Some(initial),
    });
    let mut best = snapshot(&params, 0, initial)?;
    let mut stale = 0usize;
    let mut aborted = None;
    let mut stop = false;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_enc.len()).collect();
        SeededRng::keyed(cfg.seed, &["epoch", &format!("{epoch}")]).shuffle(&mut order);
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Encoded> = chunk.iter().map(|&i| &train_enc[i]).collect();
            let result = (|| -> Result<(f64, Vec<Tensor>)> {
                let mut tape = Tape::new(&params);
                let s = record_batch(&mut tape, &enc, has_bias, &batch, Some(&mut drop_rng))?;
                let t = tape.input(target_tensor(&batch)?)?;
                let l = cfg.objective.record(&mut tape, t, s)?;
                let value = tape.value(l).data()[0];
                let grads = tape.backward(l)?.into_dense(&params);
                Ok((value, grads))
            })();
            let (loss, grads) = match result {
                Ok(v) => v,
                Err(e) if is_numeric(&e) => {
                    aborted = Some(format!("step {}: {e}", step + 1));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let before = params.clone();
            if let Err(e) = opt.step(&mut params, &grads) {
                if is_numeric(&e) {
                    params = before;
                    aborted = Some(format!("step {}: {e}", step + 1));
                    break 'epochs;
                }
                return Err(e);
            }
            step += 1;
            let mut point = CurvePoint {
                step,
                train_loss: Some(loss),
                dev_loss: None,
            };
            let due = if cfg.dev_eval_every == 0 {
                bi + 1 == n_batches
            } else {
                step.is_multiple_of(cfg.dev_eval_every)
            };
            if due {
                let d = match dev_loss_of(&params, &eval_enc, has_bias, &cfg.objective, cfg.batch_size, &dev_enc) {
                    Ok(d) => d,
                    Err(e) if is_numeric(&e) => {
                        curve.points.push(point);
                        aborted = Some(format!("dev evaluation at step {step}: {e}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                point.dev_loss = Some(d);
                if d < best.dev_loss {
                    best = snapshot(&params, step, d)?;
                    stale = 0;
                } else {
                    stale += 1;
                    stop = cfg.patience.is_some_and(|p| stale >= p);
                }
            }
            curve.points.push(point);
            if stop {
                break 'epochs;
            }
        }
    }

    if aborted.is_none() && curve.points.last().is_some_and(|p| p.dev_loss.is_none()) {
        let d = dev_loss_of(&params, &eval_enc, has_bias, &cfg.objective, cfg.batch_size, &dev_enc)?;
        if let Some(p) = curve.points.last_mut() {
            p.dev_loss = Some(d);
        }
        if d < best.dev_loss {
            best = snapshot(&params, step, d)?;
        }
    }
    Ok(TrainOutcome {
        best,
        last: model.with_parameters(params)?,
        curve,
        steps: step,
        aborted,
    })
}

/// Record kinds in a pair list, for reporting.
pub fn kind_counts(pairs: &[TrainPair]) -> (usize, usize) {
    let q = pairs.iter().filter(|p| p.record.kind == Kind::Query).count();
    (q, pairs.len() - q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab_for_inputs;
    use alloc::vec;

    fn toy() -> (StudentModel, Vec<TrainPair>) {
        let recs = vec![
            TextRecord::query("q1", "red apple"),
            TextRecord::passage("p1", "green pear tree"),
            TextRecord::passage("p2", "blue sky"),
            TextRecord::query("q2", "apple tree"),
        ];
        let tok = build_vocab_for_inputs(&recs, 16, 8).unwrap();
        let cfg = EncoderConfig {
            vocab_size: tok.vocab_size(),
            dim: 8,
            layers: 1,
            heads: 2,
            max_len: 8,
            dropout: 0.0,
        };
        let model = StudentModel::init(tok, cfg, 4, false, 3).unwrap();
        let mut rng = SeededRng::new(9);
        let pairs = recs
            .into_iter()
            .map(|r| TrainPair {
                record: r,
                target: EmbeddingVector::normalized((0..4).map(|_| rng.normal()).collect()).unwrap(),
            })
            .collect();
        (model, pairs)
    }

    #[test]
    fn embed_matches_matrix_apply_oracle() {
        let (model, pairs) = toy();
        let e = model.embed(&pairs[0].record).unwrap();
        let enc = model.tokenizer.encode(&pairs[0].record);
        let (ids, mask) = enc.trimmed();
        let pooled = model.encoder.embed(ids, mask).unwrap();
        let w = &model.projection.matrix;
        let mut want: Vec<f64> = (0..4)
            .map(|i| (0..8).map(|j| w.data()[i * 8 + j] * pooled.data()[j]).sum())
            .collect();
        let n = libm::sqrt(want.iter().map(|v| v * v).sum::<f64>());
        want.iter_mut().for_each(|v| *v /= n);
        for (a, b) in e.final_.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(e.bottleneck.dim(), 8);
    }

    #[test]
    fn identity_projection_keeps_bottleneck_direction() {
        let (model, pairs) = toy();
        let wide = StudentModel::new(
            model.tokenizer.clone(),
            model.encoder.clone(),
            ProjectionParams::identity_padded(12, 8).unwrap(),
        )
        .unwrap();
        let e = wide.embed(&pairs[1].record).unwrap();
        for (a, b) in e.final_.values()[..8].iter().zip(e.bottleneck.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(e.final_.values()[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_lr_keeps_parameters_and_dev_loss() {
        let (model, pairs) = toy();
        let cfg = TrainingConfig {
            lr: 0.0,
            batch_size: 2,
            epochs: 3,
            dev_eval_every: 1,
            ..Default::default()
        };
        let out = train(model.clone(), &cfg, &pairs, &pairs, "h").unwrap();
        assert_eq!(out.last, model);
        let devs: Vec<f64> = out.curve.dev_points().map(|(_, d)| d).collect();
        assert_eq!(devs.len(), 7);
        assert!(devs.iter().all(|&d| d == devs[0]));
        assert_eq!(out.best.step, 0);
    }

    #[test]
    fn best_checkpoint_reevaluates_to_recorded_loss() {
        let (model, pairs) = toy();
        let cfg = TrainingConfig {
            lr: 1e-2,
            warmup_steps: 2,
            batch_size: 2,
            epochs: 10,
            dev_eval_every: 3,
            ..Default::default()
        };
        let out = train(model, &cfg, &pairs, &pairs[..2], "h").unwrap();
        let min = out.curve.dev_points().map(|(_, d)| d).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.dev_loss, min);
        let again = dev_loss(&out.best.model, &cfg.objective, 2, &pairs[..2]).unwrap();
        assert!((again - out.best.dev_loss).abs() < 1e-12);
        assert!(out.best.dev_loss < out.curve.points[0].dev_loss.unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let (model, pairs) = toy();
        let cfg = TrainingConfig {
            lr: 5e-3,
            batch_size: 3,
            epochs: 4,
            ..Default::default()
        };
        let a = train(model.clone(), &cfg, &pairs, &pairs, "h").unwrap();
        let b = train(model, &cfg, &pairs, &pairs, "h").unwrap();
        assert_eq!(a.curve.to_csv(), b.curve.to_csv());
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn targets_single_and_concat() {
        let v = |x: &[f64]| EmbeddingVector::normalized(x.to_vec()).unwrap();
        let recs = vec![TextRecord::query("a", "x"), TextRecord::passage("b", "y")];
        let t1: BTreeMap<String, EmbeddingVector> =
            [("a".into(), v(&[1.0, 0.0])), ("b".into(), v(&[0.0, 1.0]))].into();
        let t2: BTreeMap<String, EmbeddingVector> =
            [("a".into(), v(&[1.0, 1.0, 0.0])), ("b".into(), v(&[0.0, 0.0, 1.0]))].into();
        assert_eq!(make_targets(&recs, &[&t1]).unwrap()[0].target.dim(), 2);
        let both = make_targets(&recs, &[&t1, &t2]).unwrap();
        assert_eq!(both[1].target.dim(), 5);
        let mut partial = t2.clone();
        partial.remove("b");
        assert_eq!(
            make_targets(&recs, &[&t1, &partial]),
            Err(Error::MissingTargets { ids: vec!["b".into()] })
        );
    }

    #[test]
    fn curve_csv_layout() {
        let c = LossCurve {
            points: vec![
                CurvePoint { step: 0, train_loss: None, dev_loss: Some(-0.5) },
                CurvePoint { step: 1, train_loss: Some(-0.25), dev_loss: None },
            ],
        };
        assert_eq!(c.to_csv(), "step,train_loss,dev_loss\n0,,-0.5\n1,-0.25,\n");
    }
}
