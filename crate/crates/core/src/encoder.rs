//! Pre-norm transformer encoder with mean pooling.
//!
//! Parameter order (also the checkpoint order):
//!
//! 1. token embeddings `[V × d]`
//! 2. position embeddings `[max_len × d]`
//! 3. per layer: attention norm gain `[d]`, attention norm shift `[d]`,
//!    `W_q`, `W_k`, `W_v`, `W_o` (each `[d × d]`), feed-forward norm gain
//!    `[d]`, feed-forward norm shift `[d]`, `W_in [d × 4d]`, `W_out [4d × d]`.
//!
//! There are no bias vectors besides the layer-norm shifts.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, LAYER_NORM_EPS};

/// Tensors per transformer layer.
pub const TENSORS_PER_LAYER: usize = 10;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            dim: 64,
            layers: 2,
            heads: 4,
            max_len: 64,
            dropout: 0.10,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.dim == 0 || self.max_len == 0 || self.heads == 0 {
            return Err(Error::invalid("encoder extents must be positive"));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid("dim must be divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn tensor_count(&self) -> usize {
        2 + self.layers * TENSORS_PER_LAYER
    }

    /// Shapes of every parameter tensor, in checkpoint order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let d = self.dim;
        let mut s = vec![vec![self.vocab_size, d], vec![self.max_len, d]];
        for _ in 0..self.layers {
            s.extend([
                vec![d],
                vec![d],
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d, 4 * d],
                vec![4 * d, d],
            ]);
        }
        s
    }

    /// Scalar parameter count; depends only on `(V, d, L, max_len)`.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        (self.vocab_size + self.max_len) * d + self.layers * (4 * d + 12 * d * d)
    }

    /// Records the forward pass on `tape` and returns the pooled `[d]`
    /// representation (not normalized). Encoder tensors start at parameter
    /// index `base`. Dropout is applied only when `dropout` carries an RNG.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        base: usize,
        ids: &[u32],
        mask: &[bool],
        mut dropout: Option<&mut SeededRng>,
    ) -> Result<Var> {
        let len = ids.len();
        if len > self.max_len {
            return Err(Error::SequenceTooLong {
                len,
                max_len: self.max_len,
            });
        }
        if mask.len() != len {
            return Err(Error::ShapeMismatch {
                op: "encoder forward",
                left: vec![len],
                right: vec![mask.len()],
            });
        }
        let mut rows = Vec::with_capacity(len);
        for &id in ids {
            if id as usize >= self.vocab_size {
                return Err(Error::invalid(alloc::format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            rows.push(id as usize);
        }
        let p = self.dropout;
        let mut drop = |tape: &mut Tape<'_>, x: Var| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let shape = tape.value(x).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let keep = 1.0 / (1.0 - p);
                    let m = (0..n)
                        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                        .collect();
                    tape.mul_const(x, Tensor::new(shape, m)?)
                }
                _ => Ok(x),
            }
        };

        let tok = tape.param(base);
        let pos = tape.param(base + 1);
        let tok_rows = tape.gather(tok, rows)?;
        let pos_rows = tape.gather(pos, (0..len).collect())?;
        let mut x = tape.add(tok_rows, pos_rows)?;
        x = drop(tape, x)?;

        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let key_mask: Vec<bool> = (0..len * len).map(|i| mask[i % len]).collect();
        for l in 0..self.layers {
            let w = base + 2 + l * TENSORS_PER_LAYER;
            let [g1, b1, wq, wk, wv, wo, g2, b2, w_in, w_out] =
                core::array::from_fn(|i| tape.param(w + i));

            let h = tape.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let mut heads = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale)?;
                let attn = tape.softmax_masked(scores, key_mask.clone())?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let cat = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(heads)?
            };
            let o = tape.matmul(cat, wo)?;
            let o = drop(tape, o)?;
            x = tape.add(x, o)?;

            let h2 = tape.layer_norm(x, g2, b2, LAYER_NORM_EPS)?;
            let f = tape.matmul(h2, w_in)?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, w_out)?;
            let f = drop(tape, f)?;
            x = tape.add(x, f)?;
        }
        tape.mean_pool(x, mask.to_vec())
    }
}

/// Encoder weights with their configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    config: EncoderConfig,
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    /// Random initialization: normal(0, 0.02) for embeddings and
    /// projections, unit gains and zero shifts for layer norms.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::keyed(seed, &["encoder-init"]);
        let tensors = config
            .shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let data = match layer_slot(i) {
                    Some(0) | Some(6) => vec![1.0; n],
                    Some(1) | Some(7) => vec![0.0; n],
                    _ => (0..n).map(|_| (INIT_STD * rng.normal()) as f32 as f64).collect(),
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::invalid(alloc::format!(
                "expected {} encoder tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "encoder params",
                    left: s.clone(),
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: "encoder params" });
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Eval-mode pooled representation of one sequence.
    pub fn embed(&self, ids: &[u32], mask: &[bool]) -> Result<Tensor> {
        let mut tape = Tape::new(&self.tensors);
        let out = self.config.forward(&mut tape, 0, ids, mask, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Position of tensor `i` inside its layer, or `None` for the embeddings.
fn layer_slot(i: usize) -> Option<usize> {
    i.checked_sub(2).map(|j| j % TENSORS_PER_LAYER)
}
