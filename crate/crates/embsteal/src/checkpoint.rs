//! Student checkpoints.
//!
//! `<name>.embh` holds the magic `EMBH1`, then `V`, `d_s`, `L`, `heads` and
//! `max_len` as little-endian `u32`, then every encoder tensor as
//! little-endian `f32` in encoder order, then the projection block:
//! `d_t: u32`, `has_bias: u8`, the `d_t × d_s` matrix and the optional
//! bias. `<name>.embh.json` is the sidecar manifest with the SHA-256 of the
//! binary file, and `<name>.vocab` lists one token per line.

use std::fs;
use std::path::{Path, PathBuf};

use embsteal_core::encoder::{EncoderConfig, EncoderParams};
use embsteal_core::tensor::Tensor;
use embsteal_core::tokenizer::Tokenizer;
use embsteal_core::trainer::{Checkpoint, ProjectionParams, StudentModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 5] = b"EMBH1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub sha256: String,
    pub config_hash: String,
    pub step: u64,
    pub dev_loss: f64,
    pub dropout: f64,
    pub tokenizer_max_len: usize,
    pub teacher_dim: usize,
    pub parameter_count: usize,
    pub vocab_file: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn vocab_path(path: &Path) -> PathBuf {
    path.with_extension("vocab")
}

pub fn encode_model(model: &StudentModel) -> Vec<u8> {
    let cfg = model.encoder.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [cfg.vocab_size, cfg.dim, cfg.layers, cfg.heads, cfg.max_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let floats = |out: &mut Vec<u8>, t: &Tensor| {
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for t in model.encoder.tensors() {
        floats(&mut out, t);
    }
    let p = &model.projection;
    out.extend_from_slice(&(p.out_dim() as u32).to_le_bytes());
    out.push(u8::from(p.bias.is_some()));
    floats(&mut out, &p.matrix);
    if let Some(b) = &p.bias {
        floats(&mut out, b);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self, shape: Vec<usize>) -> std::result::Result<Tensor, String> {
        let n: usize = shape.iter().product();
        let data = self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
}

/// Decodes weights; `dropout` is not part of the binary layout.
pub fn decode_model(bytes: &[u8], tokenizer: Tokenizer, dropout: f64) -> std::result::Result<StudentModel, String> {
    if bytes.get(..5) != Some(MAGIC) {
        return Err("not an EMBH1 checkpoint".into());
    }
    let mut r = Reader { bytes, pos: 5 };
    let config = EncoderConfig {
        vocab_size: r.u32()?,
        dim: r.u32()?,
        layers: r.u32()?,
        heads: r.u32()?,
        max_len: r.u32()?,
        dropout,
    };
    config.validate().map_err(|e| e.to_string())?;
    let tensors = config
        .shapes()
        .into_iter()
        .map(|s| r.tensor(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let d_t = r.u32()?;
    let has_bias = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(format!("bad bias flag {b}")),
    };
    let matrix = r.tensor(vec![d_t, config.dim])?;
    let bias = if has_bias { Some(r.tensor(vec![d_t])?) } else { None };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let encoder = EncoderParams::from_tensors(config, tensors).map_err(|e| e.to_string())?;
    let projection = ProjectionParams::from_tensors(matrix, bias).map_err(|e| e.to_string())?;
    StudentModel::new(tokenizer, encoder, projection).map_err(|e| e.to_string())
}

pub fn write_vocab(path: &Path, tok: &Tokenizer) -> Result<()> {
    let mut s = tok.tokens().join("\n");
    s.push('\n');
    fs::write(path, s).map_err(AppError::io(path))
}

pub fn read_vocab(path: &Path, max_len: usize) -> Result<Tokenizer> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let tokens = text.lines().map(str::to_string).collect();
    Tokenizer::from_tokens(tokens, max_len).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

/// Writes the binary file, the vocabulary and the manifest.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<CheckpointManifest> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    }
    let bytes = encode_model(&ck.model);
    fs::write(path, &bytes).map_err(AppError::io(path))?;
    let vocab = vocab_path(path);
    write_vocab(&vocab, &ck.model.tokenizer)?;
    let manifest = CheckpointManifest {
        format: "EMBH1".into(),
        sha256: hex(&Sha256::digest(&bytes)),
        config_hash: ck.config_hash.clone(),
        step: ck.step,
        dev_loss: ck.dev_loss,
        dropout: ck.model.encoder.config().dropout,
        tokenizer_max_len: ck.model.tokenizer.max_len(),
        teacher_dim: ck.model.teacher_dim(),
        parameter_count: ck.model.parameters().iter().map(Tensor::numel).sum(),
        vocab_file: vocab.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    };
    let mp = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| AppError::Data(e.to_string()))?;
    fs::write(&mp, json + "\n").map_err(AppError::io(&mp))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mp = manifest_path(path);
    let text = fs::read_to_string(&mp).map_err(AppError::io(&mp))?;
    serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", mp.display())))
}

/// Loads a checkpoint after checking the content hash.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(path)?;
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    let digest = hex(&Sha256::digest(&bytes));
    if digest != manifest.sha256 {
        return Err(AppError::Data(format!(
            "{}: content hash {digest} does not match manifest {}",
            path.display(),
            manifest.sha256
        )));
    }
    let vocab = path.with_file_name(&manifest.vocab_file);
    let tok = read_vocab(&vocab, manifest.tokenizer_max_len)?;
    let model = decode_model(&bytes, tok, manifest.dropout).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint {
        step: manifest.step,
        dev_loss: manifest.dev_loss,
        config_hash: manifest.config_hash,
        model,
    })
}
