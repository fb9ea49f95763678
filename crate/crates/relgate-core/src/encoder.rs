//! Small transformer encoder over relation token sequences.
//!
//! Post-layer-norm blocks (attention then gelu FFN), learned token,
//! position, and segment embeddings. The per-sequence outputs carry the
//! global representation (position 0) and one representation per relation
//! `[CLS]`, gathered at the recorded positions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::brs::PaddedBatch;
use crate::error::{Error, Result};
use crate::model::{binding_id, ParamBinding, ParamSet};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const MASK_BIAS: f64 = -1e9;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: hidden 64, 2 layers, 4 heads, FFN 4x hidden.
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_seq_len: 256,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.vocab_size,
            self.hidden,
            self.layers,
            self.heads,
            self.ffn_dim,
            self.max_seq_len,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Train mode draws dropout masks from the seeded stream; eval mode is the
/// identity on dropout sites.
pub enum Mode<'a> {
    Train(&'a mut SeededRng),
    Eval,
}

impl Mode<'_> {
    pub fn apply_dropout(&mut self, tape: &mut Tape, x: TensorId, p: f64) -> Result<TensorId> {
        match self {
            Mode::Train(rng) => tape.dropout(x, p, rng),
            Mode::Eval => Ok(x),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Per-sequence encoder outputs on the tape.
#[derive(Debug, Clone)]
pub struct SeqEncoding {
    /// `[seq × d]` hidden states after the last block.
    pub hidden: TensorId,
    /// `[1 × d]` representation at position 0.
    pub global_repr: TensorId,
    /// `[1 × d]` representation at each relation `[CLS]` position.
    pub relation_reprs: Vec<TensorId>,
}

/// Batch of per-sequence encodings.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub sequences: Vec<SeqEncoding>,
}

/// Initialize all encoder parameters into `params`.
/// Weights are N(0, 0.02), biases zero, layer-norm gains one.
pub fn init_params(cfg: &EncoderConfig, params: &mut ParamSet, rng: &mut SeededRng) {
    let d = cfg.hidden;
    let std = 0.02;
    let w = |params: &mut ParamSet, name: String, shape: Vec<usize>, rng: &mut SeededRng| {
        params.insert(name, Tensor::randn(shape, std, rng).with_grad());
    };
    let zeros = |params: &mut ParamSet, name: String, len: usize| {
        params.insert(name, Tensor::zeros(vec![len]).with_grad());
    };
    let ones = |params: &mut ParamSet, name: String, len: usize| {
        params.insert(
            name,
            Tensor::new(vec![len], vec![1.0; len]).unwrap().with_grad(),
        );
    };

    w(params, "enc/tok_emb".into(), vec![cfg.vocab_size, d], rng);
    w(params, "enc/pos_emb".into(), vec![cfg.max_seq_len, d], rng);
    w(params, "enc/seg_emb".into(), vec![2, d], rng);
    ones(params, "enc/emb_ln_g".into(), d);
    zeros(params, "enc/emb_ln_b".into(), d);

    for layer in 0..cfg.layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            w(params, format!("enc/l{layer}/attn_{proj}"), vec![d, d], rng);
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            zeros(params, format!("enc/l{layer}/attn_{bias}"), d);
        }
        ones(params, format!("enc/l{layer}/attn_ln_g"), d);
        zeros(params, format!("enc/l{layer}/attn_ln_b"), d);
        w(
            params,
            format!("enc/l{layer}/ffn_w1"),
            vec![d, cfg.ffn_dim],
            rng,
        );
        zeros(params, format!("enc/l{layer}/ffn_b1"), cfg.ffn_dim);
        w(
            params,
            format!("enc/l{layer}/ffn_w2"),
            vec![cfg.ffn_dim, d],
            rng,
        );
        zeros(params, format!("enc/l{layer}/ffn_b2"), d);
        ones(params, format!("enc/l{layer}/ffn_ln_g"), d);
        zeros(params, format!("enc/l{layer}/ffn_ln_b"), d);
    }
}

fn affine(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

/// Token + position + segment embeddings, layer norm, dropout.
pub fn embed(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &EncoderConfig,
    token_ids: &[u32],
    segment_ids: &[u8],
    mode: &mut Mode,
) -> Result<TensorId> {
    if token_ids.len() != segment_ids.len() {
        return Err(Error::ShapeMismatch {
            op: "embed",
            lhs: vec![token_ids.len()],
            rhs: vec![segment_ids.len()],
        });
    }
    if token_ids.len() > cfg.max_seq_len {
        return Err(Error::IndexOutOfRange {
            what: "sequence position",
            index: token_ids.len() - 1,
            bound: cfg.max_seq_len,
        });
    }
    let tok_rows: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let pos_rows: Vec<usize> = (0..token_ids.len()).collect();
    let seg_rows: Vec<usize> = segment_ids.iter().map(|&s| s as usize).collect();

    let tok = tape.embedding(binding_id(binding, "enc/tok_emb")?, &tok_rows)?;
    let pos = tape.embedding(binding_id(binding, "enc/pos_emb")?, &pos_rows)?;
    let seg = tape.embedding(binding_id(binding, "enc/seg_emb")?, &seg_rows)?;
    let sum = tape.add(tok, pos)?;
    let sum = tape.add(sum, seg)?;
    let normed = tape.layer_norm(
        sum,
        binding_id(binding, "enc/emb_ln_g")?,
        binding_id(binding, "enc/emb_ln_b")?,
        LAYER_NORM_EPS,
    )?;
    mode.apply_dropout(tape, normed, cfg.dropout)
}

/// Additive attention bias from a padding mask: 0 on real keys, a large
/// negative constant on padded keys, replicated for every query row.
fn attention_bias(tape: &mut Tape, mask: &[u8]) -> Result<TensorId> {
    let seq = mask.len();
    let mut data = vec![0.0; seq * seq];
    for q in 0..seq {
        for (k, &keep) in mask.iter().enumerate() {
            if keep == 0 {
                data[q * seq + k] = MASK_BIAS;
            }
        }
    }
    tape.constant(vec![seq, seq], data)
}

/// One multi-head self-attention sublayer with residual + layer norm.
pub fn self_attention(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &EncoderConfig,
    layer: usize,
    x: TensorId,
    mask: &[u8],
    mode: &mut Mode,
) -> Result<TensorId> {
    let seq = tape.shape(x)[0];
    if mask.len() != seq {
        return Err(Error::ShapeMismatch {
            op: "self_attention",
            lhs: tape.shape(x).to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let dh = cfg.head_dim();
    let name = |suffix: &str| format!("enc/l{layer}/attn_{suffix}");

    let q = affine(
        tape,
        x,
        binding_id(binding, &name("wq"))?,
        binding_id(binding, &name("bq"))?,
    )?;
    let k = affine(
        tape,
        x,
        binding_id(binding, &name("wk"))?,
        binding_id(binding, &name("bk"))?,
    )?;
    let v = affine(
        tape,
        x,
        binding_id(binding, &name("wv"))?,
        binding_id(binding, &name("bv"))?,
    )?;

    let bias = attention_bias(tape, mask)?;
    let scale = 1.0 / libm::sqrt(dh as f64);

    let mut merged: Option<TensorId> = None;
    for head in 0..cfg.heads {
        let qh = tape.slice(q, 1, head * dh, dh)?;
        let kh = tape.slice(k, 1, head * dh, dh)?;
        let vh = tape.slice(v, 1, head * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, bias)?;
        let probs = tape.softmax(scores, 1)?;
        let head_out = tape.matmul(probs, vh)?;
        merged = Some(match merged {
            None => head_out,
            Some(acc) => tape.concat(acc, head_out, 1)?,
        });
    }
    let merged = merged.expect("at least one head");
    let projected = affine(
        tape,
        merged,
        binding_id(binding, &name("wo"))?,
        binding_id(binding, &name("bo"))?,
    )?;
    let dropped = mode.apply_dropout(tape, projected, cfg.dropout)?;
    let residual = tape.add(dropped, x)?;
    tape.layer_norm(
        residual,
        binding_id(binding, &name("ln_g"))?,
        binding_id(binding, &name("ln_b"))?,
        LAYER_NORM_EPS,
    )
}

fn ffn_block(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &EncoderConfig,
    layer: usize,
    x: TensorId,
    mode: &mut Mode,
) -> Result<TensorId> {
    let name = |suffix: &str| format!("enc/l{layer}/ffn_{suffix}");
    let h = affine(
        tape,
        x,
        binding_id(binding, &name("w1"))?,
        binding_id(binding, &name("b1"))?,
    )?;
    let h = tape.gelu(h);
    let out = affine(
        tape,
        h,
        binding_id(binding, &name("w2"))?,
        binding_id(binding, &name("b2"))?,
    )?;
    let dropped = mode.apply_dropout(tape, out, cfg.dropout)?;
    let residual = tape.add(dropped, x)?;
    tape.layer_norm(
        residual,
        binding_id(binding, &name("ln_g"))?,
        binding_id(binding, &name("ln_b"))?,
        LAYER_NORM_EPS,
    )
}

/// Encode one (possibly padded) sequence and gather the global and
/// per-relation representations.
#[allow(clippy::too_many_arguments)]
pub fn encode_sequence(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &EncoderConfig,
    token_ids: &[u32],
    segment_ids: &[u8],
    mask: &[u8],
    relation_positions: &[usize],
    mode: &mut Mode,
) -> Result<SeqEncoding> {
    let real_len = mask.iter().filter(|&&m| m == 1).count();
    for &pos in relation_positions {
        if pos >= real_len {
            return Err(Error::IndexOutOfRange {
                what: "relation [CLS] position",
                index: pos,
                bound: real_len,
            });
        }
    }
    let mut x = embed(tape, binding, cfg, token_ids, segment_ids, mode)?;
    for layer in 0..cfg.layers {
        x = self_attention(tape, binding, cfg, layer, x, mask, mode)?;
        x = ffn_block(tape, binding, cfg, layer, x, mode)?;
    }
    let global_repr = tape.slice(x, 0, 0, 1)?;
    let relation_reprs = relation_positions
        .iter()
        .map(|&pos| tape.slice(x, 0, pos, 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeqEncoding {
        hidden: x,
        global_repr,
        relation_reprs,
    })
}

/// Encode a padded batch row by row on a shared tape.
pub fn encode_batch(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &EncoderConfig,
    batch: &PaddedBatch,
    mode: &mut Mode,
) -> Result<EncoderOutput> {
    let mut sequences = Vec::with_capacity(batch.ids.len());
    for row in 0..batch.ids.len() {
        sequences.push(encode_sequence(
            tape,
            binding,
            cfg,
            &batch.ids[row],
            &batch.segments[row],
            &batch.mask[row],
            &batch.relation_positions[row],
            mode,
        )?);
    }
    Ok(EncoderOutput { sequences })
}
