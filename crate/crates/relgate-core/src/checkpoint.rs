//! Named-tensor checkpoint container.
//!
//! Byte layout: magic `RGT1`, version `u32` LE, then one record per tensor
//! in name order: name length `u32` LE, UTF-8 name, rank `u64` LE, each dim
//! `u64` LE, then the raw `f64` LE data. Round-trips bit-exactly.
//!
//! A model snapshot stores parameters under `param/`, hyperparameters as
//! scalar tensors under `hparam/`, vocabulary entries under `vocab/`, and
//! relation labels under `label/`, so a checkpoint is self-contained.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::brs::BrsVariant;
use crate::data::LabelMap;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::gate::{GateConfig, TaskKind};
use crate::model::{Model, ParamSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

const MAGIC: &[u8; 4] = b"RGT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn set_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.tensors.insert(name.into(), Tensor::scalar(value));
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let tensor = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing scalar {name:?}")))?;
        if !tensor.is_scalar() {
            return Err(Error::Checkpoint(format!(
                "{name:?} is not scalar (shape {:?})",
                tensor.shape()
            )));
        }
        Ok(tensor.data()[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
            for &dim in tensor.shape() {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &value in tensor.data() {
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        let magic = reader.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let mut tensors = BTreeMap::new();
        while !reader.done() {
            let name_len = reader.u32()? as usize;
            let name_bytes = reader.take(name_len)?;
            let name = core::str::from_utf8(name_bytes)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = reader.u64()? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!(
                    "implausible rank {rank} for {name:?}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(reader.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(reader.f64()?);
            }
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name:?}")));
            }
        }
        Ok(Checkpoint { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn task_code(task: TaskKind) -> f64 {
    match task {
        TaskKind::DialogueMultiLabel => 0.0,
        TaskKind::SentenceSingleLabel => 1.0,
    }
}

fn variant_code(variant: BrsVariant) -> f64 {
    match variant {
        BrsVariant::Standard => 0.0,
        BrsVariant::V2 => 1.0,
        BrsVariant::V3 => 2.0,
        BrsVariant::SingleRelation => 3.0,
    }
}

fn decode_usize(cp: &Checkpoint, name: &str) -> Result<usize> {
    let v = cp.scalar(name)?;
    if v < 0.0 || libm::floor(v) != v {
        return Err(Error::Checkpoint(format!("{name:?} is not a valid count: {v}")));
    }
    Ok(v as usize)
}

fn decode_bool(cp: &Checkpoint, name: &str) -> Result<bool> {
    let v = cp.scalar(name)?;
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::Checkpoint(format!("{name:?} is not a flag: {v}")))
    }
}

fn decode_code<T: Copy>(cp: &Checkpoint, name: &str, table: &[(f64, T)]) -> Result<T> {
    let v = cp.scalar(name)?;
    table
        .iter()
        .find(|(code, _)| *code == v)
        .map(|(_, value)| *value)
        .ok_or_else(|| Error::Checkpoint(format!("unknown {name:?} code {v}")))
}

/// Everything a run needs to resume or evaluate: model, vocabulary, label
/// map, and the sequence variant it was trained with.
pub struct Snapshot {
    pub model: Model,
    pub vocab: Vocab,
    pub labels: LabelMap,
    pub variant: BrsVariant,
}

/// Pack a model with its vocabulary and label map into a checkpoint.
pub fn snapshot(model: &Model, vocab: &Vocab, labels: &LabelMap, variant: BrsVariant) -> Checkpoint {
    let mut cp = Checkpoint::new();
    for (name, tensor) in &model.params {
        let mut plain = tensor.clone();
        plain.requires_grad = false;
        plain.grad = None;
        cp.insert(format!("param/{name}"), plain);
    }
    let enc = &model.encoder;
    cp.set_scalar("hparam/vocab_size", enc.vocab_size as f64);
    cp.set_scalar("hparam/hidden", enc.hidden as f64);
    cp.set_scalar("hparam/layers", enc.layers as f64);
    cp.set_scalar("hparam/heads", enc.heads as f64);
    cp.set_scalar("hparam/ffn_dim", enc.ffn_dim as f64);
    cp.set_scalar("hparam/max_seq_len", enc.max_seq_len as f64);
    cp.set_scalar("hparam/dropout", enc.dropout);
    let gate = &model.gate;
    cp.set_scalar("hparam/tau", gate.tau);
    cp.set_scalar("hparam/max_refine", gate.max_refine as f64);
    cp.set_scalar("hparam/num_relations", gate.num_relations as f64);
    cp.set_scalar("hparam/task", task_code(gate.task));
    cp.set_scalar("hparam/decision_threshold", gate.decision_threshold);
    cp.set_scalar("hparam/rrg_enabled", if gate.rrg_enabled { 1.0 } else { 0.0 });
    cp.set_scalar(
        "hparam/share_confidence_head",
        if gate.share_confidence_head { 1.0 } else { 0.0 },
    );
    cp.set_scalar("hparam/variant", variant_code(variant));
    for (token, id) in vocab.entries() {
        cp.set_scalar(format!("vocab/{token}"), id as f64);
    }
    for (id, name) in labels.names().iter().enumerate() {
        cp.set_scalar(format!("label/{name}"), id as f64);
    }
    cp.set_scalar(
        "hparam/no_relation_id",
        labels.no_relation_id().map(|id| id as f64).unwrap_or(-1.0),
    );
    cp
}

/// Rebuild a full snapshot from a checkpoint, validating parameter names
/// and shapes against the recorded hyperparameters.
pub fn restore(cp: &Checkpoint) -> Result<Snapshot> {
    let encoder = EncoderConfig {
        vocab_size: decode_usize(cp, "hparam/vocab_size")?,
        hidden: decode_usize(cp, "hparam/hidden")?,
        layers: decode_usize(cp, "hparam/layers")?,
        heads: decode_usize(cp, "hparam/heads")?,
        ffn_dim: decode_usize(cp, "hparam/ffn_dim")?,
        max_seq_len: decode_usize(cp, "hparam/max_seq_len")?,
        dropout: cp.scalar("hparam/dropout")?,
    };
    let task = decode_code(
        cp,
        "hparam/task",
        &[
            (0.0, TaskKind::DialogueMultiLabel),
            (1.0, TaskKind::SentenceSingleLabel),
        ],
    )?;
    let gate = GateConfig {
        tau: cp.scalar("hparam/tau")?,
        max_refine: decode_usize(cp, "hparam/max_refine")? as u32,
        num_relations: decode_usize(cp, "hparam/num_relations")?,
        task,
        decision_threshold: cp.scalar("hparam/decision_threshold")?,
        rrg_enabled: decode_bool(cp, "hparam/rrg_enabled")?,
        share_confidence_head: decode_bool(cp, "hparam/share_confidence_head")?,
    };
    let variant = decode_code(
        cp,
        "hparam/variant",
        &[
            (0.0, BrsVariant::Standard),
            (1.0, BrsVariant::V2),
            (2.0, BrsVariant::V3),
            (3.0, BrsVariant::SingleRelation),
        ],
    )?;

    // reference init gives the expected parameter names and shapes
    let reference = Model::init(encoder.clone(), gate.clone(), &mut SeededRng::new(0))?;
    let mut params = ParamSet::new();
    for (name, expected) in &reference.params {
        let stored = cp
            .tensors
            .get(&format!("param/{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
        if stored.shape() != expected.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                stored.shape(),
                expected.shape()
            )));
        }
        params.insert(name.clone(), stored.clone().with_grad());
    }
    for key in cp.tensors.keys() {
        if let Some(name) = key.strip_prefix("param/") {
            if !reference.params.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected parameter {name:?}")));
            }
        }
    }

    let mut vocab_entries = Vec::new();
    let mut label_entries = Vec::new();
    for (key, tensor) in &cp.tensors {
        if let Some(token) = key.strip_prefix("vocab/") {
            vocab_entries.push((token.to_string(), tensor.data()[0] as u32));
        } else if let Some(name) = key.strip_prefix("label/") {
            label_entries.push((name.to_string(), tensor.data()[0] as u32));
        }
    }
    let vocab = Vocab::from_entries(&vocab_entries)?;
    if vocab.len() != encoder.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the encoder expects {}",
            vocab.len(),
            encoder.vocab_size
        )));
    }
    label_entries.sort_by_key(|(_, id)| *id);
    let names: Vec<String> = label_entries.iter().map(|(n, _)| n.clone()).collect();
    for (expected, (_, id)) in label_entries.iter().enumerate() {
        if *id as usize != expected {
            return Err(Error::Checkpoint("label ids are not contiguous".into()));
        }
    }
    let no_relation_code = cp.scalar("hparam/no_relation_id")?;
    let no_relation = if no_relation_code == -1.0 {
        None
    } else if no_relation_code >= 0.0 && (no_relation_code as usize) < names.len() {
        Some(names[no_relation_code as usize].clone())
    } else {
        return Err(Error::Checkpoint(format!(
            "bad no_relation_id {no_relation_code}"
        )));
    };
    let labels = LabelMap::new(names, no_relation.as_deref())?;
    if labels.len() != gate.num_relations {
        return Err(Error::Checkpoint(format!(
            "label map has {} relations but the gate expects {}",
            labels.len(),
            gate.num_relations
        )));
    }

    Ok(Snapshot {
        model: Model {
            encoder,
            gate,
            params,
        },
        vocab,
        labels,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_labels;

    #[test]
    fn bytes_roundtrip_bit_exact() {
        let mut cp = Checkpoint::new();
        cp.insert(
            "w",
            Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 3.125, -0.875])
                .unwrap(),
        );
        cp.set_scalar("meta", 42.0);
        let bytes = cp.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(cp, back);
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn header_is_validated() {
        let mut cp = Checkpoint::new();
        cp.set_scalar("x", 1.0);
        let mut bytes = cp.to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let good = cp.to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 1]).is_err());
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut rng = SeededRng::new(3);
        let vocab = Vocab::build(["alpha", "beta", "beta"].iter().copied(), 16).unwrap();
        let labels = synthetic_labels(4);
        let mut enc = EncoderConfig::new(vocab.len());
        enc.hidden = 8;
        enc.layers = 1;
        enc.heads = 2;
        enc.ffn_dim = 16;
        enc.max_seq_len = 32;
        let gate = GateConfig::new(4, TaskKind::DialogueMultiLabel);
        let model = Model::init(enc, gate, &mut rng).unwrap();

        let cp = snapshot(&model, &vocab, &labels, BrsVariant::V2);
        let bytes = cp.to_bytes();
        let restored = restore(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();

        assert_eq!(restored.model.encoder, model.encoder);
        assert_eq!(restored.model.gate, model.gate);
        assert_eq!(restored.variant, BrsVariant::V2);
        assert_eq!(restored.vocab, vocab);
        assert_eq!(restored.labels, labels);
        for (name, tensor) in &model.params {
            assert_eq!(restored.model.params[name].data(), tensor.data());
        }
        // and the re-snapshot is bit-identical
        let again = snapshot(
            &restored.model,
            &restored.vocab,
            &restored.labels,
            restored.variant,
        );
        assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn restore_rejects_missing_param() {
        let mut rng = SeededRng::new(4);
        let vocab = Vocab::build(["tok"].iter().copied(), 8).unwrap();
        let labels = synthetic_labels(2);
        let mut enc = EncoderConfig::new(vocab.len());
        enc.hidden = 8;
        enc.layers = 1;
        enc.heads = 2;
        enc.ffn_dim = 16;
        let gate = GateConfig::new(2, TaskKind::DialogueMultiLabel);
        let model = Model::init(enc, gate, &mut rng).unwrap();
        let mut cp = snapshot(&model, &vocab, &labels, BrsVariant::Standard);
        cp.tensors.remove("param/gate/conf_w");
        assert!(restore(&cp).is_err());
    }
}
