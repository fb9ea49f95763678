//! Relation token sequences: the multi-`[CLS]` input layout.
//!
//! A sequence packs one dialogue (or sentence) together with every entity
//! pair whose relation is to be predicted. Position 0 carries the global
//! `[CLS]`; each pair segment carries its own relation `[CLS]`, whose encoder
//! output represents that pair's relation. The exact placement of `[CLS]`
//! and `[SEP]` inside the pair segments is what the layout variants change.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vocab::{Vocab, CLS_ID, PAD_ID, SEP_ID};

/// Sequence layout variant.
///
/// With `E_s`/`E_o` the subject/object tokens of one pair, the pair
/// segments look like:
///
/// * `Standard`:  `[CLS] X [SEP]` then per pair `E_s [CLS] E_o [SEP]`
/// * `V2`:        `[CLS] X` then per pair `[CLS] E_s [SEP] E_o`, closed by
///   one final `[SEP]` (the pair `[CLS]` sits before the subject)
/// * `V3`:        `[CLS] X` then per pair `[SEP] E_s [SEP] E_o [CLS]` (the
///   pair `[CLS]` sits after the object, so the sequence ends on a `[CLS]`)
/// * `SingleRelation`: `Standard` restricted to exactly one pair; used to
///   predict one relation per forward pass
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrsVariant {
    Standard,
    V2,
    V3,
    SingleRelation,
}

impl BrsVariant {
    pub fn name(self) -> &'static str {
        match self {
            BrsVariant::Standard => "standard",
            BrsVariant::V2 => "v2",
            BrsVariant::V3 => "v3",
            BrsVariant::SingleRelation => "single",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(BrsVariant::Standard),
            "v2" => Ok(BrsVariant::V2),
            "v3" => Ok(BrsVariant::V3),
            "single" => Ok(BrsVariant::SingleRelation),
            other => Err(Error::Config(alloc::format!(
                "unknown sequence variant {other:?} (expected standard|v2|v3|single)"
            ))),
        }
    }
}

/// One built input sequence with its position map.
#[derive(Debug, Clone, PartialEq)]
pub struct BrsSequence {
    pub token_ids: Vec<u32>,
    /// Always 0: the global `[CLS]` leads the sequence.
    pub global_cls_pos: usize,
    /// Position of the relation `[CLS]` of each pair, strictly increasing.
    pub relation_cls_pos: Vec<usize>,
    /// Real (unpadded) length.
    pub attention_len: usize,
    /// 0 over the leading `[CLS]`+dialogue span, 1 over the entity tail.
    pub segment_ids: Vec<u8>,
    pub truncated: bool,
    pub variant: BrsVariant,
}

impl BrsSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_cls_pos.len()
    }
}

/// Tail length (everything except the kept dialogue tokens) for `n` pairs.
fn fixed_overhead(variant: BrsVariant, pairs: &[(Vec<String>, Vec<String>)]) -> usize {
    let entity_tokens: usize = pairs.iter().map(|(s, o)| s.len() + o.len()).sum();
    match variant {
        // [CLS] .. [SEP] + per pair ([CLS|SEP] markers: 2 each)
        BrsVariant::Standard | BrsVariant::SingleRelation | BrsVariant::V2 => {
            2 + entity_tokens + 2 * pairs.len()
        }
        // [CLS] + per pair ([SEP] es [SEP] eo [CLS]: 3 markers each)
        BrsVariant::V3 => 1 + entity_tokens + 3 * pairs.len(),
    }
}

/// Build one relation token sequence.
///
/// The dialogue span is truncated from the right when the whole sequence
/// would exceed `max_seq_len`; the entity tail is never truncated. A tail
/// that cannot fit on its own is an error.
pub fn build_brs(
    vocab: &Vocab,
    dialogue_tokens: &[String],
    pairs: &[(Vec<String>, Vec<String>)],
    variant: BrsVariant,
    max_seq_len: usize,
) -> Result<BrsSequence> {
    if pairs.is_empty() {
        return Err(Error::Contract("sequence needs at least one entity pair".into()));
    }
    if variant == BrsVariant::SingleRelation && pairs.len() != 1 {
        return Err(Error::Contract(alloc::format!(
            "single-relation variant takes exactly one pair, got {}",
            pairs.len()
        )));
    }
    for (idx, (subject, object)) in pairs.iter().enumerate() {
        if subject.is_empty() || object.is_empty() {
            return Err(Error::Contract(alloc::format!(
                "pair {idx} has an empty entity after tokenization"
            )));
        }
    }

    let overhead = fixed_overhead(variant, pairs);
    if overhead > max_seq_len {
        return Err(Error::Contract(alloc::format!(
            "entity tail needs {overhead} tokens but max_seq_len is {max_seq_len}"
        )));
    }
    let keep = dialogue_tokens.len().min(max_seq_len - overhead);
    let truncated = keep < dialogue_tokens.len();
    let kept_dialogue = &dialogue_tokens[..keep];

    let mut token_ids: Vec<u32> = Vec::with_capacity(overhead + keep);
    let mut relation_cls_pos = Vec::with_capacity(pairs.len());

    token_ids.push(CLS_ID);
    for token in kept_dialogue {
        token_ids.push(vocab.id(token));
    }
    let head_is_closed = matches!(variant, BrsVariant::Standard | BrsVariant::SingleRelation);
    if head_is_closed {
        token_ids.push(SEP_ID);
    }
    let head_len = token_ids.len();

    let push_entity = |ids: &mut Vec<u32>, entity: &[String]| {
        for token in entity {
            ids.push(vocab.id(token));
        }
    };

    for (subject, object) in pairs {
        match variant {
            BrsVariant::Standard | BrsVariant::SingleRelation => {
                push_entity(&mut token_ids, subject);
                relation_cls_pos.push(token_ids.len());
                token_ids.push(CLS_ID);
                push_entity(&mut token_ids, object);
                token_ids.push(SEP_ID);
            }
            BrsVariant::V2 => {
                relation_cls_pos.push(token_ids.len());
                token_ids.push(CLS_ID);
                push_entity(&mut token_ids, subject);
                token_ids.push(SEP_ID);
                push_entity(&mut token_ids, object);
            }
            BrsVariant::V3 => {
                token_ids.push(SEP_ID);
                push_entity(&mut token_ids, subject);
                token_ids.push(SEP_ID);
                push_entity(&mut token_ids, object);
                relation_cls_pos.push(token_ids.len());
                token_ids.push(CLS_ID);
            }
        }
    }
    if variant == BrsVariant::V2 {
        token_ids.push(SEP_ID);
    }

    debug_assert_eq!(token_ids.len(), overhead + keep);

    let mut segment_ids = vec![0u8; token_ids.len()];
    for seg in segment_ids[head_len..].iter_mut() {
        *seg = 1;
    }

    Ok(BrsSequence {
        attention_len: token_ids.len(),
        token_ids,
        global_cls_pos: 0,
        relation_cls_pos,
        segment_ids,
        truncated,
        variant,
    })
}

/// A right-padded batch: id, mask, and segment matrices plus the per-row
/// relation positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<u32>>,
    /// 1 on real tokens, 0 on padding.
    pub mask: Vec<Vec<u8>>,
    pub segments: Vec<Vec<u8>>,
    pub relation_positions: Vec<Vec<usize>>,
    pub lens: Vec<usize>,
    pub width: usize,
}

/// Right-pad sequences with `[PAD]` to a shared width.
pub fn pad_batch(sequences: &[BrsSequence], max_len: usize) -> Result<PaddedBatch> {
    let mut batch = PaddedBatch {
        ids: Vec::with_capacity(sequences.len()),
        mask: Vec::with_capacity(sequences.len()),
        segments: Vec::with_capacity(sequences.len()),
        relation_positions: Vec::with_capacity(sequences.len()),
        lens: Vec::with_capacity(sequences.len()),
        width: max_len,
    };
    for seq in sequences {
        let len = seq.len();
        if len > max_len {
            return Err(Error::Contract(alloc::format!(
                "sequence of length {len} exceeds pad width {max_len}"
            )));
        }
        let mut ids = seq.token_ids.clone();
        ids.resize(max_len, PAD_ID);
        let mut mask = vec![1u8; len];
        mask.resize(max_len, 0);
        let mut segments = seq.segment_ids.clone();
        segments.resize(max_len, 0);
        batch.ids.push(ids);
        batch.mask.push(mask);
        batch.segments.push(segments);
        batch.relation_positions.push(seq.relation_cls_pos.clone());
        batch.lens.push(len);
    }
    Ok(batch)
}
