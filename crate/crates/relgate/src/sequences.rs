//! Corpus → sequence items. One sequence per dialogue under the
//! multi-relation variants; one sequence per pair under the
//! single-relation variant (and a dialogue with n pairs always contributes
//! exactly n scored decisions either way).

use std::collections::BTreeSet;

use anyhow::{Context, Result};
use relgate_core::brs::{build_brs, BrsSequence, BrsVariant};
use relgate_core::vocab::Vocab;

use crate::dataio::Corpus;

/// One forward-pass unit: a built sequence plus the identity and gold set
/// of every relation slot in it.
#[derive(Debug, Clone)]
pub struct SequenceItem {
    pub seq: BrsSequence,
    pub dialogue_idx: usize,
    /// Pair index within the dialogue for each relation slot.
    pub pair_indices: Vec<usize>,
    pub golds: Vec<BTreeSet<u32>>,
}

/// Build every sequence item for a corpus.
pub fn build_items(
    corpus: &Corpus,
    vocab: &Vocab,
    variant: BrsVariant,
    max_seq_len: usize,
) -> Result<Vec<SequenceItem>> {
    let mut items = Vec::new();
    for (dialogue_idx, example) in corpus.examples.iter().enumerate() {
        let dialogue_tokens = example.dialogue_tokens();
        let pairs = example.entity_pairs();
        let golds: Vec<BTreeSet<u32>> =
            example.relations.iter().map(|r| r.gold.clone()).collect();
        if variant == BrsVariant::SingleRelation {
            for (pair_idx, pair) in pairs.iter().enumerate() {
                let seq = build_brs(
                    vocab,
                    &dialogue_tokens,
                    std::slice::from_ref(pair),
                    variant,
                    max_seq_len,
                )
                .with_context(|| format!("dialogue {dialogue_idx}, pair {pair_idx}"))?;
                items.push(SequenceItem {
                    seq,
                    dialogue_idx,
                    pair_indices: vec![pair_idx],
                    golds: vec![golds[pair_idx].clone()],
                });
            }
        } else {
            let seq = build_brs(vocab, &dialogue_tokens, &pairs, variant, max_seq_len)
                .with_context(|| format!("dialogue {dialogue_idx}"))?;
            items.push(SequenceItem {
                seq,
                dialogue_idx,
                pair_indices: (0..pairs.len()).collect(),
                golds,
            });
        }
    }
    Ok(items)
}

/// Vocabulary over the whole corpus token stream.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab> {
    let tokens = corpus.token_stream();
    Vocab::build(tokens.iter().map(String::as_str), max_size).map_err(Into::into)
}
