//! `dump-brs`: one JSON line per built sequence, for golden-file tests and
//! eyeballing layouts.

use anyhow::Result;
use serde_json::json;

use crate::config::RunConfig;
use crate::dataio;
use crate::sequences;

/// Render every sequence of the configured corpus as a JSON line with the
/// decoded tokens, the layout variant, the relation `[CLS]` positions, and
/// the truncation flag.
pub fn dump_brs(config: &RunConfig) -> Result<String> {
    let corpus = dataio::load(config, config.train_path.as_deref())?;
    let vocab = sequences::build_vocab(&corpus, config.vocab_max_size)?;
    let items = sequences::build_items(&corpus, &vocab, config.variant, config.max_seq_len)?;
    let mut out = String::new();
    for item in &items {
        let tokens: Vec<&str> = item
            .seq
            .token_ids
            .iter()
            .map(|&id| vocab.token(id))
            .collect();
        let line = json!({
            "dialogue": item.dialogue_idx,
            "variant": item.seq.variant.name(),
            "tokens": tokens,
            "relation_cls_pos": item.seq.relation_cls_pos,
            "truncated": item.seq.truncated,
            "pairs": item.pair_indices,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    Ok(out)
}
