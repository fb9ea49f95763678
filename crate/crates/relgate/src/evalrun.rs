//! Evaluation: micro-F1 over (dialogue, pair, relation) decision tuples
//! with the no-relation class excluded, per-relation counts, and the
//! refinement exit histogram.
//!
//! The report file is deterministic for a given (checkpoint, corpus,
//! config); wall-clock goes to stderr and a sidecar file so reruns produce
//! byte-identical reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use relgate_core::brs::pad_batch;
use relgate_core::checkpoint::Snapshot;
use relgate_core::encoder::Mode;
use relgate_core::gate::{self, GateConfig};
use relgate_core::metrics::{self, DecisionTuple, F1Counts};
use serde_json::json;

use crate::dataio::Corpus;
use crate::sequences;

/// Scoring convention, stated up front in every report.
pub const CONVENTION: &str = "micro-F1 over (dialogue, pair, relation) tuples; \
no-relation id excluded from both sides; multi-label decisions at the sigmoid \
threshold, single-label by argmax";

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub per_relation: Vec<(String, F1Counts)>,
    /// iterations_used -> relation count.
    pub exit_histogram: BTreeMap<u32, usize>,
    pub mean_iterations: f64,
    pub instances: usize,
    pub tau: f64,
    /// Informational only; excluded from the deterministic report body.
    pub elapsed_seconds: f64,
}

/// Evaluate a snapshot on a corpus. `tau_override` rescores with a
/// different exit threshold (refinement depth is inference-time behavior).
pub fn evaluate(
    snapshot: &Snapshot,
    corpus: &Corpus,
    batch_size: usize,
    tau_override: Option<f64>,
) -> Result<EvalReport> {
    if corpus.labels != snapshot.labels {
        bail!(
            "label-map mismatch between checkpoint ({} labels) and corpus ({} labels)",
            snapshot.labels.len(),
            corpus.labels.len()
        );
    }
    let started = Instant::now();
    let gate_cfg = GateConfig {
        tau: tau_override.unwrap_or(snapshot.model.gate.tau),
        ..snapshot.model.gate.clone()
    };
    let model = relgate_core::model::Model {
        encoder: snapshot.model.encoder.clone(),
        gate: gate_cfg.clone(),
        params: snapshot.model.params.clone(),
    };

    let items = sequences::build_items(
        corpus,
        &snapshot.vocab,
        snapshot.variant,
        model.encoder.max_seq_len,
    )?;

    let mut predicted: BTreeSet<DecisionTuple> = BTreeSet::new();
    let mut gold: BTreeSet<DecisionTuple> = BTreeSet::new();
    let mut exit_histogram: BTreeMap<u32, usize> = BTreeMap::new();
    let mut iterations_total = 0u64;
    let mut instances = 0usize;

    for chunk in items.chunks(batch_size.max(1)) {
        let width = chunk.iter().map(|item| item.seq.len()).max().unwrap_or(0);
        let seqs: Vec<_> = chunk.iter().map(|item| item.seq.clone()).collect();
        let padded = pad_batch(&seqs, width)?;
        let mut tape = relgate_core::tape::Tape::new();
        let binding = model.bind(&mut tape);
        for (row, item) in chunk.iter().enumerate() {
            let fwd = model.forward_sequence(
                &mut tape,
                &binding,
                &padded.ids[row],
                &padded.segments[row],
                &padded.mask[row],
                &padded.relation_positions[row],
                &mut Mode::Eval,
            )?;
            for (slot, &logits) in fwd.logits.iter().enumerate() {
                let pair_idx = item.pair_indices[slot];
                let decision = gate::predict(tape.value(logits), &gate_cfg);
                for rel_id in decision.relation_ids() {
                    predicted.insert((item.dialogue_idx, pair_idx, rel_id));
                }
                for &rel_id in &item.golds[slot] {
                    gold.insert((item.dialogue_idx, pair_idx, rel_id));
                }
                let trace = &fwd.trace.relations[slot];
                *exit_histogram.entry(trace.iterations_used).or_insert(0) += 1;
                iterations_total += trace.iterations_used as u64;
                instances += 1;
            }
        }
    }

    let exclude = snapshot.labels.no_relation_id();
    let counts = metrics::micro_f1(&predicted, &gold, exclude);
    let per_rel_raw = metrics::per_relation_counts(&predicted, &gold);
    let per_relation = per_rel_raw
        .into_iter()
        .map(|(id, c)| {
            let name = snapshot
                .labels
                .name(id)
                .map(String::from)
                .unwrap_or_else(|_| format!("relation-{id}"));
            (name, c)
        })
        .collect();

    Ok(EvalReport {
        precision: counts.precision(),
        recall: counts.recall(),
        micro_f1: counts.f1(),
        per_relation,
        exit_histogram,
        mean_iterations: if instances == 0 {
            0.0
        } else {
            iterations_total as f64 / instances as f64
        },
        instances,
        tau: gate_cfg.tau,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::{dataio, train};
    use relgate_core::checkpoint;

    #[test]
    fn label_map_mismatch_is_rejected() {
        let config = RunConfig {
            epochs: 1,
            num_dialogues: 4,
            ..RunConfig::default()
        };
        let corpus = dataio::load(&config, None).unwrap();
        let outcome = train::train_on(&config, &corpus, None).unwrap();
        let snapshot = checkpoint::restore(&outcome.checkpoint).unwrap();

        let other = RunConfig {
            num_relation_types: 4, // trained with 6
            ..config
        };
        let other_corpus = dataio::load(&other, None).unwrap();
        let err = evaluate(&snapshot, &other_corpus, 6, None).unwrap_err();
        assert!(format!("{err}").contains("label-map mismatch"), "{err}");
    }

    #[test]
    fn tau_override_changes_only_the_gate() {
        let config = RunConfig {
            epochs: 1,
            num_dialogues: 6,
            ..RunConfig::default()
        };
        let corpus = dataio::load(&config, None).unwrap();
        let outcome = train::train_on(&config, &corpus, None).unwrap();
        let snapshot = checkpoint::restore(&outcome.checkpoint).unwrap();
        let low = evaluate(&snapshot, &corpus, 6, Some(0.0)).unwrap();
        let high = evaluate(&snapshot, &corpus, 6, Some(1.0)).unwrap();
        assert_eq!(low.mean_iterations, 0.0);
        assert_eq!(high.mean_iterations, snapshot.model.gate.max_refine as f64);
        assert_eq!(low.tau, 0.0);
        assert_eq!(high.tau, 1.0);
    }
}

impl EvalReport {
    /// Deterministic JSON-lines body (no timing).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = json!({
            "type": "header",
            "convention": CONVENTION,
            "tau": self.tau,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for (name, counts) in &self.per_relation {
            let line = json!({
                "type": "relation",
                "name": name,
                "true_positive": counts.true_positive,
                "predicted": counts.predicted,
                "gold": counts.gold,
                "precision": counts.precision(),
                "recall": counts.recall(),
                "f1": counts.f1(),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let exits: BTreeMap<String, usize> = self
            .exit_histogram
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let exits_line = json!({
            "type": "exits",
            "histogram": exits,
            "mean_iterations": self.mean_iterations,
        });
        out.push_str(&exits_line.to_string());
        out.push('\n');
        let summary = json!({
            "type": "summary",
            "precision": self.precision,
            "recall": self.recall,
            "micro_f1": self.micro_f1,
            "instances": self.instances,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    /// Write the report body plus a `.timing` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())
            .with_context(|| format!("writing report {}", path.display()))?;
        let timing_path = path.with_extension("timing.jsonl");
        let mut timing = Vec::new();
        writeln!(timing, "{}", json!({"eval_seconds": self.elapsed_seconds}))?;
        fs::write(&timing_path, timing)
            .with_context(|| format!("writing {}", timing_path.display()))?;
        Ok(())
    }
}
