//! Training loop: seeded init, shuffled mini-batches, one forward pass per
//! sequence (all of its relations scored in that pass), Adam updates, and
//! per-epoch checkpoints with best-dev tracking.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use relgate_core::adam::{AdamConfig, AdamState};
use relgate_core::brs::pad_batch;
use relgate_core::checkpoint::{self, Checkpoint};
use relgate_core::encoder::Mode;
use relgate_core::gate;
use relgate_core::model::{collect_grads, Model};
use relgate_core::rng::SeededRng;
use relgate_core::tape::Tape;
use serde_json::json;

use crate::config::RunConfig;
use crate::dataio::{self, Corpus};
use crate::evalrun;
use crate::sequences::{self, SequenceItem};

/// Per-epoch training record. Wall-clock is kept out of the deterministic
/// metrics and reported separately.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub best: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub epoch_seconds: Vec<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub best_path: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            0.0
        } else {
            self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
        }
    }
}

/// Train from configuration; loads (or generates) the corpus itself.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let corpus = dataio::load(config, config.train_path.as_deref())?;
    let dev = match &config.dev_path {
        Some(path) => Some(dataio::load(config, Some(path))?),
        None => None,
    };
    train_on(config, &corpus, dev.as_ref())
}

/// Train on an already-loaded corpus.
pub fn train_on(
    config: &RunConfig,
    corpus: &Corpus,
    dev: Option<&Corpus>,
) -> Result<TrainOutcome> {
    if corpus.examples.is_empty() {
        bail!("training corpus is empty");
    }
    let num_relations = corpus.labels.len();
    if let Some(expected) = config.num_relations {
        if expected != num_relations {
            bail!(
                "config says num_relations = {expected} but the corpus label map has {num_relations}"
            );
        }
    }
    if let Some(dev) = dev {
        if dev.labels != corpus.labels {
            bail!("dev label map differs from the training label map");
        }
    }

    let vocab = sequences::build_vocab(corpus, config.vocab_max_size)?;
    let encoder_cfg = config.encoder_config(vocab.len());
    let gate_cfg = config.gate_config(num_relations);
    encoder_cfg.validate()?;
    gate_cfg.validate()?;

    let items = sequences::build_items(corpus, &vocab, config.variant, config.max_seq_len)?;
    let mut rng = SeededRng::new(config.seed);
    let mut model = Model::init(encoder_cfg, gate_cfg, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });

    let out_dir = config.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
    }

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best = checkpoint::snapshot(&model, &vocab, &corpus.labels, config.variant);

    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut instance_count = 0usize;
        for batch_indices in order.chunks(config.batch_size) {
            let batch_items: Vec<&SequenceItem> =
                batch_indices.iter().map(|&i| &items[i]).collect();
            let (loss, n) = train_step(&mut model, &batch_items, &mut rng, &mut adam)?;
            loss_sum += loss * n as f64;
            instance_count += n;
        }

        let mean_loss = loss_sum / instance_count.max(1) as f64;
        let dev_f1 = match dev {
            None => None,
            Some(dev_corpus) => {
                let snap = checkpoint::Snapshot {
                    model: model.clone(),
                    vocab: vocab.clone(),
                    labels: corpus.labels.clone(),
                    variant: config.variant,
                };
                let report = evalrun::evaluate(&snap, dev_corpus, config.batch_size, None)?;
                Some(report.micro_f1)
            }
        };

        let cp = checkpoint::snapshot(&model, &vocab, &corpus.labels, config.variant);
        if let Some(dir) = out_dir {
            fs::write(dir.join("last.rgt"), cp.to_bytes())
                .context("writing epoch checkpoint")?;
        }
        let score = dev_f1.unwrap_or(-1.0);
        if dev.is_none() || score > best_f1 {
            best_f1 = score;
            best = cp.clone();
            if let Some(dir) = out_dir {
                fs::write(dir.join("best.rgt"), best.to_bytes())
                    .context("writing best checkpoint")?;
            }
        }

        let elapsed = started.elapsed().as_secs_f64();
        epoch_seconds.push(elapsed);
        eprintln!(
            "epoch {epoch}: mean loss {mean_loss:.6}{} ({elapsed:.2}s)",
            dev_f1
                .map(|f| format!(", dev micro-F1 {f:.4}"))
                .unwrap_or_default()
        );
        metrics.push(EpochMetrics {
            epoch,
            mean_loss,
            dev_f1,
        });
    }

    let final_cp = checkpoint::snapshot(&model, &vocab, &corpus.labels, config.variant);
    let (checkpoint_path, best_path) = match out_dir {
        Some(dir) => {
            write_train_log(&metrics, &dir.join("train_log.jsonl"))?;
            write_timings(&epoch_seconds, &dir.join("timing.jsonl"))?;
            (Some(dir.join("last.rgt")), Some(dir.join("best.rgt")))
        }
        None => (None, None),
    };

    Ok(TrainOutcome {
        checkpoint: final_cp,
        best,
        metrics,
        epoch_seconds,
        checkpoint_path,
        best_path,
    })
}

/// One optimizer step over a mini-batch; returns (mean loss, instances).
fn train_step(
    model: &mut Model,
    batch: &[&SequenceItem],
    rng: &mut SeededRng,
    adam: &mut AdamState,
) -> Result<(f64, usize)> {
    let width = batch.iter().map(|item| item.seq.len()).max().unwrap_or(0);
    let seqs: Vec<_> = batch.iter().map(|item| item.seq.clone()).collect();
    let padded = pad_batch(&seqs, width)?;

    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let mut mode = Mode::Train(rng);
    let mut scored = Vec::new();
    for (row, item) in batch.iter().enumerate() {
        let fwd = model.forward_sequence(
            &mut tape,
            &binding,
            &padded.ids[row],
            &padded.segments[row],
            &padded.mask[row],
            &padded.relation_positions[row],
            &mut mode,
        )?;
        for (slot, &logits) in fwd.logits.iter().enumerate() {
            scored.push((logits, &item.golds[slot]));
        }
    }
    let items: Vec<_> = scored.iter().map(|(l, g)| (*l, *g)).collect();
    let loss = gate::batch_loss(&mut tape, &items, &model.gate)?;
    let loss_value = tape.value(loss)[0];
    tape.backward(loss)?;
    let grads = collect_grads(&tape, &binding);
    adam.step(&mut model.params, &grads)?;
    Ok((loss_value, items.len()))
}

fn write_train_log(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for m in metrics {
        let line = json!({
            "epoch": m.epoch,
            "mean_loss": m.mean_loss,
            "dev_micro_f1": m.dev_f1,
        });
        writeln!(out, "{line}")?;
    }
    fs::write(path, out).context("writing train log")?;
    Ok(())
}

fn write_timings(epoch_seconds: &[f64], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (epoch, secs) in epoch_seconds.iter().enumerate() {
        let line = json!({"epoch": epoch + 1, "seconds": secs});
        writeln!(out, "{line}")?;
    }
    let mean = if epoch_seconds.is_empty() {
        0.0
    } else {
        epoch_seconds.iter().sum::<f64>() / epoch_seconds.len() as f64
    };
    writeln!(out, "{}", json!({"mean_epoch_seconds": mean}))?;
    fs::write(path, out).context("writing timing log")?;
    Ok(())
}
