//! Full-model gradient check: every parameter of the encoder and gate
//! against central finite differences on one synthetic batch, with the
//! exit threshold forced to 1 so the refinement chain is in the
//! differentiation path.

use std::collections::BTreeSet;

use anyhow::Result;
use relgate_core::brs::pad_batch;
use relgate_core::encoder::Mode;
use relgate_core::gate;
use relgate_core::model::{collect_grads, Model, ParamSet};
use relgate_core::rng::SeededRng;
use relgate_core::tape::Tape;

use crate::config::RunConfig;
use crate::dataio::{self};
use crate::sequences::{self, SequenceItem};

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("parameter gradient check (central differences, step 1e-6)\n");
        out.push_str("relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)\n");
        for t in &self.tensors {
            out.push_str(&format!(
                "  {:<24} {:>6} elems  max rel err {:.3e}\n",
                t.name, t.elements, t.max_rel_err
            ));
        }
        out.push_str(&format!(
            "max relative error {:.3e} (tolerance {:.0e}): {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        out
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// The tiny configuration the suite always runs at.
fn tiny_config(config: &RunConfig) -> RunConfig {
    let mut tiny = config.clone();
    tiny.hidden_dim = 8;
    tiny.layers = 1;
    tiny.heads = 2;
    tiny.ffn_dim = 16;
    tiny.max_seq_len = 48;
    tiny.dropout = 0.0;
    tiny.tau = 1.0; // force every refinement step onto the tape
    tiny.num_relations = None;
    tiny.num_dialogues = 2;
    tiny.num_relation_types = 4;
    tiny.max_pairs = 2;
    tiny
}

/// Run the suite. `corrupt_fixture` skews one analytic gradient tensor so
/// tests can confirm that a broken backward is reported as a failure.
pub fn run_with_fixture(config: &RunConfig, corrupt_fixture: bool) -> Result<GradCheckReport> {
    let tiny = tiny_config(config);
    let mut synthetic = tiny.clone();
    synthetic.data_format = crate::config::DataFormat::Synthetic;
    synthetic.synthetic_seed = tiny.seed ^ 0x5eed;
    let corpus = dataio::load(&synthetic, None)?;
    let vocab = sequences::build_vocab(&corpus, tiny.vocab_max_size)?;
    let items = sequences::build_items(&corpus, &vocab, tiny.variant, tiny.max_seq_len)?;

    let encoder_cfg = tiny.encoder_config(vocab.len());
    let gate_cfg = tiny.gate_config(corpus.labels.len());
    let mut rng = SeededRng::new(tiny.seed);
    let model = Model::init(encoder_cfg, gate_cfg, &mut rng)?;

    let loss_of = |params: &ParamSet| -> Result<f64> {
        let probe = Model {
            encoder: model.encoder.clone(),
            gate: model.gate.clone(),
            params: params.clone(),
        };
        forward_loss(&probe, &items).map(|(v, _, _)| v)
    };

    let (_, mut tape, binding) = forward_loss(&model, &items)?;
    let loss_id = binding
        .get("__loss__")
        .copied()
        .expect("loss id recorded by forward_loss");
    tape.backward(loss_id)?;
    let mut grads = collect_grads(&tape, &binding);
    if corrupt_fixture {
        if let Some(g) = grads.get_mut("gate/refine_w") {
            for v in g.iter_mut() {
                *v = *v * 1.5 + 1e-3;
            }
        }
    }

    let names: Vec<String> = model.params.keys().cloned().collect();
    let mut tensors = Vec::with_capacity(names.len());
    let mut overall = 0.0f64;
    for name in &names {
        let shape = model.params[name].shape().to_vec();
        let numel: usize = shape.iter().product();
        let zero = vec![0.0; numel];
        let analytic = grads.get(name).map(Vec::as_slice).unwrap_or(&zero);
        let mut worst = 0.0f64;
        #[allow(clippy::needless_range_loop)] // i indexes both the probe writes and analytic
        for i in 0..numel {
            let mut probe = model.params.clone();
            let base = probe[name].data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = base + FD_STEP;
            let plus = loss_of(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = base - FD_STEP;
            let minus = loss_of(&probe)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        overall = overall.max(worst);
        tensors.push(TensorCheck {
            name: name.clone(),
            elements: numel,
            max_rel_err: worst,
        });
    }

    Ok(GradCheckReport {
        tensors,
        max_rel_err: overall,
        tolerance: TOLERANCE,
        passed: overall < TOLERANCE,
    })
}

pub fn run(config: &RunConfig) -> Result<GradCheckReport> {
    run_with_fixture(config, false)
}

/// Forward over every item as one batch; returns the loss value, the tape,
/// and the binding extended with a pseudo-entry for the loss node.
fn forward_loss(
    model: &Model,
    items: &[SequenceItem],
) -> Result<(f64, Tape, relgate_core::model::ParamBinding)> {
    let width = items.iter().map(|item| item.seq.len()).max().unwrap_or(0);
    let seqs: Vec<_> = items.iter().map(|item| item.seq.clone()).collect();
    let padded = pad_batch(&seqs, width)?;
    let mut tape = Tape::new();
    let mut binding = model.bind(&mut tape);
    let mut scored: Vec<(relgate_core::tape::TensorId, &BTreeSet<u32>)> = Vec::new();
    for (row, item) in items.iter().enumerate() {
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
            scored.push((logits, &item.golds[slot]));
        }
    }
    let loss = gate::batch_loss(&mut tape, &scored, &model.gate)?;
    let value = tape.value(loss)[0];
    binding.insert("__loss__".to_string(), loss);
    Ok((value, tape, binding))
}
