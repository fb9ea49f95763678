//! Model = encoder + gate configs plus one named parameter set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::brs::PaddedBatch;
use crate::encoder::{self, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::gate::{self, GateConfig, GateTrace};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Named parameter tensors. BTreeMap keeps iteration order stable, which
/// makes checkpoints and gradient reports deterministic.
pub type ParamSet = BTreeMap<String, Tensor>;

/// Name-to-tape-leaf map for one forward pass.
pub type ParamBinding = BTreeMap<String, TensorId>;

/// Record every parameter as a trainable leaf on a fresh tape.
pub fn bind_params(tape: &mut Tape, params: &ParamSet) -> ParamBinding {
    params
        .iter()
        .map(|(name, tensor)| (name.clone(), tape.param(tensor)))
        .collect()
}

pub fn binding_id(binding: &ParamBinding, name: &str) -> Result<TensorId> {
    binding
        .get(name)
        .copied()
        .ok_or_else(|| Error::Contract(alloc::format!("parameter {name:?} not bound on tape")))
}

/// Gradients per parameter after a backward pass.
pub fn collect_grads(tape: &Tape, binding: &ParamBinding) -> BTreeMap<String, Vec<f64>> {
    binding
        .iter()
        .filter_map(|(name, &id)| tape.grad(id).map(|g| (name.clone(), g.to_vec())))
        .collect()
}

/// Per-sequence forward result: one logit vector per relation, plus the
/// gate trace.
pub struct SequenceForward {
    pub logits: Vec<TensorId>,
    pub trace: GateTrace,
}

/// The full trainable model.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub gate: GateConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn init(encoder: EncoderConfig, gate: GateConfig, rng: &mut SeededRng) -> Result<Self> {
        encoder.validate()?;
        gate.validate()?;
        let mut params = ParamSet::new();
        encoder::init_params(&encoder, &mut params, rng);
        gate::init_params(&gate, encoder.hidden, &mut params, rng);
        Ok(Model {
            encoder,
            gate,
            params,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        bind_params(tape, &self.params)
    }

    /// Encode one padded row and run the gate over its relations.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        token_ids: &[u32],
        segment_ids: &[u8],
        mask: &[u8],
        relation_positions: &[usize],
        mode: &mut Mode,
    ) -> Result<SequenceForward> {
        let encoded = encoder::encode_sequence(
            tape,
            binding,
            &self.encoder,
            token_ids,
            segment_ids,
            mask,
            relation_positions,
            mode,
        )?;
        let (logits, trace) = gate::gate_forward(
            tape,
            binding,
            &self.gate,
            encoded.global_repr,
            &encoded.relation_reprs,
        )?;
        Ok(SequenceForward { logits, trace })
    }

    /// Forward every row of a padded batch.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        batch: &PaddedBatch,
        mode: &mut Mode,
    ) -> Result<Vec<SequenceForward>> {
        (0..batch.ids.len())
            .map(|row| {
                self.forward_sequence(
                    tape,
                    binding,
                    &batch.ids[row],
                    &batch.segments[row],
                    &batch.mask[row],
                    &batch.relation_positions[row],
                    mode,
                )
            })
            .collect()
    }
}
