//! Core engine for gated relation extraction at desk scale.
//!
//! Everything in this crate is deterministic and allocation-only (`no_std`
//! with `alloc`): a dense f64 tensor type with a tape-based reverse-mode
//! autodiff graph, an Adam optimizer, a whitespace/punctuation tokenizer with
//! a frequency vocabulary, construction of multi-`[CLS]` relation token
//! sequences, a small transformer encoder, and the confidence-gated
//! refinement head that scores and refines per-relation representations.
//!
//! File formats, dataset loaders, the training harness, and the CLI live in
//! the companion `relgate` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adam;
pub mod brs;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gate;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use adam::{AdamConfig, AdamState};
pub use brs::{build_brs, pad_batch, BrsSequence, BrsVariant, PaddedBatch};
pub use checkpoint::Checkpoint;
pub use data::{generate_synthetic, DialogueExample, LabelMap, RelationInstance, SyntheticSpec};
pub use encoder::{EncoderConfig, Mode};
pub use error::{Error, Result};
pub use gate::{GateConfig, GateTrace, Prediction, RelationTrace, TaskKind};
pub use metrics::{micro_f1, F1Counts};
pub use model::{Model, ParamBinding, ParamSet};
pub use rng::SeededRng;
pub use tape::{Tape, TensorId};
pub use tensor::Tensor;
