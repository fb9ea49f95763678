//! Confidence-gated relation refinement head.
//!
//! For each relation, the global representation and the relation
//! representation are concatenated and scored; when the maximum sigmoid
//! confidence stays at or below the threshold, the global representation is
//! refined by a relu'd affine map of the relation representation and the
//! score is recomputed, up to a fixed iteration bound. Classification
//! happens on the concatenation at the exit point, so gradients flow
//! through exactly the refinement steps that ran.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{binding_id, ParamBinding, ParamSet};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Which classifier convention the task uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Independent sigmoid per relation type; decisions by threshold.
    DialogueMultiLabel,
    /// One class per instance via softmax; decision by argmax.
    SentenceSingleLabel,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::DialogueMultiLabel => "dialogue",
            TaskKind::SentenceSingleLabel => "sentence",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dialogue" => Ok(TaskKind::DialogueMultiLabel),
            "sentence" => Ok(TaskKind::SentenceSingleLabel),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected dialogue|sentence)"
            ))),
        }
    }
}

/// Gate hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    /// Exit threshold on the max sigmoid confidence; exit is strict (`>`).
    pub tau: f64,
    /// Refinement iteration bound.
    pub max_refine: u32,
    pub num_relations: usize,
    pub task: TaskKind,
    /// Multi-label decision boundary on sigmoid probabilities.
    pub decision_threshold: f64,
    /// When false, every relation is classified at iteration zero.
    pub rrg_enabled: bool,
    /// Reuse the confidence head as the classifier.
    pub share_confidence_head: bool,
}

impl GateConfig {
    pub fn new(num_relations: usize, task: TaskKind) -> Self {
        GateConfig {
            tau: 0.6,
            max_refine: 3,
            num_relations,
            task,
            decision_threshold: 0.5,
            rrg_enabled: true,
            share_confidence_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.num_relations == 0 {
            return Err(Error::Config("num_relations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.decision_threshold) {
            return Err(Error::Config(format!(
                "decision_threshold {} outside [0, 1)",
                self.decision_threshold
            )));
        }
        Ok(())
    }
}

/// Per-relation record of the gate's execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTrace {
    /// Refinement steps applied before classification (0..=max_refine).
    pub iterations_used: u32,
    /// Max sigmoid confidence at each visit; length iterations_used + 1.
    pub confidences: Vec<f64>,
    /// True when the confidence test fired (rather than the bound).
    pub exited_early: bool,
    pub final_logits: Vec<f64>,
    /// The evolving global representation at each visit, for invariant
    /// checks and exit analysis; length iterations_used + 1.
    pub refined_history: Vec<Vec<f64>>,
}

/// Gate execution record for one sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GateTrace {
    pub relations: Vec<RelationTrace>,
}

impl GateTrace {
    pub fn mean_iterations(&self) -> f64 {
        if self.relations.is_empty() {
            return 0.0;
        }
        self.relations
            .iter()
            .map(|r| r.iterations_used as f64)
            .sum::<f64>()
            / self.relations.len() as f64
    }
}

/// Initialize gate parameters: confidence head, refinement map, and (unless
/// shared) the classifier head.
pub fn init_params(cfg: &GateConfig, hidden: usize, params: &mut ParamSet, rng: &mut SeededRng) {
    let d = hidden;
    let r = cfg.num_relations;
    let std = 0.02;
    params.insert(
        "gate/conf_w".into(),
        Tensor::randn(vec![2 * d, r], std, rng).with_grad(),
    );
    params.insert("gate/conf_b".into(), Tensor::zeros(vec![r]).with_grad());
    params.insert(
        "gate/refine_w".into(),
        Tensor::randn(vec![d, d], std, rng).with_grad(),
    );
    params.insert("gate/refine_b".into(), Tensor::zeros(vec![d]).with_grad());
    if !cfg.share_confidence_head {
        params.insert(
            "gate/cls_w".into(),
            Tensor::randn(vec![2 * d, r], std, rng).with_grad(),
        );
        params.insert("gate/cls_b".into(), Tensor::zeros(vec![r]).with_grad());
    }
}

fn affine(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

/// Confidence logits for one concatenated representation; returns the logit
/// node and the scalar max sigmoid confidence, strictly inside (0, 1).
pub fn confidence(
    tape: &mut Tape,
    binding: &ParamBinding,
    joint: TensorId,
) -> Result<(TensorId, f64)> {
    let logits = affine(
        tape,
        joint,
        binding_id(binding, "gate/conf_w")?,
        binding_id(binding, "gate/conf_b")?,
    )?;
    let probs = tape.sigmoid(logits);
    let score = tape
        .value(probs)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((logits, score))
}

/// One refinement step: relu of an affine map of the relation
/// representation, added onto the current global representation. The
/// relation representation is untouched and every output coordinate is at
/// least its input coordinate.
pub fn refine(
    tape: &mut Tape,
    binding: &ParamBinding,
    global_repr: TensorId,
    relation_repr: TensorId,
) -> Result<TensorId> {
    let mapped = affine(
        tape,
        relation_repr,
        binding_id(binding, "gate/refine_w")?,
        binding_id(binding, "gate/refine_b")?,
    )?;
    let gated = tape.relu(mapped);
    tape.add(gated, global_repr)
}

fn max_sigmoid(tape: &Tape, logits: TensorId) -> f64 {
    tape.value(logits)
        .iter()
        .map(|&z| {
            if z >= 0.0 {
                1.0 / (1.0 + libm::exp(-z))
            } else {
                let e = libm::exp(z);
                e / (1.0 + e)
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Run the gate over every relation of one sequence.
///
/// Each relation starts from the original global representation; refinement
/// never leaks between relations. Returns the exit-point classifier logits
/// per relation and the full trace.
pub fn gate_forward(
    tape: &mut Tape,
    binding: &ParamBinding,
    cfg: &GateConfig,
    global_repr: TensorId,
    relation_reprs: &[TensorId],
) -> Result<(Vec<TensorId>, GateTrace)> {
    if relation_reprs.is_empty() {
        return Err(Error::Contract(
            "gate_forward needs at least one relation representation".into(),
        ));
    }
    // disabling refinement is exactly the tau = 0 gate: the first
    // confidence, strictly positive, always wins
    let tau = if cfg.rrg_enabled { cfg.tau } else { 0.0 };
    let bound = if cfg.rrg_enabled { cfg.max_refine } else { 0 };

    let mut all_logits = Vec::with_capacity(relation_reprs.len());
    let mut trace = GateTrace::default();

    for &relation_repr in relation_reprs {
        let mut current = global_repr;
        let mut confidences = Vec::new();
        let mut refined_history = Vec::new();
        let mut exit: Option<(TensorId, bool, u32)> = None;

        for step in 0..=bound {
            let joint = tape.concat(current, relation_repr, 1)?;
            let conf_logits = affine(
                tape,
                joint,
                binding_id(binding, "gate/conf_w")?,
                binding_id(binding, "gate/conf_b")?,
            )?;
            let score = max_sigmoid(tape, conf_logits);
            confidences.push(score);
            refined_history.push(tape.value(current).to_vec());

            if score > tau || step == bound {
                let logits = if cfg.share_confidence_head {
                    conf_logits
                } else {
                    affine(
                        tape,
                        joint,
                        binding_id(binding, "gate/cls_w")?,
                        binding_id(binding, "gate/cls_b")?,
                    )?
                };
                exit = Some((logits, score > tau, step));
                break;
            }
            current = refine(tape, binding, current, relation_repr)?;
        }

        let (logits, exited_early, iterations_used) = exit.expect("loop always exits");
        trace.relations.push(RelationTrace {
            iterations_used,
            confidences,
            exited_early,
            final_logits: tape.value(logits).to_vec(),
            refined_history,
        });
        all_logits.push(logits);
    }
    Ok((all_logits, trace))
}

/// Task decision from final logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    /// Relation ids whose sigmoid clears the decision threshold.
    Multi(BTreeSet<u32>),
    /// Argmax class (ties broken by lowest index).
    Single(u32),
}

impl Prediction {
    pub fn relation_ids(&self) -> BTreeSet<u32> {
        match self {
            Prediction::Multi(set) => set.clone(),
            Prediction::Single(id) => BTreeSet::from([*id]),
        }
    }
}

pub fn predict(logits: &[f64], cfg: &GateConfig) -> Prediction {
    match cfg.task {
        TaskKind::DialogueMultiLabel => {
            let chosen = logits
                .iter()
                .enumerate()
                .filter(|(_, &z)| sigmoid_scalar(z) > cfg.decision_threshold)
                .map(|(i, _)| i as u32)
                .collect();
            Prediction::Multi(chosen)
        }
        TaskKind::SentenceSingleLabel => {
            // softmax is monotone, so the argmax of the probabilities is the
            // argmax of the logits; first max wins ties
            let mut best = 0usize;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            Prediction::Single(best as u32)
        }
    }
}

fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Loss of one relation instance on its exit-point logits.
pub fn instance_loss(
    tape: &mut Tape,
    logits: TensorId,
    gold: &BTreeSet<u32>,
    cfg: &GateConfig,
) -> Result<TensorId> {
    let r = cfg.num_relations;
    if let Some(&bad) = gold.iter().find(|&&id| id as usize >= r) {
        return Err(Error::IndexOutOfRange {
            what: "gold relation id",
            index: bad as usize,
            bound: r,
        });
    }
    if gold.is_empty() {
        return Err(Error::Contract("gold relation set is empty".into()));
    }
    match cfg.task {
        TaskKind::DialogueMultiLabel => {
            let mut targets = vec![0.0; r];
            for &id in gold {
                targets[id as usize] = 1.0;
            }
            tape.bce_mean(logits, &targets)
        }
        TaskKind::SentenceSingleLabel => {
            if gold.len() != 1 {
                return Err(Error::Contract(format!(
                    "single-label task expects exactly one gold relation, got {}",
                    gold.len()
                )));
            }
            let class = *gold.iter().next().unwrap() as usize;
            tape.softmax_xent(logits, class)
        }
    }
}

/// Mean loss over a batch of (exit logits, gold labels) pairs.
pub fn batch_loss(
    tape: &mut Tape,
    items: &[(TensorId, &BTreeSet<u32>)],
    cfg: &GateConfig,
) -> Result<TensorId> {
    if items.is_empty() {
        return Err(Error::Contract("batch_loss over an empty batch".into()));
    }
    let losses: Vec<TensorId> = items
        .iter()
        .map(|(logits, gold)| instance_loss(tape, *logits, gold, cfg))
        .collect::<Result<_>>()?;
    let total = tape.add_n(&losses)?;
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}
