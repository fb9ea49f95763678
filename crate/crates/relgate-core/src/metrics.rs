//! Micro-averaged F1 over (dialogue, pair, relation) decision tuples.

use alloc::collections::{BTreeMap, BTreeSet};

/// One scored decision: (example index, pair index, relation id).
pub type DecisionTuple = (usize, usize, u32);

/// Pooled counts for micro-averaged scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct F1Counts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl F1Counts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.true_positive as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.true_positive as f64 / self.gold as f64
        }
    }

    /// 2PR/(P+R) when P+R > 0, else 0.
    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

/// Micro-F1 counts over tuple sets, excluding tuples whose relation id is
/// `exclude` (the designated no-relation class) from both sides.
pub fn micro_f1(
    predicted: &BTreeSet<DecisionTuple>,
    gold: &BTreeSet<DecisionTuple>,
    exclude: Option<u32>,
) -> F1Counts {
    let keep = |t: &&DecisionTuple| exclude != Some(t.2);
    let predicted_kept: BTreeSet<&DecisionTuple> = predicted.iter().filter(keep).collect();
    let gold_kept: BTreeSet<&DecisionTuple> = gold.iter().filter(keep).collect();
    F1Counts {
        true_positive: predicted_kept.intersection(&gold_kept).count(),
        predicted: predicted_kept.len(),
        gold: gold_kept.len(),
    }
}

/// Per-relation (tp, predicted, gold) counts over the same tuple sets.
pub fn per_relation_counts(
    predicted: &BTreeSet<DecisionTuple>,
    gold: &BTreeSet<DecisionTuple>,
) -> BTreeMap<u32, F1Counts> {
    let mut counts: BTreeMap<u32, F1Counts> = BTreeMap::new();
    for tuple in predicted {
        let entry = counts.entry(tuple.2).or_default();
        entry.predicted += 1;
        if gold.contains(tuple) {
            entry.true_positive += 1;
        }
    }
    for tuple in gold {
        counts.entry(tuple.2).or_default().gold += 1;
    }
    counts
}
