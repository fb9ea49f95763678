//! Exit-threshold sweep over a frozen checkpoint.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use relgate_core::checkpoint::Snapshot;

use crate::dataio::Corpus;
use crate::evalrun;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub tau: f64,
    pub micro_f1: f64,
    pub mean_iterations: f64,
}

/// Re-evaluate the same checkpoint at each threshold. Refinement depth is
/// inference-time behavior, so no retraining is involved.
pub fn sweep_tau(
    snapshot: &Snapshot,
    corpus: &Corpus,
    values: &[f64],
    batch_size: usize,
) -> Result<Vec<SweepRow>> {
    for &tau in values {
        if !(0.0..=1.0).contains(&tau) {
            bail!("sweep threshold {tau} outside [0, 1]");
        }
    }
    values
        .iter()
        .map(|&tau| {
            let report = evalrun::evaluate(snapshot, corpus, batch_size, Some(tau))?;
            Ok(SweepRow {
                tau,
                micro_f1: report.micro_f1,
                mean_iterations: report.mean_iterations,
            })
        })
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau,micro_f1,mean_iterations\n");
    for row in rows {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            row.tau, row.micro_f1, row.mean_iterations
        ));
    }
    out
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    fs::write(path, to_csv(rows)).with_context(|| format!("writing {}", path.display()))
}
