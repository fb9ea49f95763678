//! Command-line surface: `train`, `eval`, `sweep-tau`, `dump-brs`,
//! `gradcheck`, `gen-synthetic`. Every config key is overridable as a
//! `--key value` flag; `--config path` loads a flat key=value file first.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use relgate_core::checkpoint::{self, Checkpoint};

use crate::config::{self, RunConfig};
use crate::dataio;
use crate::dump;
use crate::evalrun;
use crate::gradcheck;
use crate::sweep;
use crate::train;

pub const USAGE: &str = "usage: relgate <command> [--config FILE] [--key value ...]

commands:
  train          train a model (writes last.rgt/best.rgt under --out_dir)
  eval           evaluate a checkpoint (--checkpoint, --eval_path, --report_path)
  sweep-tau      re-evaluate a checkpoint over --sweep_values (CSV to --sweep_output)
  dump-brs       print one JSON line per built input sequence
  gradcheck      finite-difference check of every parameter gradient
  gen-synthetic  write a synthetic corpus to --out_path

any configuration key doubles as a flag, e.g. --tau 0.7 --seed 3;
RELGATE_SEED overrides the seed when set";

pub fn run(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        bail!("missing command\n{USAGE}");
    };
    let config = config::resolve(&args[1..])?;
    match command.as_str() {
        "train" => cmd_train(&config),
        "eval" => cmd_eval(&config),
        "sweep-tau" => cmd_sweep(&config),
        "dump-brs" => cmd_dump(&config),
        "gradcheck" => cmd_gradcheck(&config),
        "gen-synthetic" => cmd_gen_synthetic(&config),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => bail!("unknown command {other:?}\n{USAGE}"),
    }
}

fn load_snapshot(config: &RunConfig) -> Result<checkpoint::Snapshot> {
    let path = config
        .checkpoint
        .as_ref()
        .context("this command needs --checkpoint")?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let cp = Checkpoint::from_bytes(&bytes)?;
    checkpoint::restore(&cp).map_err(Into::into)
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let outcome = train::train(config)?;
    let last = outcome
        .metrics
        .last()
        .context("training produced no epochs")?;
    eprintln!(
        "trained {} epochs; final mean loss {:.6}; mean epoch time {:.2}s",
        outcome.metrics.len(),
        last.mean_loss,
        outcome.mean_epoch_seconds()
    );
    match &outcome.checkpoint_path {
        Some(path) => eprintln!("checkpoint written to {}", path.display()),
        None => eprintln!("no --out_dir given; checkpoint not persisted"),
    }
    Ok(())
}

fn cmd_eval(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let snapshot = load_snapshot(config)?;
    let corpus = dataio::load(config, config.eval_path.as_deref())?;
    let report = evalrun::evaluate(&snapshot, &corpus, config.batch_size, None)?;
    match &config.report_path {
        Some(path) => {
            report.write(path)?;
            eprintln!("report written to {}", path.display());
        }
        None => print!("{}", report.to_jsonl()),
    }
    eprintln!(
        "micro-F1 {:.4} (P {:.4}, R {:.4}) over {} instances; mean refinements {:.3}; {:.2}s",
        report.micro_f1,
        report.precision,
        report.recall,
        report.instances,
        report.mean_iterations,
        report.elapsed_seconds
    );
    Ok(())
}

fn cmd_sweep(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let snapshot = load_snapshot(config)?;
    let corpus = dataio::load(config, config.eval_path.as_deref())?;
    let rows = sweep::sweep_tau(&snapshot, &corpus, &config.sweep_values, config.batch_size)?;
    let csv = sweep::to_csv(&rows);
    match &config.sweep_output {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("sweep written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_dump(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let lines = dump::dump_brs(config)?;
    match &config.out_path {
        Some(path) => {
            fs::write(path, &lines).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("sequences written to {}", path.display());
        }
        None => print!("{lines}"),
    }
    Ok(())
}

fn cmd_gradcheck(config: &RunConfig) -> Result<()> {
    let report = gradcheck::run(config)?;
    print!("{}", report.render());
    if !report.passed {
        bail!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_err
        );
    }
    Ok(())
}

fn cmd_gen_synthetic(config: &RunConfig) -> Result<()> {
    let mut synthetic = config.clone();
    synthetic.data_format = config::DataFormat::Synthetic;
    let corpus = dataio::load(&synthetic, None)?;
    let path: PathBuf = config
        .out_path
        .clone()
        .context("gen-synthetic needs --out_path")?;
    dataio::save_jsonl(&corpus, &path)?;
    eprintln!(
        "wrote {} dialogues ({} instances, {} relation types) to {}",
        corpus.examples.len(),
        corpus.num_instances(),
        corpus.labels.len(),
        path.display()
    );
    Ok(())
}
