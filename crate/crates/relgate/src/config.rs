//! Flat key=value run configuration.
//!
//! A config file holds one `key = value` pair per line (`#` comments); any
//! key can be overridden on the command line as `--key value`. Unknown keys
//! are rejected so typos surface before training starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use relgate_core::brs::BrsVariant;
use relgate_core::encoder::EncoderConfig;
use relgate_core::gate::{GateConfig, TaskKind};

/// Where instances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Generated in memory from the `synthetic_*` keys.
    Synthetic,
    /// Line-delimited JSON corpus cache (the `gen-synthetic` output format).
    Jsonl,
    /// Published dialogue-RE schema: array of [utterances, relations].
    Dialogre,
    /// Published sentence-RE schema: array of records with token spans.
    Tacred,
}

impl DataFormat {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "synthetic" => DataFormat::Synthetic,
            "jsonl" => DataFormat::Jsonl,
            "dialogre" => DataFormat::Dialogre,
            "tacred" => DataFormat::Tacred,
            other => bail!("unknown data_format {other:?} (expected synthetic|jsonl|dialogre|tacred)"),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DataFormat::Synthetic => "synthetic",
            DataFormat::Jsonl => "jsonl",
            DataFormat::Dialogre => "dialogre",
            DataFormat::Tacred => "tacred",
        }
    }
}

/// Field names of the external dataset schemas, configurable to absorb
/// version drift.
#[derive(Debug, Clone)]
pub struct FieldNames {
    pub subject: String,
    pub object: String,
    pub relations: String,
    pub tokens: String,
    pub subj_start: String,
    pub subj_end: String,
    pub obj_start: String,
    pub obj_end: String,
    pub relation: String,
}

impl Default for FieldNames {
    fn default() -> Self {
        FieldNames {
            subject: "x".into(),
            object: "y".into(),
            relations: "r".into(),
            tokens: "token".into(),
            subj_start: "subj_start".into(),
            subj_end: "subj_end".into(),
            obj_start: "obj_start".into(),
            obj_end: "obj_end".into(),
            relation: "relation".into(),
        }
    }
}

/// Full harness configuration with desk-scale defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskKind,
    pub variant: BrsVariant,

    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub vocab_max_size: usize,

    pub tau: f64,
    pub max_refine: u32,
    pub decision_threshold: f64,
    pub rrg_enabled: bool,
    pub share_confidence_head: bool,
    /// Usually derived from the corpus label map; an explicit value is
    /// checked against it.
    pub num_relations: Option<usize>,

    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,

    pub data_format: DataFormat,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub no_relation_label: Option<String>,
    pub out_path: Option<PathBuf>,

    pub synthetic_seed: u64,
    pub num_dialogues: usize,
    pub num_relation_types: usize,
    pub max_pairs: usize,

    pub sweep_values: Vec<f64>,
    pub sweep_output: Option<PathBuf>,

    pub fields: FieldNames,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::DialogueMultiLabel,
            variant: BrsVariant::Standard,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_seq_len: 256,
            dropout: 0.1,
            vocab_max_size: 30_000,
            tau: 0.6,
            max_refine: 3,
            decision_threshold: 0.5,
            rrg_enabled: true,
            share_confidence_head: false,
            num_relations: None,
            batch_size: 6,
            epochs: 20,
            learning_rate: 1e-3,
            seed: 42,
            data_format: DataFormat::Synthetic,
            train_path: None,
            dev_path: None,
            eval_path: None,
            checkpoint: None,
            out_dir: None,
            report_path: None,
            labels_path: None,
            no_relation_label: None,
            out_path: None,
            synthetic_seed: 7,
            num_dialogues: 50,
            num_relation_types: 6,
            max_pairs: 3,
            sweep_values: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            sweep_output: None,
            fields: FieldNames::default(),
        }
    }
}

fn parse_flag(value: &str, key: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("{key}: expected a boolean, got {other:?}"),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "task" => self.task = TaskKind::parse(value)?,
            "variant" => self.variant = BrsVariant::parse(value)?,
            "hidden_dim" => self.hidden_dim = value.parse().context("hidden_dim")?,
            "layers" => self.layers = value.parse().context("layers")?,
            "heads" => self.heads = value.parse().context("heads")?,
            "ffn_dim" => self.ffn_dim = value.parse().context("ffn_dim")?,
            "max_seq_len" => self.max_seq_len = value.parse().context("max_seq_len")?,
            "dropout" => self.dropout = value.parse().context("dropout")?,
            "vocab_max_size" => self.vocab_max_size = value.parse().context("vocab_max_size")?,
            "tau" => self.tau = value.parse().context("tau")?,
            "max_refine" => self.max_refine = value.parse().context("max_refine")?,
            "decision_threshold" => {
                self.decision_threshold = value.parse().context("decision_threshold")?
            }
            "rrg_enabled" => self.rrg_enabled = parse_flag(value, key)?,
            "share_confidence_head" => self.share_confidence_head = parse_flag(value, key)?,
            "num_relations" => self.num_relations = Some(value.parse().context("num_relations")?),
            "batch_size" => self.batch_size = value.parse().context("batch_size")?,
            "epochs" => self.epochs = value.parse().context("epochs")?,
            "learning_rate" => self.learning_rate = value.parse().context("learning_rate")?,
            "seed" => self.seed = value.parse().context("seed")?,
            "data_format" => self.data_format = DataFormat::parse(value)?,
            "train_path" => self.train_path = Some(PathBuf::from(value)),
            "dev_path" => self.dev_path = Some(PathBuf::from(value)),
            "eval_path" => self.eval_path = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "report_path" => self.report_path = Some(PathBuf::from(value)),
            "labels_path" => self.labels_path = Some(PathBuf::from(value)),
            "no_relation_label" => self.no_relation_label = Some(value.to_string()),
            "out_path" => self.out_path = Some(PathBuf::from(value)),
            "synthetic_seed" => self.synthetic_seed = value.parse().context("synthetic_seed")?,
            "num_dialogues" => self.num_dialogues = value.parse().context("num_dialogues")?,
            "num_relation_types" => {
                self.num_relation_types = value.parse().context("num_relation_types")?
            }
            "max_pairs" => self.max_pairs = value.parse().context("max_pairs")?,
            "sweep_values" => {
                self.sweep_values = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().context("sweep_values"))
                    .collect::<Result<_>>()?
            }
            "sweep_output" => self.sweep_output = Some(PathBuf::from(value)),
            "field_subject" => self.fields.subject = value.to_string(),
            "field_object" => self.fields.object = value.to_string(),
            "field_relations" => self.fields.relations = value.to_string(),
            "field_tokens" => self.fields.tokens = value.to_string(),
            "field_subj_start" => self.fields.subj_start = value.to_string(),
            "field_subj_end" => self.fields.subj_end = value.to_string(),
            "field_obj_start" => self.fields.obj_start = value.to_string(),
            "field_obj_end" => self.fields.obj_end = value.to_string(),
            "field_relation" => self.fields.relation = value.to_string(),
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    /// Load a flat key=value file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Honor the optional seed override from the environment.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("RELGATE_SEED") {
            self.seed = seed
                .parse()
                .context("RELGATE_SEED must be an unsigned integer")?;
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
        }
    }

    pub fn gate_config(&self, num_relations: usize) -> GateConfig {
        GateConfig {
            tau: self.tau,
            max_refine: self.max_refine,
            num_relations,
            task: self.task,
            decision_threshold: self.decision_threshold,
            rrg_enabled: self.rrg_enabled,
            share_confidence_head: self.share_confidence_head,
        }
    }

    /// Cheap structural checks that should fail before any training work.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            bail!("epochs must be at least 1");
        }
        if let Some(n) = self.num_relations {
            if n == 0 {
                bail!("num_relations must be positive");
            }
        }
        self.encoder_config(8).validate().map_err(anyhow::Error::from)?;
        self.gate_config(self.num_relations.unwrap_or(1))
            .validate()
            .map_err(anyhow::Error::from)?;
        for p in [&self.train_path, &self.dev_path, &self.eval_path, &self.checkpoint].into_iter().flatten() {
            if !p.exists() {
                bail!("path does not exist: {}", p.display());
            }
        }
        Ok(())
    }
}

/// Parse `--key value` pairs into (config-file path, assignments).
pub fn parse_overrides(args: &[String]) -> Result<(Option<PathBuf>, BTreeMap<String, String>)> {
    let mut config_path = None;
    let mut pairs = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let key = args[i]
            .strip_prefix("--")
            .with_context(|| format!("expected --key, got {:?}", args[i]))?;
        let value = args
            .get(i + 1)
            .with_context(|| format!("flag --{key} is missing its value"))?;
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            pairs.insert(key.to_string(), value.clone());
        }
        i += 2;
    }
    Ok((config_path, pairs))
}

/// Build the effective config: defaults, then file, then flag overrides,
/// then the environment seed.
pub fn resolve(args: &[String]) -> Result<RunConfig> {
    let (config_path, pairs) = parse_overrides(args)?;
    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        config.apply_file(&path)?;
    }
    for (key, value) in &pairs {
        config.set(key, value)?;
    }
    config.apply_env()?;
    Ok(config)
}
