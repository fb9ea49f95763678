//! Corpus ingestion: the published dialogue and sentence RE schemas, the
//! line-delimited JSON corpus cache, and the in-memory synthetic source.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use relgate_core::data::{
    generate_synthetic, validate_corpus, DialogueExample, LabelMap, RelationInstance,
    SyntheticSpec,
};
use serde_json::{json, Value};

use crate::config::{DataFormat, FieldNames, RunConfig};

/// A loaded corpus: label map, dialogues, and the count of items skipped
/// for having no usable annotation.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub labels: LabelMap,
    pub examples: Vec<DialogueExample>,
    pub skipped: usize,
}

impl Corpus {
    /// Every token the vocabulary needs: dialogue bodies plus entity
    /// mentions (entities live in the sequence tail).
    pub fn token_stream(&self) -> Vec<String> {
        let mut tokens = Vec::new();
        for example in &self.examples {
            tokens.extend(example.dialogue_tokens());
            for rel in &example.relations {
                tokens.extend(relgate_core::vocab::tokenize(&rel.subject));
                tokens.extend(relgate_core::vocab::tokenize(&rel.object));
            }
        }
        tokens
    }

    pub fn num_instances(&self) -> usize {
        self.examples.iter().map(|e| e.relations.len()).sum()
    }
}

/// Load the corpus named by `path_key` ("train", "dev", "eval") according
/// to the configured format.
pub fn load(config: &RunConfig, path: Option<&Path>) -> Result<Corpus> {
    match config.data_format {
        DataFormat::Synthetic => {
            let spec = SyntheticSpec {
                seed: config.synthetic_seed,
                num_dialogues: config.num_dialogues,
                num_relation_types: config.num_relation_types,
                max_pairs: config.max_pairs,
            };
            let (labels, examples) = generate_synthetic(&spec)?;
            Ok(Corpus {
                labels,
                examples,
                skipped: 0,
            })
        }
        DataFormat::Jsonl => {
            let path = path.context("this data format needs a corpus path")?;
            load_jsonl(path)
        }
        DataFormat::Dialogre => {
            let path = path.context("this data format needs a corpus path")?;
            load_dialogre(path, config)
        }
        DataFormat::Tacred => {
            let path = path.context("this data format needs a corpus path")?;
            load_tacred(path, config)
        }
    }
}

fn labels_from_file(path: &Path, no_relation: Option<&str>) -> Result<LabelMap> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading labels file {}", path.display()))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    LabelMap::new(names, no_relation).map_err(Into::into)
}

/// Label map for a dataset: an explicit labels file wins; otherwise the
/// names observed in the data, sorted for stability.
fn resolve_labels(
    config: &RunConfig,
    observed: &BTreeSet<String>,
) -> Result<(LabelMap, bool)> {
    if let Some(labels_path) = &config.labels_path {
        let map = labels_from_file(labels_path, config.no_relation_label.as_deref())?;
        Ok((map, true))
    } else {
        let names: Vec<String> = observed.iter().cloned().collect();
        let no_relation = config
            .no_relation_label
            .as_deref()
            .filter(|name| observed.contains(*name));
        Ok((LabelMap::new(names, no_relation)?, false))
    }
}

/// Published dialogue schema: a top-level array of
/// `[utterance array, relation array]` items; each relation object carries
/// subject / object strings and a list of relation names.
pub fn load_dialogre(path: &Path, config: &RunConfig) -> Result<Corpus> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let root: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let items = root
        .as_array()
        .with_context(|| format!("{}: expected a top-level array", path.display()))?;
    let f = &config.fields;

    // first pass: collect relation names so label ids are stable
    let mut observed = BTreeSet::new();
    for item in items {
        if let Some(relations) = item.get(1).and_then(Value::as_array) {
            for rel in relations {
                for name in relation_names(rel, f)? {
                    observed.insert(name);
                }
            }
        }
    }
    let (labels, strict) = resolve_labels(config, &observed)?;

    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for (idx, item) in items.iter().enumerate() {
        let pair = item
            .as_array()
            .with_context(|| format!("item {idx}: expected [utterances, relations]"))?;
        let utterances: Vec<String> = pair
            .first()
            .and_then(Value::as_array)
            .with_context(|| format!("item {idx}: missing utterance array"))?
            .iter()
            .map(|u| {
                u.as_str()
                    .map(String::from)
                    .with_context(|| format!("item {idx}: utterance is not a string"))
            })
            .collect::<Result<_>>()?;
        let relations_json = pair
            .get(1)
            .and_then(Value::as_array)
            .with_context(|| format!("item {idx}: missing relation array"))?;

        let mut relations = Vec::new();
        for rel in relations_json {
            let subject = field_str(rel, &f.subject, idx)?;
            let object = field_str(rel, &f.object, idx)?;
            let mut gold = BTreeSet::new();
            for name in relation_names(rel, f)? {
                match labels.id(&name) {
                    Ok(id) => {
                        gold.insert(id);
                    }
                    Err(_) if !strict => unreachable!("observed names cover the data"),
                    Err(e) => return Err(anyhow::Error::from(e))
                        .with_context(|| format!("item {idx}: unknown relation label")),
                }
            }
            if gold.is_empty() {
                continue; // annotation without any mapped relation
            }
            relations.push(RelationInstance {
                subject,
                object,
                gold,
            });
        }
        if relations.is_empty() {
            skipped += 1;
            continue;
        }
        examples.push(DialogueExample {
            utterances,
            relations,
        });
    }
    let corpus = Corpus {
        labels,
        examples,
        skipped,
    };
    validate_corpus(&corpus.examples, &corpus.labels)?;
    Ok(corpus)
}

fn field_str(rel: &Value, field: &str, idx: usize) -> Result<String> {
    rel.get(field)
        .and_then(Value::as_str)
        .map(String::from)
        .with_context(|| format!("item {idx}: relation missing string field {field:?}"))
}

fn relation_names(rel: &Value, f: &FieldNames) -> Result<Vec<String>> {
    match rel.get(&f.relations) {
        Some(Value::Array(list)) => list
            .iter()
            .map(|v| {
                v.as_str()
                    .map(String::from)
                    .context("relation name is not a string")
            })
            .collect(),
        Some(Value::String(name)) => Ok(vec![name.clone()]),
        Some(other) => bail!("relation field holds {other:?}, expected string or array"),
        None => Ok(Vec::new()),
    }
}

/// Published sentence schema: an array of records with a token list,
/// inclusive subject/object spans, and one relation name.
pub fn load_tacred(path: &Path, config: &RunConfig) -> Result<Corpus> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let root: Value = serde_json::from_str(&text)
        .with_context(|| format!("{} is not valid JSON", path.display()))?;
    let records = root
        .as_array()
        .with_context(|| format!("{}: expected a top-level array", path.display()))?;
    let f = &config.fields;

    let mut observed = BTreeSet::new();
    for record in records {
        if let Some(name) = record.get(&f.relation).and_then(Value::as_str) {
            observed.insert(name.to_string());
        }
    }
    let (labels, _) = resolve_labels(config, &observed)?;

    let mut examples = Vec::new();
    for (idx, record) in records.iter().enumerate() {
        let tokens: Vec<String> = record
            .get(&f.tokens)
            .and_then(Value::as_array)
            .with_context(|| format!("record {idx}: missing token array {:?}", f.tokens))?
            .iter()
            .map(|t| {
                t.as_str()
                    .map(String::from)
                    .with_context(|| format!("record {idx}: token is not a string"))
            })
            .collect::<Result<_>>()?;
        let span = |start_field: &str, end_field: &str| -> Result<(usize, usize)> {
            let start = record
                .get(start_field)
                .and_then(Value::as_u64)
                .with_context(|| format!("record {idx}: missing {start_field}"))?
                as usize;
            let end = record
                .get(end_field)
                .and_then(Value::as_u64)
                .with_context(|| format!("record {idx}: missing {end_field}"))?
                as usize;
            if start > end {
                bail!("record {idx}: inverted span {start}..{end}");
            }
            if end >= tokens.len() {
                bail!(
                    "record {idx}: span end {end} out of bounds for {} tokens",
                    tokens.len()
                );
            }
            Ok((start, end))
        };
        let (ss, se) = span(&f.subj_start, &f.subj_end)?;
        let (os, oe) = span(&f.obj_start, &f.obj_end)?;
        let relation_name = record
            .get(&f.relation)
            .and_then(Value::as_str)
            .with_context(|| format!("record {idx}: missing relation name"))?;
        let gold = BTreeSet::from([labels
            .id(relation_name)
            .with_context(|| format!("record {idx}: unknown relation"))?]);
        examples.push(DialogueExample {
            utterances: vec![tokens.join(" ")],
            relations: vec![RelationInstance {
                subject: tokens[ss..=se].join(" "),
                object: tokens[os..=oe].join(" "),
                gold,
            }],
        });
    }
    let corpus = Corpus {
        labels,
        examples,
        skipped: 0,
    };
    validate_corpus(&corpus.examples, &corpus.labels)?;
    Ok(corpus)
}

/// Corpus cache format: a label header line, then one dialogue per line.
pub fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let header = json!({
        "labels": corpus.labels.names(),
        "no_relation": corpus.labels.no_relation_id().map(|id| corpus.labels.name(id).unwrap_or_default().to_string()),
    });
    writeln!(out, "{header}")?;
    for example in &corpus.examples {
        let relations: Vec<Value> = example
            .relations
            .iter()
            .map(|rel| {
                json!({
                    "subject": rel.subject,
                    "object": rel.object,
                    "gold": rel.gold.iter().collect::<Vec<_>>(),
                })
            })
            .collect();
        let line = json!({
            "utterances": example.utterances,
            "relations": relations,
        });
        writeln!(out, "{line}")?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(
        lines
            .next()
            .with_context(|| format!("{} is empty", path.display()))?,
    )
    .context("corpus header is not JSON")?;
    let names: Vec<String> = header
        .get("labels")
        .and_then(Value::as_array)
        .context("corpus header is missing the label list")?
        .iter()
        .map(|v| v.as_str().map(String::from).context("label is not a string"))
        .collect::<Result<_>>()?;
    let no_relation = header
        .get("no_relation")
        .and_then(Value::as_str)
        .map(String::from);
    let labels = LabelMap::new(names, no_relation.as_deref())?;

    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let value: Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad JSON", path.display(), lineno + 2))?;
        let utterances: Vec<String> = value
            .get("utterances")
            .and_then(Value::as_array)
            .with_context(|| format!("line {}: missing utterances", lineno + 2))?
            .iter()
            .map(|u| u.as_str().map(String::from).context("utterance not a string"))
            .collect::<Result<_>>()?;
        let relations: Vec<RelationInstance> = value
            .get("relations")
            .and_then(Value::as_array)
            .with_context(|| format!("line {}: missing relations", lineno + 2))?
            .iter()
            .map(|rel| -> Result<RelationInstance> {
                let subject = rel
                    .get("subject")
                    .and_then(Value::as_str)
                    .context("missing subject")?
                    .to_string();
                let object = rel
                    .get("object")
                    .and_then(Value::as_str)
                    .context("missing object")?
                    .to_string();
                let gold: BTreeSet<u32> = rel
                    .get("gold")
                    .and_then(Value::as_array)
                    .context("missing gold ids")?
                    .iter()
                    .map(|v| {
                        v.as_u64()
                            .map(|id| id as u32)
                            .context("gold id is not an integer")
                    })
                    .collect::<Result<_>>()?;
                Ok(RelationInstance {
                    subject,
                    object,
                    gold,
                })
            })
            .collect::<Result<_>>()?;
        examples.push(DialogueExample {
            utterances,
            relations,
        });
    }
    let corpus = Corpus {
        labels,
        examples,
        skipped: 0,
    };
    validate_corpus(&corpus.examples, &corpus.labels)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as IoWrite;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    #[test]
    fn dialogre_two_pair_item() {
        let data = r#"[
          [
            ["S1: Where the hell have you been?!",
             "S2: He's not supposed to ask my girlfriend to marry him!"],
            [
              {"x": "Monica", "y": "S2", "r": ["girl/boyfriend"]},
              {"x": "Richard", "y": "Monica", "r": ["positive_impression"]}
            ]
          ]
        ]"#;
        let file = write_temp(data);
        let config = RunConfig {
            data_format: DataFormat::Dialogre,
            ..RunConfig::default()
        };
        let corpus = load_dialogre(file.path(), &config).unwrap();
        assert_eq!(corpus.examples.len(), 1);
        let example = &corpus.examples[0];
        assert_eq!(example.relations.len(), 2);
        assert_eq!(example.relations[0].subject, "Monica");
        assert_eq!(example.relations[1].object, "Monica");
        assert_eq!(corpus.labels.len(), 2);
        // sorted observed names: girl/boyfriend = 0, positive_impression = 1
        assert_eq!(corpus.labels.id("girl/boyfriend").unwrap(), 0);
        assert_eq!(
            example.relations[0].gold,
            BTreeSet::from([0u32])
        );
    }

    #[test]
    fn dialogre_empty_relation_array_is_skipped_with_count() {
        let data = r#"[
          [["S1: hello"], []],
          [["S1: hi there"], [{"x": "A", "y": "B", "r": ["rel"]}]]
        ]"#;
        let file = write_temp(data);
        let config = RunConfig {
            data_format: DataFormat::Dialogre,
            ..RunConfig::default()
        };
        let corpus = load_dialogre(file.path(), &config).unwrap();
        assert_eq!(corpus.examples.len(), 1);
        assert_eq!(corpus.skipped, 1);
    }

    #[test]
    fn dialogre_unknown_label_with_explicit_labels_file() {
        let labels = write_temp("known_rel\n");
        let data = r#"[ [["S1: x"], [{"x": "A", "y": "B", "r": ["mystery"]}]] ]"#;
        let file = write_temp(data);
        let config = RunConfig {
            data_format: DataFormat::Dialogre,
            labels_path: Some(labels.path().to_path_buf()),
            ..RunConfig::default()
        };
        let err = load_dialogre(file.path(), &config).unwrap_err();
        assert!(format!("{err:#}").contains("mystery"), "{err:#}");
    }

    #[test]
    fn tacred_spans_resolve() {
        let data = r#"[
          {"token": ["a", "b", "c", "d"], "subj_start": 0, "subj_end": 0,
           "obj_start": 2, "obj_end": 3, "relation": "org:founded"}
        ]"#;
        let file = write_temp(data);
        let config = RunConfig {
            data_format: DataFormat::Tacred,
            ..RunConfig::default()
        };
        let corpus = load_tacred(file.path(), &config).unwrap();
        let rel = &corpus.examples[0].relations[0];
        assert_eq!(rel.subject, "a");
        assert_eq!(rel.object, "c d");
    }

    #[test]
    fn tacred_inverted_and_oversized_spans_rejected() {
        let config = RunConfig {
            data_format: DataFormat::Tacred,
            ..RunConfig::default()
        };
        let inverted = write_temp(
            r#"[{"token": ["a","b"], "subj_start": 1, "subj_end": 0,
                "obj_start": 0, "obj_end": 0, "relation": "r"}]"#,
        );
        assert!(load_tacred(inverted.path(), &config).is_err());
        let oversized = write_temp(
            r#"[{"token": ["a","b"], "subj_start": 0, "subj_end": 5,
                "obj_start": 0, "obj_end": 0, "relation": "r"}]"#,
        );
        assert!(load_tacred(oversized.path(), &config).is_err());
    }

    #[test]
    fn tacred_no_relation_maps_to_excluded_id() {
        let data = r#"[
          {"token": ["a", "b"], "subj_start": 0, "subj_end": 0,
           "obj_start": 1, "obj_end": 1, "relation": "no_relation"},
          {"token": ["c", "d"], "subj_start": 0, "subj_end": 0,
           "obj_start": 1, "obj_end": 1, "relation": "per:title"}
        ]"#;
        let file = write_temp(data);
        let config = RunConfig {
            data_format: DataFormat::Tacred,
            no_relation_label: Some("no_relation".into()),
            ..RunConfig::default()
        };
        let corpus = load_tacred(file.path(), &config).unwrap();
        let excluded = corpus.labels.no_relation_id().unwrap();
        assert_eq!(corpus.labels.name(excluded).unwrap(), "no_relation");
        assert_eq!(
            corpus.examples[0].relations[0].gold,
            BTreeSet::from([excluded])
        );
    }

    #[test]
    fn jsonl_roundtrip_is_structurally_identical() {
        let config = RunConfig {
            num_dialogues: 8,
            ..RunConfig::default()
        };
        let corpus = load(&config, None).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_jsonl(&corpus, file.path()).unwrap();
        let reloaded = load_jsonl(file.path()).unwrap();
        assert_eq!(reloaded.labels, corpus.labels);
        assert_eq!(reloaded.examples, corpus.examples);
        // and a second serialization is byte-identical
        let file2 = tempfile::NamedTempFile::new().unwrap();
        save_jsonl(&reloaded, file2.path()).unwrap();
        assert_eq!(
            fs::read(file.path()).unwrap(),
            fs::read(file2.path()).unwrap()
        );
    }
}
