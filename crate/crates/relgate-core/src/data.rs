//! Instance-level domain types and the synthetic corpus generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vocab::tokenize;

/// One annotated (subject, object, gold relations) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    pub subject: String,
    pub object: String,
    /// Relation ids; one element under the single-label task.
    pub gold: BTreeSet<u32>,
}

/// One dialogue (or sentence) with its annotated pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueExample {
    /// Speaker-prefixed utterances ("S1: ...."); a single entry for
    /// sentence-level data.
    pub utterances: Vec<String>,
    pub relations: Vec<RelationInstance>,
}

impl DialogueExample {
    /// Tokens of the whole dialogue body in order.
    pub fn dialogue_tokens(&self) -> Vec<String> {
        let mut tokens = Vec::new();
        for utterance in &self.utterances {
            tokens.extend(tokenize(utterance));
        }
        tokens
    }

    /// Tokenized (subject, object) pairs in annotation order.
    pub fn entity_pairs(&self) -> Vec<(Vec<String>, Vec<String>)> {
        self.relations
            .iter()
            .map(|rel| (tokenize(&rel.subject), tokenize(&rel.object)))
            .collect()
    }
}

/// Bijective relation name <-> id map, with an optional no-relation id that
/// scoring excludes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
    ids: BTreeMap<String, u32>,
    no_relation: Option<u32>,
}

impl LabelMap {
    pub fn new(names: Vec<String>, no_relation_name: Option<&str>) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (id, name) in names.iter().enumerate() {
            if ids.insert(name.clone(), id as u32).is_some() {
                return Err(Error::Config(format!(
                    "duplicate relation label {name:?}"
                )));
            }
        }
        let no_relation = match no_relation_name {
            None => None,
            Some(name) => Some(
                ids.get(name)
                    .copied()
                    .ok_or_else(|| Error::UnknownLabel(name.to_string()))?,
            ),
        };
        Ok(LabelMap {
            names,
            ids,
            no_relation,
        })
    }

    pub fn id(&self, name: &str) -> Result<u32> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn name(&self, id: u32) -> Result<&str> {
        self.names
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::IndexOutOfRange {
                what: "relation id",
                index: id as usize,
                bound: self.names.len(),
            })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn no_relation_id(&self) -> Option<u32> {
        self.no_relation
    }
}

/// Check that every instance has nonempty entities after tokenization and
/// in-range gold ids; failures name the offending dialogue.
pub fn validate_corpus(examples: &[DialogueExample], labels: &LabelMap) -> Result<()> {
    for (idx, example) in examples.iter().enumerate() {
        if example.utterances.is_empty() {
            return Err(Error::Contract(format!("dialogue {idx} has no utterances")));
        }
        if example.relations.is_empty() {
            return Err(Error::Contract(format!(
                "dialogue {idx} has no relation instances"
            )));
        }
        for (pair_idx, rel) in example.relations.iter().enumerate() {
            if tokenize(&rel.subject).is_empty() || tokenize(&rel.object).is_empty() {
                return Err(Error::Contract(format!(
                    "dialogue {idx} pair {pair_idx}: entity empty after tokenization"
                )));
            }
            if rel.gold.is_empty() {
                return Err(Error::Contract(format!(
                    "dialogue {idx} pair {pair_idx}: empty gold set"
                )));
            }
            for &gold in &rel.gold {
                if gold as usize >= labels.len() {
                    return Err(Error::IndexOutOfRange {
                        what: "gold relation id",
                        index: gold as usize,
                        bound: labels.len(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_dialogues: usize,
    pub num_relation_types: usize,
    pub max_pairs: usize,
}

const ENTITY_POOL: [&str; 12] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory",
    "oscar",
];

const VERB_POOL: [&str; 12] = [
    "likes", "hates", "knows", "helps", "teaches", "visits", "calls", "follows", "trusts",
    "avoids", "greets", "quotes",
];

/// The verb token that encodes relation type `r`; the corpus is perfectly
/// learnable because this mapping is a bijection.
pub fn relation_verb(r: usize) -> String {
    VERB_POOL
        .get(r)
        .map(|v| v.to_string())
        .unwrap_or_else(|| format!("verb{r}"))
}

/// Relation label names for a synthetic corpus of `num_relation_types`.
pub fn synthetic_labels(num_relation_types: usize) -> LabelMap {
    let names = (0..num_relation_types).map(relation_verb).collect();
    LabelMap::new(names, None).expect("verb names are distinct")
}

/// Rule-based corpus: each dialogue holds 1..=max_pairs utterances; the
/// utterance for pair i mentions its two entities around the verb that
/// encodes its relation type. Entities within a dialogue are distinct, so
/// every pair resolves unambiguously. Same seed, same corpus.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(LabelMap, Vec<DialogueExample>)> {
    if spec.num_dialogues == 0 || spec.num_relation_types == 0 || spec.max_pairs == 0 {
        return Err(Error::Config(
            "synthetic corpus parameters must be positive".into(),
        ));
    }
    if 2 * spec.max_pairs > ENTITY_POOL.len() {
        return Err(Error::Config(format!(
            "max_pairs {} needs {} distinct entities but the pool has {}",
            spec.max_pairs,
            2 * spec.max_pairs,
            ENTITY_POOL.len()
        )));
    }
    let labels = synthetic_labels(spec.num_relation_types);
    let mut rng = SeededRng::new(spec.seed);
    let mut examples = Vec::with_capacity(spec.num_dialogues);

    for _ in 0..spec.num_dialogues {
        let pairs = 1 + rng.below(spec.max_pairs);
        let mut entities: Vec<&str> = ENTITY_POOL.to_vec();
        rng.shuffle(&mut entities);

        let mut utterances = Vec::with_capacity(pairs);
        let mut relations = Vec::with_capacity(pairs);
        for p in 0..pairs {
            let relation = rng.below(spec.num_relation_types);
            let subject = entities[2 * p];
            let object = entities[2 * p + 1];
            let speaker = if p % 2 == 0 { "S1" } else { "S2" };
            utterances.push(format!(
                "{speaker}: {subject} {} {object}",
                relation_verb(relation)
            ));
            relations.push(RelationInstance {
                subject: subject.to_string(),
                object: object.to_string(),
                gold: BTreeSet::from([relation as u32]),
            });
        }
        examples.push(DialogueExample {
            utterances,
            relations,
        });
    }
    Ok((labels, examples))
}
