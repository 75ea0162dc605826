//! Negative phrase mining by attribute flipping.
//!
//! Visual attributes of one part are treated as exclusive: an eye that is red
//! is not also black. Swapping the modifiers of an observed phrase for another
//! modifier list attested with the same head gives a phrase that should be
//! absent from the image.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk, NounPhrase};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Head noun to every modifier list seen with it in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeInventory {
    by_head: BTreeMap<String, BTreeSet<Vec<String>>>,
}

impl AttributeInventory {
    pub fn heads(&self) -> impl Iterator<Item = &str> {
        self.by_head.keys().map(String::as_str)
    }

    pub fn modifiers(&self, head: &str) -> Option<&BTreeSet<Vec<String>>> {
        self.by_head.get(head)
    }

    pub fn is_empty(&self) -> bool {
        self.by_head.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_head.len()
    }

    /// Records a phrase; unmodified phrases are ignored.
    pub fn insert(&mut self, np: &NounPhrase) {
        if np.is_modified() {
            self.by_head
                .entry(np.head.clone())
                .or_default()
                .insert(np.modifiers.clone());
        }
    }

    pub fn contains(&self, np: &NounPhrase) -> bool {
        self.by_head
            .get(&np.head)
            .is_some_and(|set| set.contains(&np.modifiers))
    }
}

pub fn build_inventory(corpus: &Corpus) -> AttributeInventory {
    let mut inv = AttributeInventory::default();
    for rec in corpus.records() {
        for desc in &rec.descriptions {
            for np in chunk(&desc.tokens) {
                inv.insert(&np);
            }
        }
    }
    inv
}

/// Replaces the whole modifier list of `np` with a different one attested for
/// the same head, chosen uniformly.
pub fn flip<R: Rng + ?Sized>(
    np: &NounPhrase,
    inv: &AttributeInventory,
    rng: &mut R,
) -> Result<NounPhrase> {
    if !np.is_modified() {
        return Err(Error::Unmodified(np.canonical()));
    }
    let attested = inv
        .modifiers(&np.head)
        .ok_or_else(|| Error::HeadUnknown(np.head.clone()))?;
    let alternatives: Vec<&Vec<String>> = attested.iter().filter(|m| **m != np.modifiers).collect();
    if alternatives.is_empty() {
        return Err(Error::NoAlternative(np.canonical()));
    }
    let pick = alternatives[rng.random_range(0..alternatives.len())];
    Ok(NounPhrase {
        modifiers: pick.clone(),
        head: np.head.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub image_id: String,
    pub phrase: NounPhrase,
    pub label: Label,
}

/// One positive pair per modified phrase in every description, each followed
/// by its flipped negative when one exists and does not collide with another
/// phrase attested for the same image.
pub fn make_training_pairs<R: Rng + ?Sized>(
    corpus: &Corpus,
    inv: &AttributeInventory,
    rng: &mut R,
) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for rec in corpus.records() {
        let phrases: Vec<Vec<NounPhrase>> = rec
            .descriptions
            .iter()
            .map(|d| {
                chunk(&d.tokens)
                    .into_iter()
                    .filter(NounPhrase::is_modified)
                    .collect()
            })
            .collect();
        let attested: HashSet<&NounPhrase> = phrases.iter().flatten().collect();
        for np in phrases.iter().flatten() {
            pairs.push(TrainingPair {
                image_id: rec.id.clone(),
                phrase: np.clone(),
                label: Label::Positive,
            });
            if let Ok(neg) = flip(np, inv, rng) {
                if !attested.contains(&neg) {
                    pairs.push(TrainingPair {
                        image_id: rec.id.clone(),
                        phrase: neg,
                        label: Label::Negative,
                    });
                }
            }
        }
    }
    pairs
}

pub const PAIRS_FORMAT: &str = "cfx-pairs-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatLine {
    format: String,
}

/// Writes a `{"format": "cfx-pairs-v1"}` line, then one pair per line.
pub fn write_pairs<W: Write>(pairs: &[TrainingPair], mut out: W) -> Result<()> {
    let header = FormatLine {
        format: PAIRS_FORMAT.to_string(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(serde_json::Error::io)?;
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    out.flush().map_err(serde_json::Error::io)?;
    Ok(())
}

/// Reads pairs; the format line is optional.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if pairs.is_empty() {
            if let Ok(h) = serde_json::from_str::<FormatLine>(&line) {
                if h.format != PAIRS_FORMAT {
                    return Err(Error::Format(format!(
                        "expected `{PAIRS_FORMAT}`, found `{}`",
                        h.format
                    )));
                }
                continue;
            }
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(pairs)
}
