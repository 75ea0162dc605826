//! Rule-based noun-phrase chunking over tagged tokens.
//!
//! A chunk is the maximal match of `DET? ADJ* NOUN`, scanned left to right
//! without backtracking. The determiner is part of the span but not of the
//! phrase.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{PosTag, Token};
use crate::error::Error;

/// Adjective modifiers plus a head noun.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NounPhrase {
    pub modifiers: Vec<String>,
    pub head: String,
}

impl NounPhrase {
    pub fn new<I, S>(modifiers: I, head: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        NounPhrase {
            modifiers: modifiers.into_iter().map(Into::into).collect(),
            head: head.into(),
        }
    }

    /// Splits a canonical form: the last word is the head.
    pub fn parse(canonical: &str) -> Option<Self> {
        let mut words: Vec<String> = canonical
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let head = words.pop()?;
        Some(NounPhrase {
            modifiers: words,
            head,
        })
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    pub fn is_modified(&self) -> bool {
        !self.modifiers.is_empty()
    }

    /// Modifiers joined by single spaces.
    pub fn modifier_text(&self) -> String {
        self.modifiers.join(" ")
    }

    /// Surface words in canonical order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.modifiers
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.head.as_str()))
    }
}

impl fmt::Display for NounPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.modifiers {
            write!(f, "{m} ")?;
        }
        f.write_str(&self.head)
    }
}

impl FromStr for NounPhrase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NounPhrase::parse(s).ok_or_else(|| Error::Contract("empty noun phrase".into()))
    }
}

impl Ord for NounPhrase {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical().cmp(&other.canonical())
    }
}

impl PartialOrd for NounPhrase {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for NounPhrase {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NounPhrase {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        NounPhrase::parse(&s).ok_or_else(|| serde::de::Error::custom("empty noun phrase"))
    }
}

/// A chunk and the token span `[start, end)` it covers, determiner included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub phrase: NounPhrase,
}

pub fn chunk_spans(tokens: &[Token]) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut j = i;
        if tokens[j].pos == PosTag::Det {
            j += 1;
        }
        let adj_start = j;
        while j < tokens.len() && tokens[j].pos == PosTag::Adj {
            j += 1;
        }
        if j < tokens.len() && tokens[j].pos == PosTag::Noun {
            let modifiers = tokens[adj_start..j]
                .iter()
                .map(|t| t.surface.clone())
                .collect();
            out.push(Chunk {
                start: i,
                end: j + 1,
                phrase: NounPhrase {
                    modifiers,
                    head: tokens[j].surface.clone(),
                },
            });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

pub fn chunk(tokens: &[Token]) -> Vec<NounPhrase> {
    chunk_spans(tokens).into_iter().map(|c| c.phrase).collect()
}

/// How a phrase is matched against a description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// The phrase equals one of the description's chunks.
    #[default]
    ExactNp,
    /// The phrase's words occur contiguously in the description.
    Substring,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact-np" => Ok(MatchMode::ExactNp),
            "substring" => Ok(MatchMode::Substring),
            other => Err(Error::Config(format!("unknown match mode `{other}`"))),
        }
    }
}

pub fn contains_phrase(tokens: &[Token], np: &NounPhrase) -> bool {
    contains_phrase_with(tokens, np, MatchMode::ExactNp)
}

pub fn contains_phrase_with(tokens: &[Token], np: &NounPhrase, mode: MatchMode) -> bool {
    match mode {
        MatchMode::ExactNp => chunk_spans(tokens).iter().any(|c| c.phrase == *np),
        MatchMode::Substring => {
            let words: Vec<&str> = np.words().collect();
            tokens
                .windows(words.len())
                .any(|w| w.iter().zip(&words).all(|(t, s)| t.surface == *s))
        }
    }
}
