//! Images, class names, descriptions and the JSON-Lines corpus format.
//!
//! A corpus file starts with a header line
//! `{"format": "cfx-corpus-v1", "classes": {...}, "feature_dim": d, "lexicon": {...} | null}`
//! followed by one record per line. A `null` lexicon selects the shipped bird
//! vocabulary. Hand-written headers may omit `format`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "cfx-corpus-v1";

const DEFAULT_LEXICON: &str = include_str!("../assets/lexicon.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Prep,
    Conj,
    Other,
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PosTag::Det => "DET",
            PosTag::Adj => "ADJ",
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Prep => "PREP",
            PosTag::Conj => "CONJ",
            PosTag::Other => "OTHER",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub pos: PosTag,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: PosTag) -> Self {
        Token {
            surface: surface.into(),
            pos,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.surface, self.pos)
    }
}

/// Surface form to part-of-speech map. Keys are lowercase; unknown words are
/// tagged [`PosTag::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    entries: BTreeMap<String, PosTag>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped bird-description vocabulary.
    pub fn bird() -> &'static Lexicon {
        static BIRD: OnceLock<Lexicon> = OnceLock::new();
        BIRD.get_or_init(|| {
            let entries: BTreeMap<String, PosTag> =
                serde_json::from_str(DEFAULT_LEXICON).expect("shipped lexicon is valid JSON");
            Lexicon::from_entries(entries)
        })
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, PosTag)>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::new();
        for (surface, pos) in entries {
            lex.insert(surface.as_ref(), pos);
        }
        lex
    }

    pub fn insert(&mut self, surface: &str, pos: PosTag) {
        self.entries.insert(surface.to_lowercase(), pos);
    }

    pub fn tag(&self, surface: &str) -> PosTag {
        match self.entries.get(surface) {
            Some(pos) => *pos,
            None => self
                .entries
                .get(&surface.to_lowercase())
                .copied()
                .unwrap_or(PosTag::Other),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, PosTag)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Lowercases, splits on whitespace, trims non-alphanumeric characters off
/// both ends of each piece and tags what remains.
pub fn tokenize(raw: &str, lexicon: &Lexicon) -> Vec<Token> {
    raw.split_whitespace()
        .filter_map(|piece| {
            let word = piece
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            if word.is_empty() {
                return None;
            }
            let pos = lexicon.tag(&word);
            Some(Token { surface: word, pos })
        })
        .collect()
}

/// Joins token surfaces with single spaces.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Description {
    pub image_id: String,
    pub raw: String,
    pub tokens: Vec<Token>,
}

impl Description {
    pub fn new(image_id: impl Into<String>, raw: impl Into<String>, lexicon: &Lexicon) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw, lexicon);
        Description {
            image_id: image_id.into(),
            raw,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub class_id: String,
    pub features: Vec<f64>,
    pub descriptions: Vec<Description>,
    /// Head noun to modifier string; only synthetic corpora carry it.
    pub oracle_attributes: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    records: Vec<ImageRecord>,
    classes: BTreeMap<String, String>,
    lexicon: Lexicon,
    feature_dim: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.classes == other.classes
            && self.lexicon == other.lexicon
            && self.feature_dim == other.feature_dim
    }
}

impl Corpus {
    /// Validates and assembles a corpus.
    pub fn new(
        classes: BTreeMap<String, String>,
        lexicon: Lexicon,
        feature_dim: usize,
        records: Vec<ImageRecord>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let synthetic = records.first().map(|r| r.oracle_attributes.is_some());
        for (i, rec) in records.iter().enumerate() {
            if rec.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    id: rec.id.clone(),
                    expected: feature_dim,
                    found: rec.features.len(),
                });
            }
            if !classes.contains_key(&rec.class_id) {
                return Err(Error::UnknownClass {
                    id: rec.id.clone(),
                    class_id: rec.class_id.clone(),
                });
            }
            if rec.descriptions.is_empty() {
                return Err(Error::NoDescriptions(rec.id.clone()));
            }
            if Some(rec.oracle_attributes.is_some()) != synthetic {
                return Err(Error::Contract(format!(
                    "record `{}`: oracle attributes must be present on all records or none",
                    rec.id
                )));
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
        }
        Ok(Corpus {
            records,
            classes,
            lexicon,
            feature_dim,
            index,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn classes(&self) -> &BTreeMap<String, String> {
        &self.classes
    }

    pub fn class_name(&self, class_id: &str) -> Option<&str> {
        self.classes.get(class_id).map(String::as_str)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_synthetic(&self) -> bool {
        self.records
            .first()
            .is_some_and(|r| r.oracle_attributes.is_some())
    }

    pub fn record(&self, id: &str) -> Result<&ImageRecord> {
        self.index
            .get(id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Parses a corpus from JSON-Lines text.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| parse_err(1, e))?;
                serde_json::from_str(&line).map_err(|e| parse_err(1, e))?
            }
            None => return Err(parse_err(1, "missing header line")),
        };
        if let Some(f) = header.format.as_deref().filter(|f| *f != CORPUS_FORMAT) {
            return Err(Error::Format(format!(
                "expected format `{CORPUS_FORMAT}`, found `{f}`"
            )));
        }
        let lexicon = header
            .lexicon
            .map(Lexicon::from_entries)
            .unwrap_or_else(|| Lexicon::bird().clone());

        let mut records = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| parse_err(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
            if row.features.len() != header.feature_dim {
                return Err(Error::DimensionMismatch {
                    id: row.id,
                    expected: header.feature_dim,
                    found: row.features.len(),
                });
            }
            let descriptions = row
                .descriptions
                .into_iter()
                .map(|raw| Description::new(row.id.clone(), raw, &lexicon))
                .collect();
            records.push(ImageRecord {
                id: row.id,
                class_id: row.class_id,
                features: row.features,
                descriptions,
                oracle_attributes: row.oracle_attributes,
            });
        }
        Corpus::new(header.classes, lexicon, header.feature_dim, records)
    }

    /// Writes the corpus as JSON-Lines text (LF line endings).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lexicon = (self.lexicon != *Lexicon::bird()).then_some(&self.lexicon);
        let header = HeaderRef {
            format: CORPUS_FORMAT,
            classes: &self.classes,
            feature_dim: self.feature_dim,
            lexicon,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for rec in &self.records {
            let row = RecordRef {
                id: &rec.id,
                class_id: &rec.class_id,
                features: &rec.features,
                descriptions: rec.descriptions.iter().map(|d| d.raw.as_str()).collect(),
                oracle_attributes: rec.oracle_attributes.as_ref(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

fn parse_err(line: usize, e: impl fmt::Display) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(default)]
    format: Option<String>,
    classes: BTreeMap<String, String>,
    feature_dim: usize,
    #[serde(default)]
    lexicon: Option<BTreeMap<String, PosTag>>,
}

#[derive(Serialize)]
struct HeaderRef<'a> {
    format: &'static str,
    classes: &'a BTreeMap<String, String>,
    feature_dim: usize,
    lexicon: Option<&'a Lexicon>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    class_id: String,
    features: Vec<f64>,
    descriptions: Vec<String>,
    #[serde(default)]
    oracle_attributes: Option<BTreeMap<String, String>>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: &'a str,
    class_id: &'a str,
    features: &'a [f64],
    descriptions: Vec<&'a str>,
    oracle_attributes: Option<&'a BTreeMap<String, String>>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_jsonl(BufReader::new(file))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    corpus
        .write_jsonl(BufWriter::new(file))
        .map_err(|e| Error::io(path, e))
}
