//! The explanation pipeline: pick a counter-class, harvest its candidate
//! evidence, keep the candidate the evidence checker finds least present in
//! the image, then negate it into a sentence.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk, NounPhrase};
use crate::corpus::{tokenize, Corpus, ImageRecord};
use crate::critic::{CriticModel, GroundingBackend};
use crate::encoder::CheckerModel;
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::synthworld::OracleChecker;

/// Largest candidate pool handed to the evidence checker.
pub const DEFAULT_POOL_CAP: usize = 20;

/// Score reported for a randomly chosen candidate.
pub const BASELINE_SCORE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                let denom = (aa * bb).sqrt();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - ab / denom
                }
            }
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

pub fn nearest_counterclass(corpus: &Corpus, image_id: &str) -> Result<String> {
    nearest_counterclass_with(corpus, image_id, DistanceMetric::Euclidean)
}

/// Class of the closest record from a different class; equal distances go to
/// the smaller record id.
pub fn nearest_counterclass_with(
    corpus: &Corpus,
    image_id: &str,
    metric: DistanceMetric,
) -> Result<String> {
    if corpus.classes().len() < 2 {
        return Err(Error::SingleClass);
    }
    let query = corpus.record(image_id)?;
    let mut best: Option<(f64, &ImageRecord)> = None;
    for rec in corpus.records() {
        if rec.class_id == query.class_id {
            continue;
        }
        let dist = metric.distance(&query.features, &rec.features);
        let better = match best {
            None => true,
            Some((bd, br)) => dist < bd || (dist == bd && rec.id < br.id),
        };
        if better {
            best = Some((dist, rec));
        }
    }
    best.map(|(_, r)| r.class_id.clone())
        .ok_or(Error::SingleClass)
}

/// Where candidate phrases were harvested from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    GroundTruthDescriptions,
    ExternalExplanations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub phrase: NounPhrase,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub counter_class: String,
    /// By count descending, then canonical form ascending.
    pub candidates: Vec<Candidate>,
    pub source: CandidateSource,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &NounPhrase> {
        self.candidates.iter().map(|c| &c.phrase)
    }
}

/// Sentences standing in for a generative explanation model's output, keyed
/// by class id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalExplanations {
    by_class: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalLine {
    class_id: String,
    sentence: String,
}

impl ExternalExplanations {
    pub fn insert(&mut self, class_id: impl Into<String>, sentence: impl Into<String>) {
        self.by_class
            .entry(class_id.into())
            .or_default()
            .push(sentence.into());
    }

    pub fn sentences(&self, class_id: &str) -> &[String] {
        self.by_class.get(class_id).map_or(&[], Vec::as_slice)
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = ExternalExplanations::default();
        for (i, line) in reader.lines().enumerate() {
            let parse = |e: &dyn std::fmt::Display| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            let line = line.map_err(|e| parse(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ExternalLine = serde_json::from_str(&line).map_err(|e| parse(&e))?;
            out.insert(row.class_id, row.sentence);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(BufReader::new(file))
    }
}

/// Counts every modified noun phrase in the counter-class's sentences and
/// keeps the `cap` most frequent.
pub fn candidate_evidence(
    corpus: &Corpus,
    counter_class: &str,
    external: Option<&ExternalExplanations>,
    cap: usize,
) -> Result<CandidatePool> {
    if corpus.class_name(counter_class).is_none() {
        return Err(Error::NoSuchClass(counter_class.to_string()));
    }
    let mut counts: HashMap<NounPhrase, usize> = HashMap::new();
    let mut tally = |phrases: Vec<NounPhrase>| {
        for np in phrases.into_iter().filter(NounPhrase::is_modified) {
            *counts.entry(np).or_default() += 1;
        }
    };
    let source = match external {
        Some(ext) => {
            for sentence in ext.sentences(counter_class) {
                tally(chunk(&tokenize(sentence, corpus.lexicon())));
            }
            CandidateSource::ExternalExplanations
        }
        None => {
            for rec in corpus
                .records()
                .iter()
                .filter(|r| r.class_id == counter_class)
            {
                for desc in &rec.descriptions {
                    tally(chunk(&desc.tokens));
                }
            }
            CandidateSource::GroundTruthDescriptions
        }
    };
    let mut candidates: Vec<Candidate> = counts
        .into_iter()
        .map(|(phrase, count)| Candidate { phrase, count })
        .collect();
    candidates.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.phrase.cmp(&b.phrase)));
    candidates.truncate(cap);
    if candidates.is_empty() {
        return Err(Error::EmptyPool(counter_class.to_string()));
    }
    Ok(CandidatePool {
        counter_class: counter_class.to_string(),
        candidates,
        source,
    })
}

/// Scores a phrase against one image.
pub type PhraseScorer<'a> = dyn Fn(&NounPhrase) -> Result<f64> + 'a;

/// Chooses the evidence. Exactly one of `scorer` (argmin, ties to the
/// smaller canonical form) and `rng` (uniform choice, reported score
/// [`BASELINE_SCORE`]) must be supplied.
pub fn select_evidence(
    pool: &CandidatePool,
    scorer: Option<&PhraseScorer<'_>>,
    rng: Option<&mut dyn RngCore>,
) -> Result<(NounPhrase, f64)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool(pool.counter_class.clone()));
    }
    match (scorer, rng) {
        (Some(score), None) => {
            let mut best: Option<(&NounPhrase, f64)> = None;
            for np in pool.phrases() {
                let s = score(np)?;
                if s.is_nan() {
                    return Err(Error::Contract(format!("scorer returned NaN for `{np}`")));
                }
                let better = match best {
                    None => true,
                    Some((bp, bs)) => s < bs || (s == bs && np < bp),
                };
                if better {
                    best = Some((np, s));
                }
            }
            let (np, s) = best.expect("pool is non-empty");
            Ok((np.clone(), s))
        }
        (None, Some(rng)) => {
            let i = rng.random_range(0..pool.len());
            Ok((pool.candidates[i].phrase.clone(), BASELINE_SCORE))
        }
        (Some(_), Some(_)) => Err(Error::Contract(
            "supply either a scorer or a random generator, not both".into(),
        )),
        (None, None) => Err(Error::Contract(
            "a scorer or a random generator is required".into(),
        )),
    }
}

fn starts_with_vowel(word: &str) -> bool {
    word.chars()
        .next()
        .is_some_and(|c| matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u'))
}

/// A head ending in `s` but not `ss` is taken as plural.
pub fn is_plural(head: &str) -> bool {
    head.ends_with('s') && !head.ends_with("ss")
}

/// Indefinite article for a phrase, with its trailing space: `""`, `"a "`
/// or `"an "`.
pub fn article(np: &NounPhrase) -> &'static str {
    if is_plural(&np.head) {
        ""
    } else if starts_with_vowel(np.words().next().unwrap_or_default()) {
        "an "
    } else {
        "a "
    }
}

pub fn negate(np: &NounPhrase) -> String {
    format!("does not have {}{}", article(np), np)
}

pub fn compose(counter_class_name: &str, negated: &str) -> String {
    let a = if starts_with_vowel(counter_class_name) {
        "an"
    } else {
        "a"
    };
    format!("This is not {a} {counter_class_name} because it {negated}.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckerKind {
    Classifier,
    PhraseCritic,
    RandomBaseline,
    Oracle,
}

impl FromStr for CheckerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(CheckerKind::Classifier),
            "critic" | "phrase-critic" => Ok(CheckerKind::PhraseCritic),
            "baseline" | "random-baseline" => Ok(CheckerKind::RandomBaseline),
            "oracle" => Ok(CheckerKind::Oracle),
            other => Err(Error::Config(format!("unknown checker `{other}`"))),
        }
    }
}

/// An evidence checker ready to score phrases.
#[derive(Clone, Copy)]
pub enum Checker<'a> {
    Classifier(&'a CheckerModel),
    Critic {
        model: &'a CriticModel,
        backend: &'a dyn GroundingBackend,
    },
    /// Uniform choice; the generator for each image is seeded from
    /// `(seed, image id)`.
    Baseline {
        seed: u64,
    },
    Oracle(&'a OracleChecker),
}

impl Checker<'_> {
    pub fn kind(&self) -> CheckerKind {
        match self {
            Checker::Classifier(_) => CheckerKind::Classifier,
            Checker::Critic { .. } => CheckerKind::PhraseCritic,
            Checker::Baseline { .. } => CheckerKind::RandomBaseline,
            Checker::Oracle(_) => CheckerKind::Oracle,
        }
    }

    /// Presence score of `np` in `image`, or `None` for the baseline.
    pub fn score(&self, image: &ImageRecord, np: &NounPhrase) -> Option<Result<f64>> {
        match self {
            Checker::Classifier(m) => Some(m.fuse_score(&image.features, np)),
            Checker::Critic { model, backend } => {
                Some(model.score(*backend, &image.id, &image.features, np))
            }
            Checker::Baseline { .. } => None,
            Checker::Oracle(o) => Some(o.score(&image.id, np)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualExplanation {
    pub image_id: String,
    pub counter_class: String,
    pub selected: NounPhrase,
    pub selected_score: f64,
    pub negated_clause: String,
    pub sentence: String,
    pub checker_kind: CheckerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPhrase {
    pub phrase: NounPhrase,
    pub score: f64,
}

/// An explanation with the intermediate results that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationTrace {
    pub explanation: CounterfactualExplanation,
    pub pool: CandidatePool,
    /// Empty for the random baseline.
    pub scores: Vec<ScoredPhrase>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExplainOptions<'a> {
    pub pool_cap: usize,
    pub metric: DistanceMetric,
    pub external: Option<&'a ExternalExplanations>,
}

impl Default for ExplainOptions<'_> {
    fn default() -> Self {
        ExplainOptions {
            pool_cap: DEFAULT_POOL_CAP,
            metric: DistanceMetric::Euclidean,
            external: None,
        }
    }
}

/// Runs the pipeline for one image. Without `counter_class` the class of the
/// nearest different-class image is used. The image's own class is accepted
/// as a counter-class.
pub fn explain(
    corpus: &Corpus,
    image_id: &str,
    counter_class: Option<&str>,
    checker: &Checker<'_>,
    opts: &ExplainOptions<'_>,
) -> Result<ExplanationTrace> {
    let image = corpus.record(image_id)?;
    let counter_class = match counter_class {
        Some(c) => c.to_string(),
        None => nearest_counterclass_with(corpus, image_id, opts.metric)?,
    };
    let pool = candidate_evidence(corpus, &counter_class, opts.external, opts.pool_cap)?;

    let mut scores = Vec::new();
    let (selected, selected_score) = match checker {
        Checker::Baseline { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(*seed, &[image_id]));
            select_evidence(&pool, None, Some(&mut rng))?
        }
        _ => {
            for np in pool.phrases() {
                let score = checker.score(image, np).expect("scoring checker")?;
                scores.push(ScoredPhrase {
                    phrase: np.clone(),
                    score,
                });
            }
            let lookup: HashMap<&NounPhrase, f64> =
                scores.iter().map(|s| (&s.phrase, s.score)).collect();
            let scorer = |np: &NounPhrase| Ok(lookup[np]);
            select_evidence(&pool, Some(&scorer), None)?
        }
    };

    let negated_clause = negate(&selected);
    let class_name = corpus
        .class_name(&counter_class)
        .ok_or_else(|| Error::NoSuchClass(counter_class.clone()))?;
    let sentence = compose(class_name, &negated_clause);
    Ok(ExplanationTrace {
        explanation: CounterfactualExplanation {
            image_id: image_id.to_string(),
            counter_class,
            selected,
            selected_score,
            negated_clause,
            sentence,
            checker_kind: checker.kind(),
        },
        pool,
        scores,
    })
}
