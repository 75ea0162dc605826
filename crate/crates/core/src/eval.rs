//! Explanation quality metrics.
//!
//! *Phrase error* is the fraction of explanations whose "missing" phrase is
//! in fact mentioned by one of the image's descriptions. *Accuracy with
//! counterfactual text* measures how often a bag-of-words sentence classifier
//! still recognises the image's class after the chosen phrase is appended to
//! its description; good counterfactual evidence belongs to another class and
//! should lower it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::{contains_phrase_with, MatchMode, NounPhrase};
use crate::corpus::{tokenize, Corpus, Token};
use crate::encoder::{read_text, write_text, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::explainer::{explain, Checker, CheckerKind, CounterfactualExplanation, ExplainOptions};
use crate::math::fill_uniform;

pub const SENTCLF_FORMAT: &str = "cfx-sentclf-v1";
pub const REPORT_FORMAT: &str = "cfx-report-v1";

/// Fraction of explanations whose selected phrase occurs in a ground-truth
/// description of their image.
pub fn phrase_error(
    corpus: &Corpus,
    explanations: &[CounterfactualExplanation],
    mode: MatchMode,
) -> Result<f64> {
    if explanations.is_empty() {
        return Err(Error::EmptyExplanations);
    }
    let mut errors = 0usize;
    for e in explanations {
        if is_phrase_error(corpus, &e.image_id, &e.selected, mode)? {
            errors += 1;
        }
    }
    Ok(errors as f64 / explanations.len() as f64)
}

pub fn is_phrase_error(
    corpus: &Corpus,
    image_id: &str,
    np: &NounPhrase,
    mode: MatchMode,
) -> Result<bool> {
    let rec = corpus.record(image_id)?;
    Ok(rec
        .descriptions
        .iter()
        .any(|d| contains_phrase_with(&d.tokens, np, mode)))
}

/// Multinomial logistic regression over word counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceClassifier {
    classes: Vec<String>,
    vocab: BTreeMap<String, usize>,
    /// `C × V`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SentenceClassifier {
    pub fn zeros(classes: Vec<String>, words: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = words.into_iter().collect();
        let vocab: BTreeMap<String, usize> =
            set.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        let c = classes.len();
        let v = vocab.len();
        SentenceClassifier {
            classes,
            vocab,
            weights: vec![0.0; c * v],
            bias: vec![0.0; c],
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Sparse word counts; out-of-vocabulary words are dropped.
    fn bag(&self, tokens: &[Token]) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.vocab.get(&t.surface) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    fn logits(&self, bag: &[(usize, f64)]) -> Vec<f64> {
        let v = self.vocab.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| {
                b + bag
                    .iter()
                    .map(|&(j, x)| self.weights[c * v + j] * x)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, tokens: &[Token]) -> Vec<f64> {
        softmax(&self.logits(&self.bag(tokens)))
    }

    /// Highest-scoring class; ties go to the earlier class id.
    pub fn predict_tokens(&self, tokens: &[Token]) -> &str {
        let logits = self.logits(&self.bag(tokens));
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        &self.classes[best]
    }

    pub fn predict(&self, corpus: &Corpus, text: &str) -> &str {
        self.predict_tokens(&tokenize(text, corpus.lexicon()))
    }

    pub fn to_json(&self) -> String {
        let file = SentClfFile {
            format: SENTCLF_FORMAT.to_string(),
            classes: self.classes.clone(),
            vocab: self.vocab.clone(),
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SentClfFile = serde_json::from_str(text)?;
        if file.format != SENTCLF_FORMAT {
            return Err(Error::Format(format!(
                "expected `{SENTCLF_FORMAT}`, found `{}`",
                file.format
            )));
        }
        let c = file.classes.len();
        let v = file.vocab.len();
        let indices: BTreeSet<usize> = file.vocab.values().copied().collect();
        if indices.len() != v || indices.iter().next_back().is_some_and(|&i| i >= v) {
            return Err(Error::Format("vocabulary indices must be 0..V".into()));
        }
        if c == 0 || file.weights.len() != c * v || file.bias.len() != c {
            return Err(Error::Format(
                "weight shapes do not match classes × vocab".into(),
            ));
        }
        Ok(SentenceClassifier {
            classes: file.classes,
            vocab: file.vocab,
            weights: file.weights,
            bias: file.bias,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentClfFile {
    format: String,
    classes: Vec<String>,
    vocab: BTreeMap<String, usize>,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Trains on every description, labelled with its image's class, by seeded
/// mini-batch gradient descent on softmax cross-entropy.
pub fn train_sentence_classifier(
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<Trained<SentenceClassifier>> {
    train_sentence_classifier_with_progress(corpus, cfg, |_, _| {})
}

pub fn train_sentence_classifier_with_progress(
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Trained<SentenceClassifier>> {
    cfg.validate()?;
    let classes: Vec<String> = corpus
        .records()
        .iter()
        .map(|r| r.class_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let words = corpus
        .records()
        .iter()
        .flat_map(|r| &r.descriptions)
        .flat_map(|d| d.tokens.iter().map(|t| t.surface.clone()));
    let mut model = SentenceClassifier::zeros(classes, words);
    let class_index: BTreeMap<&str, usize> = model
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let examples: Vec<(Vec<(usize, f64)>, usize)> = corpus
        .records()
        .iter()
        .flat_map(|r| {
            let label = class_index[r.class_id.as_str()];
            r.descriptions.iter().map(move |d| (&d.tokens, label))
        })
        .map(|(tokens, label)| (model.bag(tokens), label))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fill_uniform(&mut rng, &mut model.weights, cfg.init_scale);
    fill_uniform(&mut rng, &mut model.bias, cfg.init_scale);

    let loss_of = |m: &SentenceClassifier, bag: &[(usize, f64)], label: usize| {
        let logits = m.logits(bag);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    };
    let initial_loss = examples
        .iter()
        .map(|(b, l)| loss_of(&model, b, *l))
        .sum::<f64>()
        / examples.len() as f64;

    let c = model.classes.len();
    let v = model.vocab.len();
    let mut gw = vec![0.0; c * v];
    let mut gb = vec![0.0; c];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (bag, label) = &examples[i];
                total += loss_of(&model, bag, *label);
                let p = softmax(&model.logits(bag));
                for (ci, pc) in p.iter().enumerate() {
                    let d = scale * (pc - f64::from(u8::from(ci == *label)));
                    gb[ci] += d;
                    for &(j, x) in bag {
                        gw[ci * v + j] += d * x;
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g;
            }
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        progress(epoch, mean);
        loss_curve.push(mean);
    }
    Ok(Trained {
        model,
        initial_loss,
        loss_curve,
    })
}

/// Fraction of descriptions classified as their image's class.
pub fn sentence_accuracy(clf: &SentenceClassifier, corpus: &Corpus) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in corpus.records() {
        for d in &r.descriptions {
            total += 1;
            if clf.predict_tokens(&d.tokens) == r.class_id {
                correct += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// The image's first description, optionally extended with `" and <phrase>"`.
pub fn cf_text(corpus: &Corpus, image_id: &str, appended: &str) -> Result<String> {
    let rec = corpus.record(image_id)?;
    let base = &rec.descriptions[0].raw;
    Ok(if appended.trim().is_empty() {
        base.clone()
    } else {
        format!("{base} and {appended}")
    })
}

/// Classifier predictions for one image without and with appended text.
pub fn predictions_with_text(
    clf: &SentenceClassifier,
    corpus: &Corpus,
    image_id: &str,
    appended: &str,
) -> Result<(String, String)> {
    let without = clf
        .predict(corpus, &cf_text(corpus, image_id, "")?)
        .to_string();
    let with = clf
        .predict(corpus, &cf_text(corpus, image_id, appended)?)
        .to_string();
    Ok((without, with))
}

/// Accuracies on each image's first description, before and after the
/// selected phrase is appended as a positive clause.
pub fn accuracy_with_cf_text(
    clf: &SentenceClassifier,
    corpus: &Corpus,
    explanations: &[CounterfactualExplanation],
) -> Result<(f64, f64)> {
    let appended: Vec<(&str, String)> = explanations
        .iter()
        .map(|e| (e.image_id.as_str(), e.selected.canonical()))
        .collect();
    accuracy_with_appended(clf, corpus, &appended)
}

/// Like [`accuracy_with_cf_text`] with arbitrary appended text per image.
pub fn accuracy_with_appended(
    clf: &SentenceClassifier,
    corpus: &Corpus,
    appended: &[(&str, String)],
) -> Result<(f64, f64)> {
    if appended.is_empty() {
        return Err(Error::EmptyExplanations);
    }
    let mut ok_without = 0usize;
    let mut ok_with = 0usize;
    for (image_id, text) in appended {
        let truth = &corpus.record(image_id)?.class_id;
        let (without, with) = predictions_with_text(clf, corpus, image_id, text)?;
        ok_without += usize::from(without == *truth);
        ok_with += usize::from(with == *truth);
    }
    let n = appended.len() as f64;
    Ok((ok_without as f64 / n, ok_with as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageResult {
    pub image_id: String,
    pub counter_class: String,
    pub phrase: NounPhrase,
    pub is_error: bool,
    pub pred_without: String,
    pub pred_with: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format: String,
    pub n_images: usize,
    pub phrase_error: f64,
    pub acc_without_cf: f64,
    pub acc_with_cf: f64,
    pub per_image: Vec<ImageResult>,
    pub checker_kind: CheckerKind,
    pub seed: u64,
    pub match_mode: MatchMode,
}

/// Aggregates as means over rows, summed in row order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub phrase_error: f64,
    pub acc_without_cf: f64,
    pub acc_with_cf: f64,
}

impl EvalReport {
    pub fn recompute(
        rows: &[ImageResult],
        corpus_classes: impl Fn(&str) -> Option<String>,
    ) -> Aggregates {
        let n = rows.len() as f64;
        let mut err = 0.0;
        let mut without = 0.0;
        let mut with = 0.0;
        for r in rows {
            let truth = corpus_classes(&r.image_id);
            err += f64::from(u8::from(r.is_error));
            without += f64::from(u8::from(truth.as_deref() == Some(r.pred_without.as_str())));
            with += f64::from(u8::from(truth.as_deref() == Some(r.pred_with.as_str())));
        }
        Aggregates {
            phrase_error: err / n,
            acc_without_cf: without / n,
            acc_with_cf: with / n,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)?;
        if report.format != REPORT_FORMAT {
            return Err(Error::Format(format!(
                "expected `{REPORT_FORMAT}`, found `{}`",
                report.format
            )));
        }
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub seed: u64,
    pub match_mode: MatchMode,
    /// Worker threads; results are merged in image-id order.
    pub jobs: usize,
    pub explain: ExplainOptions<'a>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            seed: 17,
            match_mode: MatchMode::ExactNp,
            jobs: 1,
            explain: ExplainOptions::default(),
        }
    }
}

fn evaluate_image(
    corpus: &Corpus,
    image_id: &str,
    checker: &Checker<'_>,
    clf: &SentenceClassifier,
    opts: &EvalOptions<'_>,
) -> Result<ImageResult> {
    let trace = explain(corpus, image_id, None, checker, &opts.explain)?;
    let e = trace.explanation;
    let is_error = is_phrase_error(corpus, image_id, &e.selected, opts.match_mode)?;
    let (pred_without, pred_with) =
        predictions_with_text(clf, corpus, image_id, &e.selected.canonical())?;
    Ok(ImageResult {
        image_id: e.image_id,
        counter_class: e.counter_class,
        phrase: e.selected,
        is_error,
        pred_without,
        pred_with,
    })
}

/// Explains every image against its nearest counter-class and scores the
/// explanations with both metrics.
pub fn run_eval(
    corpus: &Corpus,
    checker: &Checker<'_>,
    clf: &SentenceClassifier,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let mut ids: Vec<&str> = corpus.records().iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::EmptyExplanations);
    }
    let jobs = opts.jobs.max(1).min(ids.len());
    let rows: Vec<ImageResult> = if jobs == 1 {
        ids.iter()
            .map(|id| evaluate_image(corpus, id, checker, clf, opts))
            .collect::<Result<_>>()?
    } else {
        let chunk = ids.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<ImageResult>>> = std::thread::scope(|s| {
            let handles: Vec<_> = ids
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|id| evaluate_image(corpus, id, checker, clf, opts))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut rows = Vec::with_capacity(ids.len());
        for part in parts {
            rows.extend(part?);
        }
        rows
    };
    let agg = EvalReport::recompute(&rows, |id| {
        corpus.record(id).ok().map(|r| r.class_id.clone())
    });
    Ok(EvalReport {
        format: REPORT_FORMAT.to_string(),
        n_images: rows.len(),
        phrase_error: agg.phrase_error,
        acc_without_cf: agg.acc_without_cf,
        acc_with_cf: agg.acc_with_cf,
        per_image: rows,
        checker_kind: checker.kind(),
        seed: opts.seed,
        match_mode: opts.match_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Description, ImageRecord, Lexicon};

    fn np(s: &str) -> NounPhrase {
        NounPhrase::parse(s).unwrap()
    }

    fn corpus(rows: &[(&str, &str, &[&str])]) -> Corpus {
        let lex = Lexicon::bird();
        let records = rows
            .iter()
            .map(|(id, class, descs)| ImageRecord {
                id: id.to_string(),
                class_id: class.to_string(),
                features: vec![0.0],
                descriptions: descs
                    .iter()
                    .map(|d| Description::new(*id, *d, lex))
                    .collect(),
                oracle_attributes: None,
            })
            .collect();
        Corpus::new(
            BTreeMap::from([
                ("a".to_string(), "Alpha".to_string()),
                ("b".to_string(), "Beta".to_string()),
            ]),
            lex.clone(),
            1,
            records,
        )
        .unwrap()
    }

    fn expl(image: &str, phrase: &str) -> CounterfactualExplanation {
        CounterfactualExplanation {
            image_id: image.into(),
            counter_class: "b".into(),
            selected: np(phrase),
            selected_score: 0.0,
            negated_clause: String::new(),
            sentence: String::new(),
            checker_kind: CheckerKind::Oracle,
        }
    }

    #[test]
    fn present_phrase_counts_as_error() {
        let c = corpus(&[("x", "a", &["this bird has a yellow nape"])]);
        assert_eq!(
            phrase_error(&c, &[expl("x", "yellow nape")], MatchMode::ExactNp).unwrap(),
            1.0
        );
        assert_eq!(
            phrase_error(&c, &[expl("x", "black nape")], MatchMode::ExactNp).unwrap(),
            0.0
        );
        assert!(matches!(
            phrase_error(&c, &[], MatchMode::ExactNp),
            Err(Error::EmptyExplanations)
        ));
    }

    fn disjoint() -> Corpus {
        corpus(&[
            ("x1", "a", &["a red crown", "a red eye"]),
            ("x2", "a", &["a red crown and a long tail"]),
            ("y1", "b", &["a blue wing", "a grey back"]),
            ("y2", "b", &["a blue wing and a short bill"]),
        ])
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn disjoint_vocabularies_are_separable() {
        let c = disjoint();
        let trained = train_sentence_classifier(&c, &cfg()).unwrap();
        assert!(trained.final_loss() < trained.initial_loss);
        assert_eq!(sentence_accuracy(&trained.model, &c), 1.0);
    }

    #[test]
    fn sentence_classifier_is_deterministic() {
        let c = disjoint();
        let a = train_sentence_classifier(&c, &cfg()).unwrap().model;
        let b = train_sentence_classifier(&c, &cfg()).unwrap().model;
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(SentenceClassifier::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn single_class_is_rejected() {
        let c = corpus(&[("x", "a", &["a red eye"])]);
        assert!(matches!(
            train_sentence_classifier(&c, &cfg()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn empty_append_changes_nothing() {
        let c = disjoint();
        let clf = train_sentence_classifier(&c, &cfg()).unwrap().model;
        let appended: Vec<(&str, String)> = ["x1", "x2", "y1", "y2"]
            .iter()
            .map(|i| (*i, String::new()))
            .collect();
        let (without, with) = accuracy_with_appended(&clf, &c, &appended).unwrap();
        assert_eq!(without, with);
    }

    #[test]
    fn prediction_ties_go_to_first_class() {
        let clf = SentenceClassifier::zeros(vec!["a".into(), "b".into()], ["red".to_string()]);
        let c = disjoint();
        assert_eq!(clf.predict(&c, "red"), "a");
    }

    #[test]
    fn report_round_trip() {
        let report = EvalReport {
            format: REPORT_FORMAT.into(),
            n_images: 1,
            phrase_error: 0.0,
            acc_without_cf: 1.0,
            acc_with_cf: 0.0,
            per_image: vec![ImageResult {
                image_id: "x".into(),
                counter_class: "b".into(),
                phrase: np("blue wing"),
                is_error: false,
                pred_without: "a".into(),
                pred_with: "b".into(),
            }],
            checker_kind: CheckerKind::Classifier,
            seed: 5,
            match_mode: MatchMode::ExactNp,
        };
        let back = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
