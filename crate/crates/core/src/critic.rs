//! Phrase critic: calibrates the uncalibrated output of a phrase-grounding
//! model into the probability that a phrase is present in an image.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chunker::NounPhrase;
use crate::corpus::Corpus;
use crate::encoder::{read_text, resolve_pairs, write_text, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, derive_seed, dot, fill_uniform, sigmoid};
use crate::negmine::TrainingPair;

pub const CRITIC_FORMAT: &str = "cfx-critic-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub raw_score: f64,
    pub region_feature: Vec<f64>,
}

/// Localizes a phrase in an image. Implementations must be pure: the same
/// query always yields the same result.
pub trait GroundingBackend: Send + Sync {
    /// Length of every returned `region_feature`.
    fn region_dim(&self) -> usize;

    fn ground(&self, image_id: &str, features: &[f64], np: &NounPhrase) -> Result<GroundingResult>;
}

/// Grounding model stand-in for synthetic corpora.
///
/// `raw_score = 2·match − 1 + noise`, where `match` says whether the phrase
/// is one of the image's assigned attributes. The region feature is the
/// image's one-hot adjective indicator for the phrase's head, zero-padded to
/// the longest adjective list, plus noise. Noise is drawn from a generator
/// seeded by `(seed, image id, phrase)`.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    noise_sigma: f64,
    seed: u64,
    adjectives: BTreeMap<String, Vec<String>>,
    oracle: HashMap<String, BTreeMap<String, String>>,
    region_dim: usize,
}

const MATCH_GAIN: f64 = 2.0;
const MATCH_OFFSET: f64 = -1.0;

pub fn synthetic_backend(corpus: &Corpus, noise_sigma: f64, seed: u64) -> Result<SyntheticBackend> {
    if !corpus.is_synthetic() {
        return Err(Error::NotSynthetic);
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Config(
            "noise_sigma must be finite and non-negative".into(),
        ));
    }
    let mut adjectives: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut oracle = HashMap::with_capacity(corpus.len());
    for rec in corpus.records() {
        let attrs = rec.oracle_attributes.as_ref().ok_or(Error::NotSynthetic)?;
        for (head, adj) in attrs {
            adjectives
                .entry(head.clone())
                .or_default()
                .push(adj.clone());
        }
        oracle.insert(rec.id.clone(), attrs.clone());
    }
    for list in adjectives.values_mut() {
        list.sort();
        list.dedup();
    }
    let region_dim = adjectives.values().map(Vec::len).max().unwrap_or(0);
    Ok(SyntheticBackend {
        noise_sigma,
        seed,
        adjectives,
        oracle,
        region_dim,
    })
}

impl GroundingBackend for SyntheticBackend {
    fn region_dim(&self) -> usize {
        self.region_dim
    }

    fn ground(
        &self,
        image_id: &str,
        _features: &[f64],
        np: &NounPhrase,
    ) -> Result<GroundingResult> {
        let attrs = self
            .oracle
            .get(image_id)
            .ok_or_else(|| Error::Grounding(format!("unknown image `{image_id}`")))?;
        let own = attrs.get(&np.head);
        let matched = own.is_some_and(|adj| *adj == np.modifier_text());
        let mut raw_score = MATCH_GAIN * f64::from(u8::from(matched)) + MATCH_OFFSET;
        let mut region_feature = vec![0.0; self.region_dim];
        if let (Some(adj), Some(list)) = (own, self.adjectives.get(&np.head)) {
            if let Ok(i) = list.binary_search(adj) {
                region_feature[i] = 1.0;
            }
        }
        if self.noise_sigma > 0.0 {
            let canonical = np.canonical();
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[image_id, &canonical]));
            let mut draw = || -> f64 {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.noise_sigma * z
            };
            raw_score += draw();
            for r in &mut region_feature {
                *r += draw();
            }
        }
        Ok(GroundingResult {
            raw_score,
            region_feature,
        })
    }
}

/// Replays grounding results computed elsewhere, keyed by image id and
/// canonical phrase.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: HashMap<(String, String), GroundingResult>,
    region_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundingLine {
    image_id: String,
    phrase: String,
    raw_score: f64,
    region_feature: Vec<f64>,
}

impl ReplayBackend {
    pub fn insert(
        &mut self,
        image_id: &str,
        np: &NounPhrase,
        result: GroundingResult,
    ) -> Result<()> {
        if self.entries.is_empty() {
            self.region_dim = result.region_feature.len();
        } else if result.region_feature.len() != self.region_dim {
            return Err(Error::Grounding(format!(
                "region feature of `{image_id}`/`{np}` has {} values, expected {}",
                result.region_feature.len(),
                self.region_dim
            )));
        }
        self.entries
            .insert((image_id.to_string(), np.canonical()), result);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = ReplayBackend::default();
        for (i, line) in reader.lines().enumerate() {
            let parse = |e: &dyn std::fmt::Display| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            let line = line.map_err(|e| parse(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: GroundingLine = serde_json::from_str(&line).map_err(|e| parse(&e))?;
            let np = NounPhrase::parse(&row.phrase).ok_or_else(|| parse(&"empty phrase"))?;
            out.insert(
                &row.image_id,
                &np,
                GroundingResult {
                    raw_score: row.raw_score,
                    region_feature: row.region_feature,
                },
            )
            .map_err(|e| parse(&e))?;
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(BufReader::new(file))
    }
}

impl GroundingBackend for ReplayBackend {
    fn region_dim(&self) -> usize {
        self.region_dim
    }

    fn ground(
        &self,
        image_id: &str,
        _features: &[f64],
        np: &NounPhrase,
    ) -> Result<GroundingResult> {
        self.entries
            .get(&(image_id.to_string(), np.canonical()))
            .cloned()
            .ok_or_else(|| Error::Grounding(format!("no grounding for `{image_id}` / `{np}`")))
    }
}

/// Writes grounding results in the replay format.
pub fn write_grounding<W: Write>(
    rows: impl IntoIterator<Item = (String, NounPhrase, GroundingResult)>,
    mut out: W,
) -> Result<()> {
    for (image_id, np, r) in rows {
        let line = GroundingLine {
            image_id,
            phrase: np.canonical(),
            raw_score: r.raw_score,
            region_feature: r.region_feature,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    out.flush().map_err(serde_json::Error::io)?;
    Ok(())
}

/// Logistic model over `[raw_score, region_feature, mean word embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticModel {
    vocab: BTreeMap<String, usize>,
    g: usize,
    m: usize,
    pub w_raw: f64,
    pub w_region: Vec<f64>,
    /// `V × m` word embedding table; row 0 is out-of-vocabulary.
    pub table: Vec<f64>,
    pub w_text: Vec<f64>,
    pub bias: f64,
}

impl CriticModel {
    pub fn zeros<I, S>(words: I, g: usize, m: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = words.into_iter().map(Into::into).collect();
        sorted.sort();
        sorted.dedup();
        let vocab: BTreeMap<String, usize> = sorted
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w, i + 1))
            .collect();
        let v = vocab.len() + 1;
        CriticModel {
            vocab,
            g,
            m,
            w_raw: 0.0,
            w_region: vec![0.0; g],
            table: vec![0.0; v * m],
            w_text: vec![0.0; m],
            bias: 0.0,
        }
    }

    pub fn region_dim(&self) -> usize {
        self.g
    }

    pub fn embed_dim(&self) -> usize {
        self.m
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    fn params_mut(&mut self) -> [&mut [f64]; 5] {
        [
            std::slice::from_mut(&mut self.w_raw),
            &mut self.w_region,
            &mut self.table,
            &mut self.w_text,
            std::slice::from_mut(&mut self.bias),
        ]
    }

    fn token_ids(&self, np: &NounPhrase) -> Vec<usize> {
        np.words()
            .map(|w| self.vocab.get(w).copied().unwrap_or(0))
            .collect()
    }

    /// Mean embedding of the phrase's words.
    pub fn text_embedding(&self, np: &NounPhrase) -> Vec<f64> {
        let ids = self.token_ids(np);
        let mut e = vec![0.0; self.m];
        for id in &ids {
            for (x, t) in e
                .iter_mut()
                .zip(&self.table[id * self.m..(id + 1) * self.m])
            {
                *x += t;
            }
        }
        let n = ids.len() as f64;
        e.iter_mut().for_each(|x| *x /= n);
        e
    }

    pub fn logit_from(&self, grounding: &GroundingResult, np: &NounPhrase) -> Result<f64> {
        if grounding.region_feature.len() != self.g {
            return Err(Error::Grounding(format!(
                "region feature has {} values, critic expects {}",
                grounding.region_feature.len(),
                self.g
            )));
        }
        Ok(self.w_raw * grounding.raw_score
            + dot(&self.w_region, &grounding.region_feature)
            + dot(&self.w_text, &self.text_embedding(np))
            + self.bias)
    }

    pub fn score_from(&self, grounding: &GroundingResult, np: &NounPhrase) -> Result<f64> {
        self.logit_from(grounding, np).map(sigmoid)
    }

    /// Probability that `np` is grounded in the image.
    pub fn score(
        &self,
        backend: &dyn GroundingBackend,
        image_id: &str,
        features: &[f64],
        np: &NounPhrase,
    ) -> Result<f64> {
        let grounding = backend.ground(image_id, features, np)?;
        self.score_from(&grounding, np)
    }

    fn accumulate_gradient(
        &self,
        grounding: &GroundingResult,
        np: &NounPhrase,
        target: f64,
        scale: f64,
        grad: &mut CriticModel,
    ) -> Result<f64> {
        let logit = self.logit_from(grounding, np)?;
        let dl = scale * (sigmoid(logit) - target);
        grad.w_raw += dl * grounding.raw_score;
        for (g, r) in grad.w_region.iter_mut().zip(&grounding.region_feature) {
            *g += dl * r;
        }
        let e = self.text_embedding(np);
        for (g, x) in grad.w_text.iter_mut().zip(&e) {
            *g += dl * x;
        }
        grad.bias += dl;
        let ids = self.token_ids(np);
        let share = dl / ids.len() as f64;
        for id in ids {
            for (g, w) in grad.table[id * self.m..(id + 1) * self.m]
                .iter_mut()
                .zip(&self.w_text)
            {
                *g += share * w;
            }
        }
        Ok(bce_with_logit(logit, target))
    }

    pub fn to_json(&self) -> String {
        let file = CriticFile {
            format: CRITIC_FORMAT.to_string(),
            dims: CriticDims {
                g: self.g,
                m: self.m,
                vocab_size: self.vocab_size(),
            },
            vocab: self.vocab.clone(),
            params: BTreeMap::from([
                ("w_raw".to_string(), vec![self.w_raw]),
                ("w_region".to_string(), self.w_region.clone()),
                ("table".to_string(), self.table.clone()),
                ("w_text".to_string(), self.w_text.clone()),
                ("bias".to_string(), vec![self.bias]),
            ]),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CriticFile = serde_json::from_str(text)?;
        if file.format != CRITIC_FORMAT {
            return Err(Error::Format(format!(
                "expected `{CRITIC_FORMAT}`, found `{}`",
                file.format
            )));
        }
        if file.dims.vocab_size != file.vocab.len() + 1 {
            return Err(Error::Format("vocab_size does not match vocab".into()));
        }
        let mut seen = vec![false; file.dims.vocab_size];
        for &i in file.vocab.values() {
            if i == 0 || i >= file.dims.vocab_size || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("bad vocabulary index {i}")));
            }
        }
        let mut model = CriticModel {
            vocab: file.vocab,
            ..CriticModel::zeros(Vec::<String>::new(), file.dims.g, file.dims.m)
        };
        model.table = vec![0.0; file.dims.vocab_size * file.dims.m];
        let mut source = file.params;
        let names = ["w_raw", "w_region", "table", "w_text", "bias"];
        for (name, slot) in names.into_iter().zip(model.params_mut()) {
            let values = source
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            if values.len() != slot.len() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        if let Some(extra) = source.keys().next() {
            return Err(Error::Format(format!("unknown parameter `{extra}`")));
        }
        Ok(model)
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
struct CriticFile {
    format: String,
    dims: CriticDims,
    vocab: BTreeMap<String, usize>,
    params: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticDims {
    g: usize,
    m: usize,
    vocab_size: usize,
}

/// Trains the critic on flipped-attribute pairs by seeded mini-batch
/// gradient descent on binary cross-entropy. The text embedding width is
/// `cfg.k`.
pub fn train_critic(
    corpus: &Corpus,
    backend: &dyn GroundingBackend,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<Trained<CriticModel>> {
    train_critic_with_progress(corpus, backend, pairs, cfg, |_, _| {})
}

pub fn train_critic_with_progress(
    corpus: &Corpus,
    backend: &dyn GroundingBackend,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Trained<CriticModel>> {
    cfg.validate()?;
    let resolved = resolve_pairs(corpus, pairs)?;
    let examples: Vec<(GroundingResult, &TrainingPair)> = resolved
        .into_iter()
        .map(|(f, p)| Ok((backend.ground(&p.image_id, f, &p.phrase)?, p)))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = pairs
        .iter()
        .flat_map(|p| p.phrase.words().map(str::to_string));
    let mut model = CriticModel::zeros(words, backend.region_dim(), cfg.k);
    for slot in model.params_mut() {
        fill_uniform(&mut rng, slot, cfg.init_scale);
    }

    let mut initial_loss = 0.0;
    for (gr, p) in &examples {
        initial_loss += bce_with_logit(model.logit_from(gr, &p.phrase)?, p.label.target());
    }
    initial_loss /= examples.len() as f64;

    let mut grad = model.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for slot in grad.params_mut() {
                slot.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (gr, p) = &examples[i];
                total +=
                    model.accumulate_gradient(gr, &p.phrase, p.label.target(), scale, &mut grad)?;
            }
            for (w, g) in model.params_mut().into_iter().zip(grad.params_mut()) {
                for (w, g) in w.iter_mut().zip(g.iter()) {
                    *w -= cfg.learning_rate * g;
                }
            }
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite()
            || model
                .params_mut()
                .iter()
                .any(|s| s.iter().any(|x| !x.is_finite()))
        {
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

pub fn critic_accuracy(
    model: &CriticModel,
    backend: &dyn GroundingBackend,
    corpus: &Corpus,
    pairs: &[TrainingPair],
) -> Result<f64> {
    let examples = resolve_pairs(corpus, pairs)?;
    let mut correct = 0usize;
    for (f, p) in &examples {
        let s = model.score(backend, &p.image_id, f, &p.phrase)?;
        if (s >= 0.5) == (p.label.target() == 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate, SynthSpec};

    fn np(s: &str) -> NounPhrase {
        NounPhrase::parse(s).unwrap()
    }

    fn world() -> Corpus {
        generate(&SynthSpec {
            n_classes: 4,
            images_per_class: 3,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn present_and_absent(c: &Corpus) -> (String, NounPhrase, NounPhrase) {
        let rec = &c.records()[0];
        let (head, adj) = rec
            .oracle_attributes
            .as_ref()
            .unwrap()
            .iter()
            .next()
            .unwrap();
        let other = SynthSpec::default().adjectives_per_noun[head]
            .iter()
            .find(|a| *a != adj)
            .unwrap()
            .clone();
        (
            rec.id.clone(),
            NounPhrase::new([adj.as_str()], head.as_str()),
            NounPhrase::new([other], head.as_str()),
        )
    }

    #[test]
    fn noiseless_raw_scores() {
        let c = world();
        let b = synthetic_backend(&c, 0.0, 1).unwrap();
        let (id, present, absent) = present_and_absent(&c);
        assert_eq!(b.ground(&id, &[], &present).unwrap().raw_score, 1.0);
        assert_eq!(b.ground(&id, &[], &absent).unwrap().raw_score, -1.0);
        // four classes assign at most four adjectives to any head
        assert_eq!(b.region_dim(), 4);
        let region = b.ground(&id, &[], &present).unwrap().region_feature;
        assert_eq!(region.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn backend_is_pure() {
        let c = world();
        let b = synthetic_backend(&c, 0.5, 9).unwrap();
        let (id, present, _) = present_and_absent(&c);
        assert_eq!(
            b.ground(&id, &[], &present).unwrap(),
            b.ground(&id, &[], &present).unwrap()
        );
    }

    #[test]
    fn noisy_absent_mean() {
        let c = generate(&SynthSpec::default()).unwrap();
        let b = synthetic_backend(&c, 0.5, 17).unwrap();
        let oracle = crate::synthworld::oracle_checker(&c).unwrap();
        let spec = SynthSpec::default();
        let mut draws = Vec::new();
        'outer: for rec in c.records() {
            for (head, adjs) in &spec.adjectives_per_noun {
                for adj in adjs {
                    let p = NounPhrase::new([adj.as_str()], head.as_str());
                    if !oracle.is_present(&rec.id, &p).unwrap() {
                        draws.push(b.ground(&rec.id, &rec.features, &p).unwrap().raw_score);
                        if draws.len() == 1000 {
                            break 'outer;
                        }
                    }
                }
            }
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean + 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn backend_needs_oracle() {
        let c = Corpus::new(BTreeMap::new(), crate::corpus::Lexicon::new(), 1, vec![]).unwrap();
        assert!(matches!(
            synthetic_backend(&c, 0.0, 0),
            Err(Error::NotSynthetic)
        ));
    }

    #[test]
    fn zero_weight_critic_scores_half() {
        let c = world();
        let b = synthetic_backend(&c, 0.3, 1).unwrap();
        let m = CriticModel::zeros(["red", "eye"], b.region_dim(), 4);
        let (id, present, absent) = present_and_absent(&c);
        assert_eq!(m.score(&b, &id, &[], &present).unwrap(), 0.5);
        assert_eq!(m.score(&b, &id, &[], &absent).unwrap(), 0.5);
    }

    #[test]
    fn monotone_in_raw_score() {
        let mut m = CriticModel::zeros(["red", "eye"], 2, 3);
        m.w_raw = 0.8;
        m.w_region = vec![0.1, -0.2];
        let phrase = np("red eye");
        let mut last = 0.0;
        for raw in [-2.0, -1.0, 0.0, 0.5, 3.0] {
            let s = m
                .score_from(
                    &GroundingResult {
                        raw_score: raw,
                        region_feature: vec![0.3, 0.4],
                    },
                    &phrase,
                )
                .unwrap();
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = CriticModel::zeros(["red", "black", "eye"], 3, 4);
        for slot in m.params_mut() {
            fill_uniform(&mut rng, slot, 0.7);
        }
        let gr = GroundingResult {
            raw_score: 0.4,
            region_feature: vec![0.2, -1.0, 0.5],
        };
        let phrase = np("red black eye");
        let mut grad = m.clone();
        for s in grad.params_mut() {
            s.fill(0.0);
        }
        m.accumulate_gradient(&gr, &phrase, 1.0, 1.0, &mut grad)
            .unwrap();
        let analytic: Vec<f64> = grad.params_mut().iter().flat_map(|s| s.to_vec()).collect();
        let h = 1e-5;
        let mut numeric = Vec::new();
        let sizes: Vec<usize> = m.params_mut().iter().map(|s| s.len()).collect();
        for (slot, n) in sizes.into_iter().enumerate() {
            for j in 0..n {
                let orig = m.params_mut()[slot][j];
                m.params_mut()[slot][j] = orig + h;
                let plus = bce_with_logit(m.logit_from(&gr, &phrase).unwrap(), 1.0);
                m.params_mut()[slot][j] = orig - h;
                let minus = bce_with_logit(m.logit_from(&gr, &phrase).unwrap(), 1.0);
                m.params_mut()[slot][j] = orig;
                numeric.push((plus - minus) / (2.0 * h));
            }
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(
                (a - n).abs() / (a.abs() + n.abs()).max(1e-8) < 1e-4,
                "{a} vs {n}"
            );
        }
    }

    #[test]
    fn replay_round_trip_and_misses() {
        let c = world();
        let b = synthetic_backend(&c, 0.2, 3).unwrap();
        let (id, present, absent) = present_and_absent(&c);
        let rows = vec![
            (
                id.clone(),
                present.clone(),
                b.ground(&id, &[], &present).unwrap(),
            ),
            (
                id.clone(),
                absent.clone(),
                b.ground(&id, &[], &absent).unwrap(),
            ),
        ];
        let mut buf = Vec::new();
        write_grounding(rows, &mut buf).unwrap();
        let replay = ReplayBackend::from_jsonl(buf.as_slice()).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(
            replay.ground(&id, &[], &absent).unwrap(),
            b.ground(&id, &[], &absent).unwrap()
        );
        assert!(matches!(
            replay.ground("nope", &[], &absent),
            Err(Error::Grounding(_))
        ));
    }

    #[test]
    fn replay_rejects_ragged_regions() {
        let text = [
            r#"{"image_id":"a","phrase":"red eye","raw_score":1.0,"region_feature":[1.0,2.0]}"#,
            r#"{"image_id":"a","phrase":"black eye","raw_score":1.0,"region_feature":[1.0]}"#,
        ]
        .join("\n");
        assert!(matches!(
            ReplayBackend::from_jsonl(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = CriticModel::zeros(["red", "eye"], 3, 2);
        for slot in m.params_mut() {
            fill_uniform(&mut rng, slot, 1.0);
        }
        let back = CriticModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(CriticModel::from_json(&m.to_json().replace(CRITIC_FORMAT, "x")).is_err());
    }
}
