//! Phrase/image evidence classifier.
//!
//! A phrase is encoded by a tanh recurrent cell over its word embeddings, the
//! image feature vector is projected into the same space, the two are fused
//! by elementwise product followed by L2 normalization, and a logistic layer
//! maps the fused vector to the probability that the phrase is in the image.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::NounPhrase;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::math::{
    add_outer, add_transpose_mul, affine, bce_with_logit, dot, fill_uniform, sigmoid,
};
use crate::negmine::TrainingPair;

pub const CHECKER_FORMAT: &str = "cfx-checker-v1";

/// Fused vectors with a smaller norm normalize to zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 64,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            seed: 17,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_real = |x: f64| x.is_finite() && x > 0.0;
        if self.k == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "k, epochs and batch_size must be positive".into(),
            ));
        }
        if !positive_real(self.learning_rate) || !positive_real(self.init_scale) {
            return Err(Error::Config(
                "learning_rate and init_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learned tensors, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckerParams {
    /// `V × k`; row 0 is the out-of-vocabulary embedding.
    pub embed: Vec<f64>,
    /// `k × k` input weights of the recurrent cell.
    pub w_x: Vec<f64>,
    /// `k × k` recurrent weights.
    pub w_h: Vec<f64>,
    pub b_r: Vec<f64>,
    /// `k × d` image projection.
    pub w_p: Vec<f64>,
    pub b_p: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: f64,
}

const PARAM_NAMES: [&str; 8] = ["embed", "w_x", "w_h", "b_r", "w_p", "b_p", "w_o", "b_o"];

impl CheckerParams {
    pub fn zeros(vocab_size: usize, d: usize, k: usize) -> Self {
        CheckerParams {
            embed: vec![0.0; vocab_size * k],
            w_x: vec![0.0; k * k],
            w_h: vec![0.0; k * k],
            b_r: vec![0.0; k],
            w_p: vec![0.0; k * d],
            b_p: vec![0.0; k],
            w_o: vec![0.0; k],
            b_o: 0.0,
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        let t: [&[f64]; 8] = [
            &self.embed,
            &self.w_x,
            &self.w_h,
            &self.b_r,
            &self.w_p,
            &self.b_p,
            &self.w_o,
            std::slice::from_ref(&self.b_o),
        ];
        std::array::from_fn(|i| (PARAM_NAMES[i], t[i]))
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 8] {
        let [a, b, c, d, e, f, g, h] = [
            &mut self.embed[..],
            &mut self.w_x[..],
            &mut self.w_h[..],
            &mut self.b_r[..],
            &mut self.w_p[..],
            &mut self.b_p[..],
            &mut self.w_o[..],
            std::slice::from_mut(&mut self.b_o),
        ];
        [
            (PARAM_NAMES[0], a),
            (PARAM_NAMES[1], b),
            (PARAM_NAMES[2], c),
            (PARAM_NAMES[3], d),
            (PARAM_NAMES[4], e),
            (PARAM_NAMES[5], f),
            (PARAM_NAMES[6], g),
            (PARAM_NAMES[7], h),
        ]
    }

    fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckerModel {
    vocab: BTreeMap<String, usize>,
    d: usize,
    k: usize,
    params: CheckerParams,
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    ids: Vec<usize>,
    /// `hs[0]` is the zero initial state; `hs[i]` follows the i-th word.
    hs: Vec<Vec<f64>>,
    v: Vec<f64>,
    norm: f64,
    zn: Vec<f64>,
    logit: f64,
}

impl CheckerModel {
    /// Zero-initialized model over `words`; indices are assigned in sorted
    /// order starting at 1.
    pub fn zeros<I, S>(words: I, d: usize, k: usize) -> Self
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
        let params = CheckerParams::zeros(vocab.len() + 1, d, k);
        CheckerModel {
            vocab,
            d,
            k,
            params,
        }
    }

    /// Model with every parameter drawn from `uniform(-scale, scale)`.
    pub fn random<I, S, R>(words: I, d: usize, k: usize, scale: f64, rng: &mut R) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
        R: rand::Rng + ?Sized,
    {
        let mut model = Self::zeros(words, d, k);
        for (_, t) in model.params.tensors_mut() {
            fill_uniform(rng, t, scale);
        }
        model
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn embed_dim(&self) -> usize {
        self.k
    }

    pub fn vocab(&self) -> &BTreeMap<String, usize> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn params(&self) -> &CheckerParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut CheckerParams {
        &mut self.params
    }

    fn token_ids(&self, np: &NounPhrase) -> Vec<usize> {
        np.words()
            .map(|w| self.vocab.get(w).copied().unwrap_or(0))
            .collect()
    }

    fn run_recurrence(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        let k = self.k;
        let p = &self.params;
        let mut hs = Vec::with_capacity(ids.len() + 1);
        hs.push(vec![0.0; k]);
        let mut pre = vec![0.0; k];
        for &id in ids {
            let e = &p.embed[id * k..(id + 1) * k];
            affine(&p.w_x, e, &p.b_r, &mut pre);
            let prev = hs.last().expect("initial state");
            for (r, a) in pre.iter_mut().enumerate() {
                *a += dot(&p.w_h[r * k..(r + 1) * k], prev);
            }
            hs.push(pre.iter().map(|a| a.tanh()).collect());
        }
        hs
    }

    /// Final hidden state of the recurrent cell over the phrase's words.
    pub fn encode_text(&self, np: &NounPhrase) -> Vec<f64> {
        let ids = self.token_ids(np);
        self.run_recurrence(&ids).pop().expect("initial state")
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.d {
            return Err(Error::FeatureDim {
                expected: self.d,
                found: features.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, features: &[f64], np: &NounPhrase) -> Trace {
        let k = self.k;
        let p = &self.params;
        let ids = self.token_ids(np);
        let hs = self.run_recurrence(&ids);
        let t = hs.last().expect("initial state");
        let mut v = vec![0.0; k];
        affine(&p.w_p, features, &p.b_p, &mut v);
        let z: Vec<f64> = v.iter().zip(t).map(|(a, b)| a * b).collect();
        let norm = dot(&z, &z).sqrt();
        let zn: Vec<f64> = if norm > NORM_EPS {
            z.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; k]
        };
        let logit = dot(&p.w_o, &zn) + p.b_o;
        Trace {
            ids,
            hs,
            v,
            norm,
            zn,
            logit,
        }
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, features: &[f64], np: &NounPhrase) -> Result<f64> {
        self.check_dim(features)?;
        Ok(self.trace(features, np).logit)
    }

    /// Probability that `np` is present in the image with `features`.
    pub fn fuse_score(&self, features: &[f64], np: &NounPhrase) -> Result<f64> {
        self.logit(features, np).map(sigmoid)
    }

    /// Binary cross-entropy of one example.
    pub fn loss(&self, features: &[f64], np: &NounPhrase, target: f64) -> Result<f64> {
        self.logit(features, np).map(|u| bce_with_logit(u, target))
    }

    /// Adds `scale · ∂loss/∂θ` into `grad` and returns the loss.
    pub fn accumulate_gradient(
        &self,
        features: &[f64],
        np: &NounPhrase,
        target: f64,
        scale: f64,
        grad: &mut CheckerParams,
    ) -> Result<f64> {
        self.check_dim(features)?;
        let tr = self.trace(features, np);
        let loss = bce_with_logit(tr.logit, target);
        self.backward(&tr, features, target, scale, grad);
        Ok(loss)
    }

    fn backward(
        &self,
        tr: &Trace,
        features: &[f64],
        target: f64,
        scale: f64,
        g: &mut CheckerParams,
    ) {
        let k = self.k;
        let p = &self.params;
        let dl = scale * (sigmoid(tr.logit) - target);
        g.b_o += dl;
        for (gw, z) in g.w_o.iter_mut().zip(&tr.zn) {
            *gw += dl * z;
        }
        if tr.norm <= NORM_EPS {
            return;
        }
        // d(z/|z|) = (I - ẑẑᵀ)/|z|
        let dzn: Vec<f64> = p.w_o.iter().map(|w| dl * w).collect();
        let proj = dot(&tr.zn, &dzn);
        let dz: Vec<f64> = dzn
            .iter()
            .zip(&tr.zn)
            .map(|(d, z)| (d - z * proj) / tr.norm)
            .collect();
        let t = tr.hs.last().expect("initial state");
        let dv: Vec<f64> = dz.iter().zip(t).map(|(a, b)| a * b).collect();
        let mut dh: Vec<f64> = dz.iter().zip(&tr.v).map(|(a, b)| a * b).collect();
        add_outer(&mut g.w_p, &dv, features, 1.0);
        for (gb, d) in g.b_p.iter_mut().zip(&dv) {
            *gb += d;
        }
        let mut da = vec![0.0; k];
        for step in (1..tr.hs.len()).rev() {
            let h = &tr.hs[step];
            for ((a, d), hv) in da.iter_mut().zip(&dh).zip(h) {
                *a = d * (1.0 - hv * hv);
            }
            let id = tr.ids[step - 1];
            let e = &p.embed[id * k..(id + 1) * k];
            add_outer(&mut g.w_x, &da, e, 1.0);
            add_outer(&mut g.w_h, &da, &tr.hs[step - 1], 1.0);
            for (gb, a) in g.b_r.iter_mut().zip(&da) {
                *gb += a;
            }
            add_transpose_mul(&p.w_x, &da, &mut g.embed[id * k..(id + 1) * k]);
            dh.fill(0.0);
            add_transpose_mul(&p.w_h, &da, &mut dh);
        }
    }

    pub fn to_json(&self) -> String {
        let file = CheckerFile {
            format: CHECKER_FORMAT.to_string(),
            dims: CheckerDims {
                d: self.d,
                k: self.k,
                vocab_size: self.vocab_size(),
            },
            vocab: self.vocab.clone(),
            params: self
                .params
                .tensors()
                .iter()
                .map(|(n, t)| (n.to_string(), t.to_vec()))
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckerFile = serde_json::from_str(text)?;
        if file.format != CHECKER_FORMAT {
            return Err(Error::Format(format!(
                "expected `{CHECKER_FORMAT}`, found `{}`",
                file.format
            )));
        }
        let CheckerDims { d, k, vocab_size } = file.dims;
        if vocab_size != file.vocab.len() + 1 {
            return Err(Error::Format("vocab_size does not match vocab".into()));
        }
        let mut seen = vec![false; vocab_size];
        for &i in file.vocab.values() {
            if i == 0 || i >= vocab_size || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("bad vocabulary index {i}")));
            }
        }
        let mut params = CheckerParams::zeros(vocab_size, d, k);
        let mut source = file.params;
        for (name, t) in params.tensors_mut() {
            let values = source
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            if values.len() != t.len() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has {} values, expected {}",
                    values.len(),
                    t.len()
                )));
            }
            t.copy_from_slice(&values);
        }
        if let Some(extra) = source.keys().next() {
            return Err(Error::Format(format!("unknown parameter `{extra}`")));
        }
        Ok(CheckerModel {
            vocab: file.vocab,
            d,
            k,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut text = text.to_string();
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckerFile {
    format: String,
    dims: CheckerDims,
    vocab: BTreeMap<String, usize>,
    params: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckerDims {
    d: usize,
    k: usize,
    vocab_size: usize,
}

/// A trained model with its loss history.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    /// Mean loss over all pairs before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub loss_curve: Vec<f64>,
}

impl<M> Trained<M> {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().unwrap_or(&self.initial_loss)
    }
}

/// Resolves every pair's image features up front.
pub(crate) fn resolve_pairs<'a>(
    corpus: &'a Corpus,
    pairs: &'a [TrainingPair],
) -> Result<Vec<(&'a [f64], &'a TrainingPair)>> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    pairs
        .iter()
        .map(|p| Ok((corpus.record(&p.image_id)?.features.as_slice(), p)))
        .collect()
}

pub fn train_checker(
    corpus: &Corpus,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<Trained<CheckerModel>> {
    train_checker_with_progress(corpus, pairs, cfg, |_, _| {})
}

/// Mini-batch gradient descent on mean binary cross-entropy. `progress` is
/// called after each epoch with the epoch index and its mean loss.
pub fn train_checker_with_progress(
    corpus: &Corpus,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Trained<CheckerModel>> {
    cfg.validate()?;
    let examples = resolve_pairs(corpus, pairs)?;
    let words = pairs
        .iter()
        .flat_map(|p| p.phrase.words().map(str::to_string));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model =
        CheckerModel::random(words, corpus.feature_dim(), cfg.k, cfg.init_scale, &mut rng);

    let mut initial_loss = 0.0;
    for (f, p) in &examples {
        initial_loss += model.loss(f, &p.phrase, p.label.target())?;
    }
    initial_loss /= examples.len() as f64;

    let mut grad = CheckerParams::zeros(model.vocab_size(), model.d, model.k);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (f, p) = examples[i];
                total +=
                    model.accumulate_gradient(f, &p.phrase, p.label.target(), scale, &mut grad)?;
            }
            for ((_, w), (_, g)) in model.params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (w, g) in w.iter_mut().zip(g) {
                    *w -= cfg.learning_rate * g;
                }
            }
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() || !model.params.all_finite() {
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

/// Fraction of pairs where thresholding the score at 0.5 recovers the label.
pub fn checker_accuracy(
    model: &CheckerModel,
    corpus: &Corpus,
    pairs: &[TrainingPair],
) -> Result<f64> {
    let examples = resolve_pairs(corpus, pairs)?;
    let mut correct = 0usize;
    for (f, p) in &examples {
        let s = model.fuse_score(f, &p.phrase)?;
        if (s >= 0.5) == (p.label.target() == 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Analytic gradient of one example's loss.
pub fn analytic_gradient(
    model: &CheckerModel,
    features: &[f64],
    np: &NounPhrase,
    target: f64,
) -> Result<CheckerParams> {
    let mut grad = CheckerParams::zeros(model.vocab_size(), model.d, model.k);
    model.accumulate_gradient(features, np, target, 1.0, &mut grad)?;
    Ok(grad)
}

/// Central-difference gradient of one example's loss.
pub fn numeric_gradient(
    model: &CheckerModel,
    features: &[f64],
    np: &NounPhrase,
    target: f64,
    step: f64,
) -> Result<CheckerParams> {
    model.check_dim(features)?;
    let mut probe = model.clone();
    let mut grad = CheckerParams::zeros(model.vocab_size(), model.d, model.k);
    for (slot, (_, g)) in grad.tensors_mut().into_iter().enumerate() {
        for (j, gj) in g.iter_mut().enumerate() {
            let original = probe.params.tensors()[slot].1[j];
            probe.params.tensors_mut()[slot].1[j] = original + step;
            let plus = probe.loss(features, np, target)?;
            probe.params.tensors_mut()[slot].1[j] = original - step;
            let minus = probe.loss(features, np, target)?;
            probe.params.tensors_mut()[slot].1[j] = original;
            *gj = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// `max |a - n| / max(1e-8, |a| + |n|)` over every parameter.
pub fn max_relative_error(analytic: &CheckerParams, numeric: &CheckerParams) -> f64 {
    analytic
        .tensors()
        .iter()
        .zip(numeric.tensors())
        .flat_map(|((_, a), (_, n))| a.iter().zip(n.iter()))
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares backpropagated and finite-difference gradients of one example.
pub fn grad_check(
    model: &CheckerModel,
    features: &[f64],
    np: &NounPhrase,
    target: f64,
) -> Result<f64> {
    let analytic = analytic_gradient(model, features, np, target)?;
    let numeric = numeric_gradient(model, features, np, target, GRAD_CHECK_STEP)?;
    Ok(max_relative_error(&analytic, &numeric))
}
