//! Browser bindings: chunk a sentence, build a counterfactual sentence, and
//! explain images of a small synthetic world.

use cfx_core::chunker::{chunk, NounPhrase};
use cfx_core::corpus::{tokenize, Corpus, Lexicon};
use cfx_core::encoder::{checker_accuracy, train_checker, CheckerModel, TrainConfig};
use cfx_core::explainer::{compose, explain, negate, Checker, ExplainOptions};
use cfx_core::negmine::{build_inventory, make_training_pairs};
use cfx_core::synthworld::{generate, oracle_checker, OracleChecker, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Noun phrases of `text` under the shipped bird lexicon.
#[wasm_bindgen]
pub fn chunk_text(text: &str) -> Vec<String> {
    chunk(&tokenize(text, Lexicon::bird()))
        .iter()
        .map(NounPhrase::canonical)
        .collect()
}

pub fn counterfactual_sentence(counter_class: &str, phrase: &str) -> Result<String, String> {
    let name = counter_class.trim();
    if name.is_empty() {
        return Err("counter-class name is empty".into());
    }
    let np: NounPhrase = phrase
        .parse()
        .map_err(|_| format!("`{phrase}` is not a noun phrase"))?;
    Ok(compose(name, &negate(&np)))
}

/// "This is not a <counter_class> because it does not have <phrase>."
#[wasm_bindgen]
pub fn counterfactual(counter_class: &str, phrase: &str) -> Result<String, JsValue> {
    counterfactual_sentence(counter_class, phrase).map_err(js)
}

#[derive(Serialize)]
struct ImageView<'a> {
    id: &'a str,
    class_id: &'a str,
    class_name: &'a str,
    descriptions: Vec<&'a str>,
    attributes: Vec<String>,
}

/// A generated world plus the checkers that can explain it.
#[wasm_bindgen]
pub struct Demo {
    corpus: Corpus,
    oracle: OracleChecker,
    classifier: Option<CheckerModel>,
    seed: u64,
}

impl Demo {
    pub fn create(n_classes: usize, images_per_class: usize, seed: u64) -> Result<Demo, String> {
        let spec = SynthSpec {
            n_classes,
            images_per_class,
            seed,
            ..SynthSpec::default()
        };
        let corpus = generate(&spec).map_err(|e| e.to_string())?;
        let oracle = oracle_checker(&corpus).map_err(|e| e.to_string())?;
        Ok(Demo {
            corpus,
            oracle,
            classifier: None,
            seed,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Trains the phrase/image classifier; returns its accuracy on the
    /// training pairs.
    pub fn train(&mut self, epochs: usize) -> Result<f64, String> {
        let inv = build_inventory(&self.corpus);
        let pairs = make_training_pairs(
            &self.corpus,
            &inv,
            &mut ChaCha8Rng::seed_from_u64(self.seed),
        );
        let cfg = TrainConfig {
            k: 16,
            learning_rate: 0.5,
            batch_size: 16,
            epochs,
            seed: self.seed,
            ..TrainConfig::default()
        };
        let model = train_checker(&self.corpus, &pairs, &cfg)
            .map_err(|e| e.to_string())?
            .model;
        let acc = checker_accuracy(&model, &self.corpus, &pairs).map_err(|e| e.to_string())?;
        self.classifier = Some(model);
        Ok(acc)
    }

    pub fn image_json(&self, id: &str) -> Result<String, String> {
        let rec = self.corpus.record(id).map_err(|e| e.to_string())?;
        let view = ImageView {
            id: &rec.id,
            class_id: &rec.class_id,
            class_name: self.corpus.class_name(&rec.class_id).unwrap_or(""),
            descriptions: rec.descriptions.iter().map(|d| d.raw.as_str()).collect(),
            attributes: rec
                .oracle_attributes
                .iter()
                .flatten()
                .map(|(n, a)| format!("{a} {n}"))
                .collect(),
        };
        serde_json::to_string(&view).map_err(|e| e.to_string())
    }

    /// Explanation trace as JSON. `checker` is `oracle`, `baseline` or
    /// `classifier`; an empty `counter_class` picks the nearest one.
    pub fn explain_json(
        &self,
        id: &str,
        checker: &str,
        counter_class: &str,
    ) -> Result<String, String> {
        let checker = match checker {
            "oracle" => Checker::Oracle(&self.oracle),
            "baseline" => Checker::Baseline { seed: self.seed },
            "classifier" => Checker::Classifier(
                self.classifier
                    .as_ref()
                    .ok_or("train the classifier first")?,
            ),
            other => return Err(format!("unknown checker `{other}`")),
        };
        let counter = Some(counter_class).filter(|c| !c.is_empty());
        let trace = explain(
            &self.corpus,
            id,
            counter,
            &checker,
            &ExplainOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        serde_json::to_string(&trace).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n_classes: usize, images_per_class: usize, seed: u32) -> Result<Demo, JsValue> {
        Demo::create(n_classes, images_per_class, u64::from(seed)).map_err(js)
    }

    #[wasm_bindgen(js_name = imageIds)]
    pub fn image_ids(&self) -> Vec<String> {
        self.corpus.records().iter().map(|r| r.id.clone()).collect()
    }

    /// `[[class_id, name], ...]` as JSON.
    pub fn classes(&self) -> String {
        serde_json::to_string(&self.corpus.classes().iter().collect::<Vec<_>>()).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = trainClassifier)]
    pub fn train_classifier(&mut self, epochs: usize) -> Result<f64, JsValue> {
        self.train(epochs).map_err(js)
    }

    #[wasm_bindgen(js_name = hasClassifier)]
    pub fn has_classifier(&self) -> bool {
        self.classifier.is_some()
    }

    pub fn image(&self, id: &str) -> Result<String, JsValue> {
        self.image_json(id).map_err(js)
    }

    #[wasm_bindgen(js_name = explain)]
    pub fn explain_image(
        &self,
        id: &str,
        checker: &str,
        counter_class: &str,
    ) -> Result<String, JsValue> {
        self.explain_json(id, checker, counter_class).map_err(js)
    }
}
