//! Counterfactual natural-language explanations for images represented as
//! feature vectors: "This is not a ⟨class⟩ because it does not have ⟨phrase⟩."
//!
//! The pipeline picks a counter-class (the class of the nearest image from a
//! different class), harvests noun phrases from that class's descriptions as
//! candidate evidence, scores each candidate with an evidence checker, and
//! negates the lowest-scoring one into a sentence.

pub mod chunker;
pub mod corpus;
pub mod critic;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explainer;
mod math;
pub mod negmine;
pub mod synthworld;

pub use chunker::{chunk, contains_phrase, MatchMode, NounPhrase};
pub use corpus::{load_corpus, save_corpus, tokenize, Corpus, ImageRecord, Lexicon};
pub use critic::{synthetic_backend, train_critic, CriticModel, GroundingBackend};
pub use encoder::{grad_check, train_checker, CheckerModel, TrainConfig, Trained};
pub use error::{Error, Result};
pub use eval::{run_eval, train_sentence_classifier, EvalOptions, EvalReport, SentenceClassifier};
pub use explainer::{compose, explain, negate, Checker, CheckerKind, ExplainOptions};
pub use negmine::{build_inventory, flip, make_training_pairs, Label, TrainingPair};
pub use synthworld::{generate, oracle_checker, OracleChecker, SynthSpec};
