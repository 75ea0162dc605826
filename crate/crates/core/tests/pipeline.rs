use std::collections::BTreeMap;

use cfx_core::chunker::NounPhrase;
use cfx_core::corpus::{Corpus, Description, ImageRecord, Lexicon};
use cfx_core::critic::{synthetic_backend, train_critic, GroundingBackend};
use cfx_core::encoder::{checker_accuracy, train_checker, TrainConfig};
use cfx_core::eval::{run_eval, train_sentence_classifier, EvalOptions, EvalReport};
use cfx_core::explainer::{explain, nearest_counterclass, Checker, ExplainOptions};
use cfx_core::negmine::{build_inventory, make_training_pairs, Label, TrainingPair};
use cfx_core::synthworld::{generate, oracle_checker, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_world(seed: u64) -> Corpus {
    generate(&SynthSpec {
        n_classes: 6,
        images_per_class: 8,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn pairs_for(corpus: &Corpus, seed: u64) -> Vec<TrainingPair> {
    let inv = build_inventory(corpus);
    make_training_pairs(corpus, &inv, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn np(s: &str) -> NounPhrase {
    NounPhrase::parse(s).unwrap()
}

#[test]
fn toy_separable_set_is_learned() {
    let lex = Lexicon::bird();
    let rec = |id: &str, f: [f64; 2], d: &str| ImageRecord {
        id: id.into(),
        class_id: "k".into(),
        features: f.to_vec(),
        descriptions: vec![Description::new(id, d, lex)],
        oracle_attributes: None,
    };
    let corpus = Corpus::new(
        BTreeMap::from([("k".into(), "K".into())]),
        lex.clone(),
        2,
        vec![
            rec("a", [1.0, 0.0], "a red eye"),
            rec("b", [0.0, 1.0], "a black eye"),
        ],
    )
    .unwrap();
    let pairs = pairs_for(&corpus, 0);
    let mut shown: Vec<String> = pairs
        .iter()
        .map(|p| format!("{} {} {:?}", p.image_id, p.phrase, p.label))
        .collect();
    shown.sort();
    assert_eq!(
        shown,
        [
            "a black eye Negative",
            "a red eye Positive",
            "b black eye Positive",
            "b red eye Negative"
        ]
    );

    let cfg = TrainConfig {
        k: 4,
        learning_rate: 0.5,
        epochs: 300,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let trained = train_checker(&corpus, &pairs, &cfg).unwrap();
    assert!(
        trained.final_loss() < 0.1 * trained.initial_loss,
        "{:?}",
        trained.loss_curve
    );
    assert_eq!(
        checker_accuracy(&trained.model, &corpus, &pairs).unwrap(),
        1.0
    );
    let m = &trained.model;
    assert!(
        m.fuse_score(&[1.0, 0.0], &np("red eye")).unwrap()
            > m.fuse_score(&[1.0, 0.0], &np("black eye")).unwrap()
    );
    assert!(
        m.fuse_score(&[0.0, 1.0], &np("black eye")).unwrap()
            > m.fuse_score(&[0.0, 1.0], &np("red eye")).unwrap()
    );
}

#[test]
fn training_is_deterministic() {
    let corpus = small_world(3);
    let pairs = pairs_for(&corpus, 3);
    let cfg = TrainConfig {
        k: 8,
        epochs: 3,
        ..TrainConfig::default()
    };
    let a = train_checker(&corpus, &pairs, &cfg).unwrap();
    let b = train_checker(&corpus, &pairs, &cfg).unwrap();
    assert_eq!(a.model.to_json(), b.model.to_json());
    assert_eq!(a.loss_curve, b.loss_curve);
}

#[test]
fn negative_pairs_are_oracle_absent() {
    for seed in 0..4 {
        let corpus = small_world(seed);
        let oracle = oracle_checker(&corpus).unwrap();
        let pairs = pairs_for(&corpus, seed);
        assert!(pairs.iter().any(|p| p.label == Label::Negative));
        for p in &pairs {
            let present = oracle.is_present(&p.image_id, &p.phrase).unwrap();
            assert_eq!(present, p.label == Label::Positive, "{p:?}");
        }
    }
}

#[test]
fn noiseless_nearest_counterclass_follows_hamming_distance() {
    for seed in 0..5 {
        let corpus = generate(&SynthSpec {
            n_classes: 8,
            images_per_class: 3,
            feature_noise_sigma: 0.0,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        for q in corpus.records() {
            let qa = q.oracle_attributes.as_ref().unwrap();
            let brute = corpus
                .records()
                .iter()
                .filter(|r| r.class_id != q.class_id)
                .map(|r| {
                    let ra = r.oracle_attributes.as_ref().unwrap();
                    let hamming = qa.iter().filter(|(n, a)| ra[*n] != **a).count();
                    (hamming, r.id.as_str(), r.class_id.as_str())
                })
                .min()
                .unwrap();
            assert_eq!(
                nearest_counterclass(&corpus, &q.id).unwrap(),
                brute.2,
                "image {}",
                q.id
            );
        }
    }
}

#[test]
fn noiseless_critic_ranks_present_above_absent() {
    let corpus = small_world(5);
    let pairs = pairs_for(&corpus, 5);
    let backend = synthetic_backend(&corpus, 0.0, 5).unwrap();
    let cfg = TrainConfig {
        k: 16,
        epochs: 20,
        ..TrainConfig::default()
    };
    let critic = train_critic(&corpus, &backend, &pairs, &cfg).unwrap().model;
    let oracle = oracle_checker(&corpus).unwrap();
    let inv = build_inventory(&corpus);
    let phrases: Vec<NounPhrase> = inv
        .heads()
        .flat_map(|h| {
            inv.modifiers(h)
                .unwrap()
                .iter()
                .map(move |m| NounPhrase::new(m.iter().map(String::as_str), h))
        })
        .collect();
    for rec in corpus.records() {
        let (mut lowest_present, mut highest_absent) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &phrases {
            let s = critic.score(&backend, &rec.id, &rec.features, p).unwrap();
            if oracle.is_present(&rec.id, p).unwrap() {
                lowest_present = lowest_present.min(s);
            } else {
                highest_absent = highest_absent.max(s);
            }
        }
        assert!(
            lowest_present > highest_absent,
            "{}: {lowest_present} vs {highest_absent}",
            rec.id
        );
    }
}

#[test]
fn backends_are_pure() {
    let corpus = small_world(1);
    let backend = synthetic_backend(&corpus, 0.5, 9).unwrap();
    let rec = &corpus.records()[0];
    let p = np("red crown");
    let a = backend.ground(&rec.id, &rec.features, &p).unwrap();
    let b = backend.ground(&rec.id, &rec.features, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_explanations_are_all_absent_and_eval_is_thread_independent() {
    let corpus = small_world(7);
    let oracle = oracle_checker(&corpus).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let clf = train_sentence_classifier(&corpus, &cfg).unwrap().model;
    for rec in corpus.records() {
        let t = explain(
            &corpus,
            &rec.id,
            None,
            &Checker::Oracle(&oracle),
            &ExplainOptions::default(),
        )
        .unwrap();
        assert_ne!(t.explanation.counter_class, rec.class_id);
        assert!(!oracle.is_present(&rec.id, &t.explanation.selected).unwrap());
    }

    for checker in [Checker::Oracle(&oracle), Checker::Baseline { seed: 4 }] {
        let one = run_eval(&corpus, &checker, &clf, &EvalOptions::default()).unwrap();
        let many = run_eval(
            &corpus,
            &checker,
            &clf,
            &EvalOptions {
                jobs: 5,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one, many);
        assert_eq!(one.to_json(), many.to_json());
    }
}

#[test]
fn report_aggregates_recompute_exactly() {
    let corpus = small_world(2);
    let clf = train_sentence_classifier(
        &corpus,
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .model;
    let report: EvalReport = run_eval(
        &corpus,
        &Checker::Baseline { seed: 1 },
        &clf,
        &EvalOptions::default(),
    )
    .unwrap();
    let class_of = |id: &str| corpus.record(id).ok().map(|r| r.class_id.clone());
    let agg = EvalReport::recompute(&report.per_image, class_of);
    assert_eq!(agg.phrase_error, report.phrase_error);
    assert_eq!(agg.acc_without_cf, report.acc_without_cf);
    assert_eq!(agg.acc_with_cf, report.acc_with_cf);
    for v in [
        report.phrase_error,
        report.acc_with_cf,
        report.acc_without_cf,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
}
