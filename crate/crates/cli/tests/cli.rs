use std::path::Path;

use cfx_cli::dispatch;
use cfx_core::eval::EvalReport;
use regex::Regex;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cfx(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cfx").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = cfx(&["eval", "--no-such-flag"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("Usage:"), "{}", r.stderr);
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(cfx(&[]).code, 1);
}

#[test]
fn help_and_version_exit_zero() {
    let help = cfx(&["--help"]);
    assert_eq!(help.code, 0);
    for sub in [
        "synth",
        "chunk",
        "pairs",
        "train-checker",
        "train-critic",
        "train-sentclf",
        "explain",
        "eval",
    ] {
        assert!(help.stdout.contains(sub), "help lacks {sub}");
    }
    let eval_help = cfx(&["eval", "--help"]);
    for flag in [
        "--corpus",
        "--checker",
        "--model",
        "--sentclf",
        "--match",
        "--jobs",
        "--pool-cap",
        "--metric",
    ] {
        assert!(eval_help.stdout.contains(flag), "eval help lacks {flag}");
    }
    let v = cfx(&["--version"]);
    assert_eq!(v.code, 0);
    assert!(Regex::new(r"^cfx \d+\.\d+\.\d+")
        .unwrap()
        .is_match(&v.stdout));
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "absent.jsonl");
    let r = cfx(&[
        "pairs",
        "--corpus",
        &missing,
        "--out",
        &path(dir.path(), "p.jsonl"),
    ]);
    assert_eq!(r.code, 2);
    let last = r.stderr.lines().last().unwrap();
    assert!(last.starts_with("error: "), "{last}");
    assert!(last.contains(&missing), "{last}");
    assert!(!dir.path().join("p.jsonl").exists());
}

#[test]
fn config_echo_is_tagged_json() {
    let r = cfx(&["chunk", "--text", "This bird has a red crown."]);
    assert_eq!(r.code, 0);
    let first = r.stderr.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(v["format"], "cfx-config-v1");
    assert_eq!(v["config"]["subcommand"], "chunk");
    assert_eq!(r.stdout, "bird\nred crown\n");
}

#[test]
fn classifier_checker_requires_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let spec = path(dir.path(), "spec.json");
    std::fs::write(&spec, r#"{"n_classes": 3, "images_per_class": 4}"#).unwrap();
    assert_eq!(cfx(&["synth", "--spec", &spec, "--out", &corpus]).code, 0);
    let r = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--image",
        "c00-000",
        "--checker",
        "classifier",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--model"), "{}", r.stderr);
}

#[test]
fn unknown_image_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let spec = path(dir.path(), "spec.json");
    std::fs::write(&spec, r#"{"n_classes": 3, "images_per_class": 4}"#).unwrap();
    assert_eq!(cfx(&["synth", "--spec", &spec, "--out", &corpus]).code, 0);
    let r = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--image",
        "nope",
        "--checker",
        "oracle",
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.lines().last().unwrap().contains("nope"));
}

#[test]
fn bad_spec_field_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = path(dir.path(), "spec.json");
    std::fs::write(&spec, r#"{"n_klasses": 3}"#).unwrap();
    let r = cfx(&[
        "synth",
        "--spec",
        &spec,
        "--out",
        &path(dir.path(), "c.jsonl"),
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn synth_then_oracle_eval_has_zero_phrase_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let sentclf = path(dir.path(), "s.json");
    let report = path(dir.path(), "r.json");
    assert_eq!(cfx(&["synth", "--out", &corpus]).code, 0);
    let r = cfx(&[
        "train-sentclf",
        "--corpus",
        &corpus,
        "--out",
        &sentclf,
        "--epochs",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let epoch = Regex::new(r"(?m)^epoch \d+ loss \d+\.\d{6}$").unwrap();
    assert_eq!(epoch.find_iter(&r.stderr).count(), 3);

    let r = cfx(&[
        "eval",
        "--corpus",
        &corpus,
        "--checker",
        "oracle",
        "--sentclf",
        &sentclf,
        "--out",
        &report,
        "--jobs",
        "4",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = EvalReport::load(&report).unwrap();
    assert_eq!(report.format, "cfx-report-v1");
    assert_eq!(report.n_images, 1000);
    assert_eq!(report.phrase_error, 0.0);
    assert!(report.acc_with_cf < report.acc_without_cf);
}

#[test]
fn explain_prints_sentence_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let spec = path(dir.path(), "spec.json");
    std::fs::write(&spec, r#"{"n_classes": 4, "images_per_class": 5}"#).unwrap();
    assert_eq!(cfx(&["synth", "--spec", &spec, "--out", &corpus]).code, 0);

    let r = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--image",
        "c01-002",
        "--checker",
        "oracle",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (sentence, trace) = r.stdout.split_once('\n').unwrap();
    let shape = Regex::new(
        r"^This is not an? [A-Z][a-z]+ [A-Z][a-z]+ because it does not have (an? )?[a-z -]+\.$",
    )
    .unwrap();
    assert!(shape.is_match(sentence), "{sentence}");
    let v: serde_json::Value = serde_json::from_str(trace).unwrap();
    assert_eq!(v["format"], "cfx-trace-v1");
    assert_eq!(v["explanation"]["sentence"], sentence);
    assert_eq!(v["explanation"]["checker_kind"], "oracle");
    assert!(!v["scores"].as_array().unwrap().is_empty());

    let forced = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--image",
        "c01-002",
        "--checker",
        "baseline",
        "--counter-class",
        "c03",
    ]);
    assert_eq!(forced.code, 0);
    let v: serde_json::Value =
        serde_json::from_str(forced.stdout.split_once('\n').unwrap().1).unwrap();
    assert_eq!(v["explanation"]["counter_class"], "c03");
    assert_eq!(v["explanation"]["selected_score"], -1.0);
}

#[test]
fn explain_all_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let spec = path(dir.path(), "spec.json");
    std::fs::write(&spec, r#"{"n_classes": 5, "images_per_class": 6}"#).unwrap();
    assert_eq!(cfx(&["synth", "--spec", &spec, "--out", &corpus]).code, 0);
    let one = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--all",
        "--checker",
        "baseline",
        "--jobs",
        "1",
    ]);
    let many = cfx(&[
        "explain",
        "--corpus",
        &corpus,
        "--all",
        "--checker",
        "baseline",
        "--jobs",
        "4",
    ]);
    assert_eq!(one.code, 0);
    assert_eq!(one.stdout, many.stdout);
    assert_eq!(one.stdout.lines().count(), 60);
}

#[test]
fn trained_models_drive_explain() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = path(dir.path(), "c.jsonl");
    let spec = path(dir.path(), "spec.json");
    let pairs = path(dir.path(), "pairs.jsonl");
    std::fs::write(&spec, r#"{"n_classes": 4, "images_per_class": 5}"#).unwrap();
    assert_eq!(cfx(&["synth", "--spec", &spec, "--out", &corpus]).code, 0);
    assert_eq!(
        cfx(&["pairs", "--corpus", &corpus, "--out", &pairs]).code,
        0
    );
    let n_pairs = std::fs::read_to_string(&pairs).unwrap().lines().count();
    assert!(n_pairs > 0);

    let checker = path(dir.path(), "m.json");
    let critic = path(dir.path(), "cr.json");
    let common = ["--k", "8", "--epochs", "2"];
    let mut args = vec![
        "train-checker",
        "--corpus",
        &corpus,
        "--out",
        &checker,
        "--pairs",
        &pairs,
    ];
    args.extend(common);
    assert_eq!(cfx(&args).code, 0);
    let mut args = vec![
        "train-critic",
        "--corpus",
        &corpus,
        "--out",
        &critic,
        "--noise-sigma",
        "0.2",
    ];
    args.extend(common);
    assert_eq!(cfx(&args).code, 0);

    for (kind, model) in [("classifier", &checker), ("critic", &critic)] {
        let r = cfx(&[
            "explain",
            "--corpus",
            &corpus,
            "--image",
            "c00-000",
            "--checker",
            kind,
            "--model",
            model,
            "--noise-sigma",
            "0.2",
        ]);
        assert_eq!(r.code, 0, "{kind}: {}", r.stderr);
        assert!(r.stdout.starts_with("This is not a"));
    }
}
