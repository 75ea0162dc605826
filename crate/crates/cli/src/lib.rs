//! `cfx` subcommands. Exit codes: 0 success, 1 usage error, 2 data or
//! contract error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cfx_core::chunker::MatchMode;
use cfx_core::corpus::{load_corpus, save_corpus, tokenize, Corpus, Lexicon};
use cfx_core::critic::{
    synthetic_backend, train_critic_with_progress, CriticModel, GroundingBackend, ReplayBackend,
};
use cfx_core::encoder::{train_checker_with_progress, CheckerModel, TrainConfig};
use cfx_core::eval::{
    run_eval, train_sentence_classifier_with_progress, EvalOptions, SentenceClassifier,
};
use cfx_core::explainer::{
    explain, Checker, CheckerKind, DistanceMetric, ExplainOptions, ExplanationTrace,
    ExternalExplanations, DEFAULT_POOL_CAP,
};
use cfx_core::negmine::{
    build_inventory, make_training_pairs, read_pairs, write_pairs, TrainingPair,
};
use cfx_core::synthworld::{generate, oracle_checker, SynthSpec};
use cfx_core::{chunk, Error};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const TRACE_FORMAT: &str = "cfx-trace-v1";
pub const CONFIG_FORMAT: &str = "cfx-config-v1";
pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "cfx",
    version,
    about = "Counterfactual explanations: \"This is not a X because it does not have Y.\""
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic attribute-world corpus.
    Synth(SynthArgs),
    /// Print the noun phrases of a sentence, one per line.
    Chunk(ChunkArgs),
    /// Dump flipped-attribute training pairs.
    Pairs(PairsArgs),
    /// Train the phrase/image evidence classifier.
    TrainChecker(TrainCheckerArgs),
    /// Train the phrase critic over a grounding backend.
    TrainCritic(TrainCriticArgs),
    /// Train the bag-of-words sentence classifier used for evaluation.
    TrainSentclf(TrainSentclfArgs),
    /// Explain why an image is not of a counter-class.
    Explain(ExplainArgs),
    /// Explain every image and report phrase error and accuracy metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// JSON file mirroring the synthetic world spec; defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output corpus (JSON-Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability that a described attribute contradicts the class assignment.
    #[arg(long)]
    pub violate_exclusivity: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ChunkArgs {
    #[arg(long)]
    pub text: String,
    /// Lexicon JSON map (surface -> POS); the shipped bird lexicon by default.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PairsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    /// Shared embedding width.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long = "lr", default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            k: self.k,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCheckerArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training pairs from `cfx pairs`; mined from the corpus when omitted.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct GroundingFlags {
    /// Replay grounding results from a JSON-Lines dump instead of the synthetic backend.
    #[arg(long)]
    pub grounding: Option<PathBuf>,
    /// Noise of the synthetic grounding backend.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Seed of the synthetic backend's per-query noise.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub backend_seed: u64,
}

impl GroundingFlags {
    fn backend(&self, corpus: &Corpus) -> Result<Box<dyn GroundingBackend>, Error> {
        Ok(match &self.grounding {
            Some(path) => Box::new(ReplayBackend::load(path)?),
            None => Box::new(synthetic_backend(
                corpus,
                self.noise_sigma,
                self.backend_seed,
            )?),
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCriticArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub grounding: GroundingFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainSentclfArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckerArg {
    Classifier,
    Critic,
    Baseline,
    Oracle,
}

impl From<CheckerArg> for CheckerKind {
    fn from(c: CheckerArg) -> Self {
        match c {
            CheckerArg::Classifier => CheckerKind::Classifier,
            CheckerArg::Critic => CheckerKind::PhraseCritic,
            CheckerArg::Baseline => CheckerKind::RandomBaseline,
            CheckerArg::Oracle => CheckerKind::Oracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchArg {
    ExactNp,
    Substring,
}

#[derive(Debug, Args, Serialize)]
pub struct CheckerFlags {
    #[arg(long, value_enum)]
    pub checker: CheckerArg,
    /// Trained checker (classifier) or critic model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sentences standing in for generated explanations: {"class_id", "sentence"} per line.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_POOL_CAP)]
    pub pool_cap: usize,
    /// Feature-space distance used to pick the counter-class.
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub grounding: GroundingFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Image to explain.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    pub image: Option<String>,
    /// Explain every image in the corpus.
    #[arg(long)]
    pub all: bool,
    /// Defaults to the class of the nearest image from another class.
    #[arg(long)]
    pub counter_class: Option<String>,
    #[command(flatten)]
    pub checker: CheckerFlags,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub checker: CheckerFlags,
    /// Sentence classifier from `cfx train-sentclf`.
    #[arg(long)]
    pub sentclf: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// How phrases are matched against ground-truth descriptions.
    #[arg(long = "match", value_enum, default_value_t = MatchArg::ExactNp)]
    pub match_mode: MatchArg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Contract(format!("output: {e}")))
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "error: {e}"),
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{}", e.render());
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    };
                }
                _ => 1,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let config = serde_json::json!({ "format": CONFIG_FORMAT, "config": &cli.command });
    let _ = writeln!(err, "{config}");
    match run(&cli.command, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.exit_code()
        }
    }
}

fn run(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Chunk(a) => chunk_text(a, out),
        Command::Pairs(a) => pairs(a),
        Command::TrainChecker(a) => train_checker_cmd(a, err),
        Command::TrainCritic(a) => train_critic_cmd(a, err),
        Command::TrainSentclf(a) => train_sentclf_cmd(a, err),
        Command::Explain(a) => explain_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, err),
    }
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(path) => SynthSpec::load(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(p) = a.violate_exclusivity {
        spec.violate_exclusivity = p;
    }
    let corpus = generate(&spec)?;
    save_corpus(&corpus, &a.out)?;
    Ok(())
}

fn chunk_text(a: &ChunkArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let lexicon = match &a.lexicon {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<Lexicon>(&text).map_err(Error::from)?
        }
        None => Lexicon::bird().clone(),
    };
    for np in chunk(&tokenize(&a.text, &lexicon)) {
        writeln!(out, "{np}")?;
    }
    Ok(())
}

fn mine_pairs(corpus: &Corpus, seed: u64) -> Vec<TrainingPair> {
    let inv = build_inventory(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_training_pairs(corpus, &inv, &mut rng)
}

fn load_or_mine_pairs(
    corpus: &Corpus,
    path: Option<&Path>,
    seed: u64,
) -> Result<Vec<TrainingPair>, Failure> {
    match path {
        Some(p) => {
            let file = File::open(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            Ok(read_pairs(BufReader::new(file))?)
        }
        None => Ok(mine_pairs(corpus, seed)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Failure::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn pairs(a: &PairsArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let pairs = mine_pairs(&corpus, a.seed);
    write_pairs(&pairs, create(&a.out)?)?;
    Ok(())
}

fn epoch_line(err: &mut dyn Write) -> impl FnMut(usize, f64) + '_ {
    move |epoch, loss| {
        let _ = writeln!(err, "epoch {} loss {loss:.6}", epoch + 1);
    }
}

fn train_checker_cmd(a: &TrainCheckerArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let pairs = load_or_mine_pairs(&corpus, a.pairs.as_deref(), a.seed)?;
    let cfg = a.train.config(a.seed);
    let trained = train_checker_with_progress(&corpus, &pairs, &cfg, epoch_line(err))?;
    trained.model.save(&a.out)?;
    Ok(())
}

fn train_critic_cmd(a: &TrainCriticArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let pairs = load_or_mine_pairs(&corpus, a.pairs.as_deref(), a.seed)?;
    let backend = a.grounding.backend(&corpus)?;
    let cfg = a.train.config(a.seed);
    let trained =
        train_critic_with_progress(&corpus, backend.as_ref(), &pairs, &cfg, epoch_line(err))?;
    trained.model.save(&a.out)?;
    Ok(())
}

fn train_sentclf_cmd(a: &TrainSentclfArgs, err: &mut dyn Write) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let cfg = a.train.config(a.seed);
    let trained = train_sentence_classifier_with_progress(&corpus, &cfg, epoch_line(err))?;
    trained.model.save(&a.out)?;
    Ok(())
}

/// Models a checker needs, loaded once and borrowed by [`Checker`].
enum LoadedChecker {
    Classifier(CheckerModel),
    Critic(CriticModel, Box<dyn GroundingBackend>),
    Baseline(u64),
    Oracle(cfx_core::OracleChecker),
}

impl LoadedChecker {
    fn load(flags: &CheckerFlags, corpus: &Corpus, seed: u64) -> Result<Self, Failure> {
        let model_path = || {
            flags.model.as_ref().ok_or_else(|| {
                Failure::Usage(format!(
                    "--checker {} requires --model",
                    match flags.checker {
                        CheckerArg::Classifier => "classifier",
                        _ => "critic",
                    }
                ))
            })
        };
        Ok(match flags.checker {
            CheckerArg::Classifier => LoadedChecker::Classifier(CheckerModel::load(model_path()?)?),
            CheckerArg::Critic => {
                let model = CriticModel::load(model_path()?)?;
                LoadedChecker::Critic(model, flags.grounding.backend(corpus)?)
            }
            CheckerArg::Baseline => LoadedChecker::Baseline(seed),
            CheckerArg::Oracle => LoadedChecker::Oracle(oracle_checker(corpus)?),
        })
    }

    fn checker(&self) -> Checker<'_> {
        match self {
            LoadedChecker::Classifier(m) => Checker::Classifier(m),
            LoadedChecker::Critic(model, backend) => Checker::Critic {
                model,
                backend: backend.as_ref(),
            },
            LoadedChecker::Baseline(seed) => Checker::Baseline { seed: *seed },
            LoadedChecker::Oracle(o) => Checker::Oracle(o),
        }
    }
}

fn load_external(flags: &CheckerFlags) -> Result<Option<ExternalExplanations>, Failure> {
    Ok(match &flags.external {
        Some(p) => Some(ExternalExplanations::load(p)?),
        None => None,
    })
}

fn explain_options<'a>(
    flags: &CheckerFlags,
    external: Option<&'a ExternalExplanations>,
) -> ExplainOptions<'a> {
    ExplainOptions {
        pool_cap: flags.pool_cap,
        metric: match flags.metric {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::Cosine => DistanceMetric::Cosine,
        },
        external,
    }
}

#[derive(Serialize)]
struct TraceOut<'a> {
    format: &'static str,
    #[serde(flatten)]
    trace: &'a ExplanationTrace,
}

fn explain_cmd(a: &ExplainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.checker.pool_cap == 0 {
        return Err(Failure::Usage("--pool-cap must be positive".into()));
    }
    let corpus = load_corpus(&a.corpus)?;
    let loaded = LoadedChecker::load(&a.checker, &corpus, a.seed)?;
    let external = load_external(&a.checker)?;
    let opts = explain_options(&a.checker, external.as_ref());
    let checker = loaded.checker();
    let run_one = |id: &str| explain(&corpus, id, a.counter_class.as_deref(), &checker, &opts);

    match &a.image {
        Some(id) => {
            let trace = run_one(id)?;
            writeln!(out, "{}", trace.explanation.sentence)?;
            let json = serde_json::to_string_pretty(&TraceOut {
                format: TRACE_FORMAT,
                trace: &trace,
            })
            .map_err(Error::from)?;
            writeln!(out, "{json}")?;
        }
        None => {
            let mut ids: Vec<&str> = corpus.records().iter().map(|r| r.id.as_str()).collect();
            ids.sort_unstable();
            let traces = parallel_map(&ids, a.jobs, |id| run_one(id))?;
            for trace in &traces {
                writeln!(out, "{}", trace.explanation.sentence)?;
                let json = serde_json::to_string(&TraceOut {
                    format: TRACE_FORMAT,
                    trace,
                })
                .map_err(Error::from)?;
                writeln!(out, "{json}")?;
            }
        }
    }
    Ok(())
}

/// Maps `f` over `items` with up to `jobs` threads, keeping input order.
fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>, Error>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, Error> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    let parts: Vec<Result<Vec<R>, Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>, Error>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn eval_cmd(a: &EvalArgs, err: &mut dyn Write) -> Result<(), Failure> {
    if a.checker.pool_cap == 0 {
        return Err(Failure::Usage("--pool-cap must be positive".into()));
    }
    let corpus = load_corpus(&a.corpus)?;
    let loaded = LoadedChecker::load(&a.checker, &corpus, a.seed)?;
    let clf = SentenceClassifier::load(&a.sentclf)?;
    let external = load_external(&a.checker)?;
    let opts = EvalOptions {
        seed: a.seed,
        match_mode: match a.match_mode {
            MatchArg::ExactNp => MatchMode::ExactNp,
            MatchArg::Substring => MatchMode::Substring,
        },
        jobs: a.jobs,
        explain: explain_options(&a.checker, external.as_ref()),
    };
    let report = run_eval(&corpus, &loaded.checker(), &clf, &opts)?;
    report.save(&a.out)?;
    writeln!(
        err,
        "phrase_error {:.4} acc_without_cf {:.4} acc_with_cf {:.4} ({} images)",
        report.phrase_error, report.acc_without_cf, report.acc_with_cf, report.n_images
    )?;
    Ok(())
}
