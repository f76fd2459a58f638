//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a flat `key = value` file whose
//! entries act as if given as `--key value` before the command-line flags;
//! flags given on the command line win. `key = true` sets a switch.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! data errors, 3 when a gradient check fails.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::attention::{AttentionVariant, IntraQuery};
use crate::corpus::{
    build_vocab, generate_synthetic, load_corpus, load_unlabeled, marker_oracle, split_stratified,
    to_records, GroundTruth, Label, RawUser, SplitSpec, Splits, SyntheticConfig, DEFAULT_MAX_LEN,
    DEFAULT_MAX_VOCAB, DEFAULT_SAMPLE_K,
};
use crate::embeddings::{train_skipgram, EmbeddingMatrix, SkipGramConfig};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::models::{read_model_header, ModelBundle, ModelConfig, ModelKind};
use crate::numcore::{check_tiny_model, Real};
use crate::training::{evaluate, fit, predict_users, AdamConfig, ClassWeighting, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "docset",
    version,
    about = "Risk detection over sets of user writings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Train skip-gram embeddings on the training partitions of a corpus.
    Embed(EmbedArgs),
    /// Train a model and write its best checkpoint and the epoch log.
    Train(TrainArgs),
    /// Score a checkpoint (or the marker oracle) on one split.
    Eval(EvalArgs),
    /// Print a probability and label for every user of a corpus.
    Predict(PredictArgs),
    /// Compare reverse-mode and finite-difference gradients on tiny models.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value file with default flag values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 0.15)]
    positive_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    marker_rate: f64,
    #[arg(long, default_value_t = 200)]
    filler_vocab: usize,
    #[arg(long, default_value_t = 40)]
    min_writings: usize,
    #[arg(long, default_value_t = 40)]
    max_writings: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_VOCAB)]
    max_vocab: usize,
    /// Seed of the train/validation/test split (must match `train`).
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Use every user instead of the training and validation partitions.
    #[arg(long)]
    all_users: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value = "ida")]
    kind: ModelKind,
    /// general, dot, location, additive, cosine or none. Defaults to
    /// general for ida/iida and none otherwise.
    #[arg(long)]
    attention: Option<String>,
    #[arg(long, default_value_t = 80)]
    hidden: usize,
    /// Width of the additive scorer (defaults to the hidden width).
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long, default_value = "previous")]
    intra_query: IntraQuery,
    #[arg(long)]
    fine_tune_embeddings: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_K)]
    sample_k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Weighting {
    Inverse,
    Uniform,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    model: PathBuf,
    /// Epoch log output path (JSON lines).
    #[arg(long)]
    log: PathBuf,
    #[command(flatten)]
    model_args: ModelArgs,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Global gradient norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, value_enum, default_value = "inverse")]
    class_weighting: Weighting,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    /// Record per-epoch wall time in the log (makes logs differ between runs).
    #[arg(long)]
    log_wall_time: bool,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    embeddings: Option<PathBuf>,
    #[arg(long, required_unless_present = "oracle")]
    model: Option<PathBuf>,
    /// Score the marker oracle of a synthetic corpus instead of a model.
    #[arg(long, value_name = "TRUTH_JSON")]
    oracle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitName,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PredictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Check a single kind instead of all four.
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    attention: Option<String>,
    #[arg(long, default_value = "previous")]
    intra_query: IntraQuery,
    #[arg(long, default_value_t = 4)]
    embed_dim: usize,
    #[arg(long, default_value_t = 6)]
    hidden: usize,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Usage(String),
    Data(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument { .. } => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("error: {msg}");
            EXIT_VERIFY
        }
    }
}

/// Splices the entries of `--config FILE` in right after the subcommand.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                path = Some(PathBuf::from(
                    it.next().ok_or("`--config` needs a file path")?,
                ));
            }
            Some(s) if s.starts_with("--config=") => {
                path = Some(PathBuf::from(&s["--config=".len()..]))
            }
            _ => rest.push(a),
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("config {}: {e}", path.display()))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            format!(
                "config {} line {}: expected key = value",
                path.display(),
                i + 1
            )
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => extra.push(flag.into()),
            "false" => {}
            v => {
                extra.push(flag.into());
                extra.push(v.into());
            }
        }
    }
    let at = rest.len().min(2);
    rest.splice(at..at, extra);
    Ok(rest)
}

fn with_threads<F: FnOnce() -> std::result::Result<(), Failure> + Send>(
    threads: Option<usize>,
    f: F,
) -> std::result::Result<(), Failure> {
    match threads {
        None => f(),
        Some(0) => Err(Failure::Usage(
            "invalid argument `threads`: must be at least 1".into(),
        )),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth(a) => with_threads(a.common.threads, || synth(&a)),
        Command::Embed(a) => with_threads(a.common.threads, || embed(&a)),
        Command::Train(a) => with_threads(a.common.threads, || match a.precision {
            Precision::F64 => train::<f64>(&a),
            Precision::F32 => train::<f32>(&a),
        }),
        Command::Eval(a) => with_threads(a.common.threads, || eval(&a)),
        Command::Predict(a) => with_threads(a.common.threads, || predict(&a)),
        Command::Gradcheck(a) => with_threads(a.common.threads, || gradcheck(&a)),
    }
}

fn emit(value: serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{value}");
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(a: &SynthArgs) -> std::result::Result<(), Failure> {
    let config = SyntheticConfig {
        n_users: a.users,
        positive_fraction: a.positive_fraction,
        marker_rate: a.marker_rate,
        vocab_size: a.filler_vocab,
        min_writings: a.min_writings,
        max_writings: a.max_writings,
        min_len: a.min_len,
        max_len: a.max_len,
    };
    let (users, truth) = generate_synthetic(&config, &mut crate::rng(a.common.seed))?;
    crate::corpus::write_corpus(&a.out, &users)?;
    truth.save(&a.truth)?;
    emit(json!({
        "users": users.len(),
        "positive": truth.positive_users.len(),
        "corpus": a.out,
        "truth": a.truth,
    }));
    Ok(())
}

fn split(raw: Vec<RawUser>, seed: u64) -> Result<Splits<RawUser>> {
    split_stratified(&raw, &SplitSpec::with_seed(seed))
}

fn embed(a: &EmbedArgs) -> std::result::Result<(), Failure> {
    let raw = load_corpus(&a.corpus)?;
    let users = if a.all_users {
        raw
    } else {
        let s = split(raw, a.split_seed)?;
        s.train.into_iter().chain(s.validation).collect()
    };
    let vocab = build_vocab(&users, a.max_vocab)?;
    let sentences: Vec<Vec<u32>> = users
        .iter()
        .flat_map(|u| u.writings.iter().map(|w| vocab.encode(w)))
        .collect();
    let config = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        ..SkipGramConfig::default()
    };
    let matrix = train_skipgram(
        &sentences,
        vocab.len(),
        &config,
        &mut crate::rng(a.common.seed),
    )?;
    matrix.save(&a.out, &vocab)?;
    emit(json!({ "vocab": vocab.len(), "dim": matrix.dim(), "out": a.out }));
    Ok(())
}

fn model_config(m: &ModelArgs, embed_dim: usize) -> Result<ModelConfig> {
    let mut c = ModelConfig::new(m.kind);
    c.embed_dim = embed_dim;
    c.hidden_dim = m.hidden;
    c.attention_dim = m.attention_dim.unwrap_or(m.hidden);
    c.intra_query = m.intra_query;
    c.fine_tune_embeddings = m.fine_tune_embeddings;
    c.max_len = m.max_len;
    c.sample_k = m.sample_k;
    if let Some(a) = &m.attention {
        c.attention = parse_attention(a)?;
    }
    c.validate()?;
    Ok(c)
}

fn parse_attention(s: &str) -> Result<Option<AttentionVariant>> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn train<T: Real>(a: &TrainArgs) -> std::result::Result<(), Failure> {
    let (vocab, emb) = EmbeddingMatrix::load(&a.embeddings)?;
    let config = model_config(&a.model_args, emb.dim())?;
    if a.batch_size == 0 {
        return Err(Failure::Usage(
            "invalid argument `batch_size`: must be at least 1".into(),
        ));
    }
    let parts = split(load_corpus(&a.corpus)?, a.split_seed)?;
    let train_users = to_records(&parts.train, &vocab);
    let val_users = to_records(&parts.validation, &vocab);
    let model = ModelBundle::<T>::new(config, &emb, a.common.seed)?;
    let train_config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        adam: AdamConfig {
            learning_rate: a.learning_rate,
            ..AdamConfig::default()
        },
        class_weighting: match a.class_weighting {
            Weighting::Inverse => ClassWeighting::Inverse,
            Weighting::Uniform => ClassWeighting::Uniform,
        },
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
    };
    let outcome = match fit(&train_config, model, &train_users, &val_users) {
        Ok(o) => o,
        Err(Error::Diverged { epoch, log }) => {
            write_file(&a.log, &log.to_jsonl(a.log_wall_time))?;
            return Err(Failure::Data(Error::Diverged { epoch, log }));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.model.save(&a.model)?;
    write_file(&a.log, &outcome.log.to_jsonl(a.log_wall_time))?;
    emit(json!({
        "epochs": outcome.log.epochs.len(),
        "best_epoch": outcome.log.best_epoch,
        "best_val_f1": outcome.log.best_f1(),
        "model": a.model,
        "log": a.log,
    }));
    Ok(())
}

fn load_and<R>(
    model: &Path,
    emb: &EmbeddingMatrix,
    f64_case: impl FnOnce(&ModelBundle<f64>) -> Result<R>,
    f32_case: impl FnOnce(&ModelBundle<f32>) -> Result<R>,
) -> Result<R> {
    match read_model_header(model)?.precision.as_str() {
        "f32" => f32_case(&ModelBundle::<f32>::load(model, emb)?),
        _ => f64_case(&ModelBundle::<f64>::load(model, emb)?),
    }
}

fn eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let parts = split(load_corpus(&a.corpus)?, a.split_seed)?;
    let users: Vec<RawUser> = match a.split {
        SplitName::Train => parts.train,
        SplitName::Validation => parts.validation,
        SplitName::Test => parts.test,
        SplitName::All => parts
            .train
            .into_iter()
            .chain(parts.validation)
            .chain(parts.test)
            .collect(),
    };
    let metrics = if let Some(truth) = &a.oracle {
        let truth = GroundTruth::load(truth)?;
        let predicted = marker_oracle(&truth, &users);
        let actual: Vec<bool> = users.iter().map(|u| u.label == Some(Label::Risk)).collect();
        Metrics::from_predictions(&predicted, &actual)?
    } else {
        let (Some(emb_path), Some(model_path)) = (&a.embeddings, &a.model) else {
            return Err(Failure::Usage(
                "`--embeddings` and `--model` are required without `--oracle`".into(),
            ));
        };
        let (vocab, emb) = EmbeddingMatrix::load(emb_path)?;
        let records = to_records(&users, &vocab);
        load_and(
            model_path,
            &emb,
            |m| evaluate(m, &records),
            |m| evaluate(m, &records),
        )?
    };
    let split_name = format!("{:?}", a.split).to_lowercase();
    let mut record = serde_json::to_value(metrics).expect("metrics serialize");
    record["split"] = json!(split_name);
    record["users"] = json!(users.len());
    emit(record);
    let c = metrics.confusion;
    eprintln!("split      {split_name} ({} users)", users.len());
    eprintln!("           predicted RISK  predicted NO_RISK");
    eprintln!("RISK       {:>14}  {:>17}", c.tp, c.fn_);
    eprintln!("NO_RISK    {:>14}  {:>17}", c.fp, c.tn);
    eprintln!("precision  {:.4}", metrics.precision);
    eprintln!("recall     {:.4}", metrics.recall);
    eprintln!("f1         {:.4}", metrics.f1);
    Ok(())
}

fn predict(a: &PredictArgs) -> std::result::Result<(), Failure> {
    let raw = load_unlabeled(&a.corpus)?;
    let (vocab, emb) = EmbeddingMatrix::load(&a.embeddings)?;
    let records = to_records(&raw, &vocab);
    let probs: Vec<Option<f64>> = load_and(
        &a.model,
        &emb,
        |m| predict_users(m, &records),
        |m| {
            Ok(predict_users(m, &records)?
                .into_iter()
                .map(|p| p.map(f64::from))
                .collect())
        },
    )?;
    let mut out = std::io::stdout().lock();
    for (u, p) in records.iter().zip(probs) {
        let label = Label::from_positive(p.is_some_and(|p| p >= 0.5));
        let line = json!({ "user_id": u.user_id, "probability": p, "label": label });
        let _ = writeln!(out, "{line}");
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> std::result::Result<(), Failure> {
    let kinds: Vec<ModelKind> = match a.kind {
        Some(k) => vec![k],
        None => ModelKind::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for kind in kinds {
        let mut config = ModelConfig::tiny(kind, a.embed_dim, a.hidden);
        config.intra_query = a.intra_query;
        if let Some(att) = &a.attention {
            config.attention = parse_attention(att)?;
        }
        config.validate()?;
        let report = check_tiny_model(config, a.common.seed, a.tolerance)?;
        emit(json!({
            "kind": kind.as_str(),
            "max_relative_error": report.max_relative_error,
            "passed": report.passed,
            "blocks": report.blocks,
        }));
        if !report.passed {
            failed.push(kind.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_entries_come_before_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        fs::write(
            &cfg,
            "# defaults\nepochs = 3\nlog_wall_time = true\nfine-tune-embeddings = false\n",
        )
        .unwrap();
        let args = os(&[
            "docset",
            "train",
            "--epochs",
            "5",
            "--config",
            cfg.to_str().unwrap(),
        ]);
        let out = expand_config(args).unwrap();
        assert_eq!(
            out,
            os(&[
                "docset",
                "train",
                "--epochs",
                "3",
                "--log-wall-time",
                "--epochs",
                "5"
            ])
        );
    }

    #[test]
    fn later_flags_override_earlier() {
        let cli = Cli::try_parse_from(os(&[
            "docset",
            "gradcheck",
            "--hidden",
            "3",
            "--hidden",
            "5",
        ]))
        .unwrap();
        let Command::Gradcheck(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.hidden, 5);
    }

    #[test]
    fn bad_config_line_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.conf");
        fs::write(&cfg, "epochs 3\n").unwrap();
        assert_eq!(
            run(["docset", "gradcheck", "--config", cfg.to_str().unwrap()]),
            EXIT_USAGE
        );
    }

    #[test]
    fn contradictions_name_the_field() {
        let m = ModelArgs {
            kind: ModelKind::Ida,
            attention: Some("none".into()),
            hidden: 4,
            attention_dim: None,
            intra_query: IntraQuery::Previous,
            fine_tune_embeddings: false,
            max_len: 66,
            sample_k: 30,
        };
        let err = model_config(&m, 4).unwrap_err();
        assert!(err.to_string().contains("attention"));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["docset", "gradcheck", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["docset"]), EXIT_USAGE);
    }
}
